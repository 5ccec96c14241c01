#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "parc/tensor.hpp"

namespace parc {

// Ordered name -> tensor registry. Insertion order is the canonical parameter
// order for initialization, optimizer walks, and checkpoints.
class ParamStore {
 public:
  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor& get(const std::string& name) const;
  void set(const std::string& name, Tensor t);  // ContractError if absent
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace parc
