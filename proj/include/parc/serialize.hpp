#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "parc/tensor.hpp"

namespace parc::io {

// PTNS tensor blob: magic "PTNS", u8 version=1, u8 dtype (0=f32, 1=f64, 2=u32),
// u8 ndim, ndim x u32 little-endian dims, raw little-endian data.
void write_ptns(std::ostream& os, const Tensor& t);
// base_offset shifts the byte offsets reported in FormatError messages (used
// when a PTNS blob is embedded inside a larger file).
Tensor read_ptns(std::istream& is, std::size_t base_offset = 0);

void save_ptns(const std::string& path, const Tensor& t);
Tensor load_ptns(const std::string& path);  // rejects trailing bytes

// PCKP checkpoint: magic "PCKP", u8 version=1, u32 entry count, entries of
// (u32 name length, UTF-8 name, PTNS blob), trailing u32 step counter.
struct CheckpointFile {
  std::vector<std::pair<std::string, Tensor>> entries;
  std::uint32_t step = 0;

  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;  // ContractError if absent
};

void save_pckp(const std::string& path, const CheckpointFile& ckpt);
CheckpointFile load_pckp(const std::string& path);

}  // namespace parc::io
