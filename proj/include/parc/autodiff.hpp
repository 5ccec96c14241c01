#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "parc/ops.hpp"
#include "parc/parc_ops.hpp"
#include "parc/tensor.hpp"

namespace parc::autodiff {

struct Var {
  int id = -1;
};

// Reverse-mode tape. Nodes are appended in evaluation order (inputs always
// precede consumers); backward walks them in reverse. With recording=false the
// tape only computes forward values, which keeps train and eval on one path.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Var leaf(Tensor t);                             // grad-tracked input
  Var constant(Tensor t);                         // not differentiated through
  Var param(const std::string& name, Tensor t);   // leaf + registry entry

  const Tensor& value(Var v) const;
  bool recording() const { return recording_; }

  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var sigmoid(Var a);
  Var silu(Var a);
  Var sum(Var a);
  Var reshape(Var a, std::vector<std::size_t> dims);
  Var conv2d(Var x, Var k, std::optional<Var> bias, ops::Stride stride, ops::Pad pad,
             std::size_t groups);
  Var linear(Var x, Var w, std::optional<Var> bias);
  Var group_norm(Var x, std::size_t groups, Var gamma, Var beta, double eps);
  Var concat(const std::vector<Var>& xs, std::size_t axis);
  Var slice(Var x, std::size_t axis, std::size_t start, std::size_t len);
  Var global_avg_pool(Var x);
  Var resize_rows(Var base, std::size_t target_len);
  Var circular_conv(Var x, Var k, Orientation orient);
  Var add_line_embedding(Var x, Var pe, Orientation orient);
  Var scale_channels(Var x, Var gate);
  // No gradient flows to the targets operand.
  Var softmax_cross_entropy(Var logits, Var targets);

  void backward(Var loss);  // loss must be scalar

  Tensor grad(Var v) const;                  // exact zeros when unreachable
  Tensor grad(const std::string& name) const;
  const std::vector<std::pair<std::string, int>>& params() const { return params_; }

 private:
  friend struct TapeAccess;
  struct Node {
    Tensor value;
    bool wants_grad = false;
    std::function<void(Tape&, const Tensor&)> backward;
  };

  int push(Tensor value, bool wants_grad, std::function<void(Tape&, const Tensor&)> bw);
  bool wants(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].wants_grad; }
  void accum(Var v, const Tensor& delta);

  bool recording_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<std::pair<std::string, int>> params_;
};

// loss_fn(tape, named param vars, input vars) -> scalar Var
using LossFn =
    std::function<Var(Tape&, const std::map<std::string, Var>&, const std::vector<Var>&)>;

// Gradients of the scalar loss with respect to every named parameter.
std::map<std::string, Tensor> grad(const LossFn& loss_fn,
                                   const std::map<std::string, Tensor>& params,
                                   const std::vector<Tensor>& inputs);

// Central-difference verification (f64 only): returns the max over checked
// coordinates of |analytic - numeric| / max(1, |numeric|). When
// max_coords_per_param > 0, large parameters are subsampled with a fixed
// stride so every region of the tensor is probed.
double finite_diff_check(const LossFn& loss_fn, const std::map<std::string, Tensor>& params,
                         const std::vector<Tensor>& inputs, double eps = 1e-5,
                         std::size_t max_coords_per_param = 0);

}  // namespace parc::autodiff
