#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dcnas/tensor.hpp"

namespace dcnas {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

/// Records primitive applications in execution order and replays them in
/// reverse to accumulate gradients into trainable Parameters.
///
/// Nodes are appended only, so the recording order is a topological order.
/// A tape is single-owner; distinct tapes over disjoint parameters are
/// independent.
class Tape {
 public:
  /// Called during backward with the gradient of the node's output.
  using BackwardFn = std::function<void(Tape&, const std::vector<double>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding a copy of `value`; never receives gradient.
  Var constant(Tensor value);
  /// Leaf referring to `value` without copying; `value` must outlive the tape.
  Var constant_ref(const Tensor& value);
  /// Leaf bound to a Parameter; gradient flows iff the parameter is trainable.
  Var parameter(Parameter& p);

  /// Appends an op output. `backward` may be empty when no input needs grad.
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient buffer of `v` during backward, or nullptr when `v` needs no grad.
  double* grad_buffer(Var v);

  /// Reverse sweep from a scalar root. Node gradients are reset on each call;
  /// parameter gradients accumulate across calls.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Parameter* param = nullptr;
    bool requires_grad = false;
    std::vector<double> grad;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

}  // namespace dcnas
