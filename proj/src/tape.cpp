#include "dcnas/tape.hpp"

#include <algorithm>

namespace dcnas {

const Tensor& Var::value() const { return tape->value(*this); }

bool Var::requires_grad() const { return tape->requires_grad(*this); }

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant_ref(const Tensor& value) {
  Node node;
  node.external = &value;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  Node node;
  node.external = &p.value;
  node.param = &p;
  node.requires_grad = p.trainable();
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape != this) throw Error("tape: input recorded on a different tape");
    if (nodes_[in.id].requires_grad) node.requires_grad = true;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.external ? *n.external : n.value;
}

double* Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(value(v).numel(), 0.0);
  return n.grad.data();
}

void Tape::backward(Var root) {
  if (root.tape != this) throw Error("backward: root belongs to a different tape");
  if (value(root).numel() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + value(root).shape().str());
  }
  for (Node& n : nodes_) n.grad.clear();
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].grad.assign(1, 1.0);

  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.param != nullptr) {
      if (n.param->trainable()) {
        double* g = n.param->grad.data();
        for (std::size_t k = 0; k < n.grad.size(); ++k) g[k] += n.grad[k];
      }
    } else if (n.backward) {
      // The callback may allocate grads of earlier nodes; keep a stable copy of ours.
      std::vector<double> out_grad = std::move(n.grad);
      n.backward(*this, out_grad);
      nodes_[i].grad = std::move(out_grad);
    }
  }
}

}  // namespace dcnas
