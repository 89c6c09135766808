#include "autodiff/tape.hpp"

#include "util/error.hpp"

namespace depthforge::ad {

Var Tape::constant(Tensor value) {
  require_finite(value, "constant");
  nodes_.push_back(Node{"constant", std::move(value), {}, {}, {}, false});
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(const std::string& name, const Tensor& value) {
  if (auto it = params_.find(name); it != params_.end()) return {this, it->second};
  require_finite(value, "parameter '" + name + "'");
  nodes_.push_back(Node{"parameter", value, {}, {}, {}, true});
  params_.emplace(name, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  require_finite(value, op);
  Node node{op, std::move(value), {}, {}, {}, false};
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw InvalidArgument(std::string(op) + ": input recorded on a different tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Tensor& Tape::adjoint(const Var& target) {
  Node& n = nodes_[target.id()];
  if (n.adjoint.empty()) n.adjoint = Tensor::zeros_like(n.value);
  return n.adjoint;
}

void Tape::accumulate(const Var& target, const Tensor& grad) {
  if (!nodes_[target.id()].requires_grad) return;
  add_inplace(adjoint(target), grad);
}

Gradients Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw InvalidArgument("backward: loss recorded on a different tape");
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got shape " + shape_string(lv.shape()));
  if (nodes_[loss.id()].requires_grad) {
    adjoint(loss).fill(1.0);
    for (NodeId id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.adjoint.empty() || !n.backward) continue;
      n.backward(*this, n.adjoint);
    }
  }
  Gradients grads;
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    grads.emplace(name, n.adjoint.empty() ? Tensor::zeros_like(n.value) : n.adjoint);
  }
  return grads;
}

}  // namespace depthforge::ad
