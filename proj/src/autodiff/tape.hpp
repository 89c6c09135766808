#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tensor/tensor.hpp"

namespace depthforge::ad {

class Tape;
using NodeId = std::size_t;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Called with the node's accumulated adjoint; adds into the inputs' adjoints.
using BackwardFn = std::function<void(Tape& tape, const Tensor& adjoint)>;

using Gradients = std::map<std::string, Tensor>;

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
/// order is a valid topological order. A tape is confined to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Named trainable leaf. Recording the same name twice returns the same node,
  /// so every use contributes to one gradient.
  Var parameter(const std::string& name, const Tensor& value);

  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  std::string_view op(NodeId id) const { return nodes_[id].op; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  bool requires_grad(const Var& v) const { return requires_grad(v.id()); }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `grad` into the adjoint of `target` (no-op for constants).
  void accumulate(const Var& target, const Tensor& grad);
  /// Mutable adjoint, allocated as zeros on first touch.
  Tensor& adjoint(const Var& target);

  /// Gradients of a scalar loss for every parameter recorded on this tape.
  /// Parameters the loss does not reach receive zero tensors.
  Gradients backward(const Var& loss);

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    Tensor adjoint;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> params_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

}  // namespace depthforge::ad
