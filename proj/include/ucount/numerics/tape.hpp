#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "ucount/numerics/tensor.hpp"

namespace ucount {

class Tape;

/// Handle to one node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Tensor grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
/// so walking them backwards is a valid topological order.
class Tape {
 public:
  /// Receives the gradient of the node being processed; accumulates into parents.
  using Backward = std::function<void(Tape&, std::span<const double>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Tensor value) { return push(std::move(value), true, {}); }
  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  /// Adds an operation result. The backward closure is kept only if some parent needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owner(p);
      needs = needs || nodes_[p.id_].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  /// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
  void backward(Var root) {
    check_owner(root);
    Node& r = nodes_[root.id_];
    if (r.value.size() != 1) {
      throw ShapeError("backward() needs a scalar root, got shape " + shape_str(r.value.shape()));
    }
    for (Node& n : nodes_) n.grad.clear();
    if (!r.requires_grad) return;
    grad_buffer(root.id_)[0] = 1.0;
    for (std::size_t i = root.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, std::span<const double>(n.grad));
    }
  }

  /// Gradient accumulator of a node, zero-initialized on first use.
  std::span<double> grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }

  Tensor grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
    return Tensor(n.value.shape(), n.grad);
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    AlignedBuffer grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  void check_owner(const Var& v) const {
    if (v.tape_ != this) throw ArgumentError("variable belongs to a different tape");
  }

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline Tensor Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace ucount
