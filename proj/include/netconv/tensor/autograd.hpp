#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "netconv/tensor/tensor.hpp"

namespace netconv::tensor {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::function<void(const Tensor<T>&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.dims());
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && !value.empty(); }
};

// Shared handle to a graph node. Leaves (parameters, constants) outlive tapes;
// interior nodes are kept alive by the tape while recording and by their
// consumers' backward closures.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var leaf(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }
  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  explicit operator bool() const { return static_cast<bool>(node_); }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->has_grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& dims() const { return node_->value.dims(); }

  void zero_grad() {
    if (node_->has_grad()) node_->grad.fill(T{0});
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Records interior nodes in creation order, which is a topological order.
// A non-recording tape yields the same forward values with no retained graph,
// so intermediates are freed as soon as the caller drops them.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<T>&)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  // `make_backward` is only invoked when some parent needs a gradient, so ops
  // can defer capturing saved state until it is known to be needed.
  template <typename MakeBackward>
  Var<T> record(Tensor<T> value, std::initializer_list<const Var<T>*> parents,
                MakeBackward&& make_backward) {
#ifndef NDEBUG
    for (const T v : value.values()) {
      if (!std::isfinite(v)) throw std::runtime_error("non-finite value produced by forward op");
    }
#endif
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    bool needs = false;
    if (recording_) {
      for (const Var<T>* p : parents) needs = needs || (p && p->requires_grad());
    }
    if (needs) {
      n->requires_grad = true;
      n->backward = make_backward();
      nodes_.push_back(n);
    }
    return Var<T>(std::move(n));
  }

  void backward(const Var<T>& loss) {
    if (loss.value().size() != 1 || loss.value().rank() > 1) {
      throw ShapeError("backward requires a scalar loss, got " + to_string(loss.dims()));
    }
    if (backward_done_) throw std::logic_error("backward called twice without reset");
    backward_done_ = true;
    if (!loss.requires_grad()) return;
    loss.node()->grad_buffer().fill(T{1});
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.has_grad() && n.backward) n.backward(n.grad);
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

 private:
  bool recording_;
  bool backward_done_ = false;
  std::vector<std::shared_ptr<Node<T>>> nodes_;
};

}  // namespace netconv::tensor
