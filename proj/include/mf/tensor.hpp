#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mf/errors.hpp"

namespace mf {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;

Index numel_of(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

template <typename Scalar>
struct TensorNode {
  Shape shape;
  std::vector<Scalar> data;
  // Empty until a backward pass touches this node.
  std::vector<Scalar> grad;
  bool requires_grad = false;
  bool is_leaf = true;

  std::vector<Scalar>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), Scalar(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major, channels-first tensor.
///
/// A Tensor is a handle: copies share storage, which is what lets the tape
/// refer back to inputs. Ops never write into their inputs; the only
/// mutation path is mutable_data(), reserved for leaves outside a tape
/// (parameter init, optimizer updates, test fixtures).
template <typename Scalar>
class Tensor {
 public:
  using Node = detail::TensorNode<Scalar>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() : node_(std::make_shared<Node>()) {}

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : node_(std::make_shared<Node>()) {
    for (Index d : shape) {
      if (d < 0) throw ShapeError("negative dimension in " + shape_to_string(shape));
    }
    node_->data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<Scalar> values) : node_(std::make_shared<Node>()) {
    if (static_cast<Index>(values.size()) != numel_of(shape)) {
      throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                       shape_to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Scalar(0)); }
  static Tensor full(Shape shape, Scalar v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw IndexError("axis out of range for " + shape_to_string(shape()));
    return node_->shape[static_cast<std::size_t>(axis)];
  }
  Index numel() const { return static_cast<Index>(node_->data.size()); }

  std::span<const Scalar> data() const { return node_->data; }
  std::span<Scalar> mutable_data() { return node_->data; }
  const std::vector<Scalar>& values() const { return node_->data; }

  Scalar operator[](Index i) const { return node_->data[static_cast<std::size_t>(i)]; }
  Scalar item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
    return node_->data[0];
  }
  Scalar at(std::initializer_list<Index> idx) const { return node_->data[offset(idx)]; }
  void set(std::initializer_list<Index> idx, Scalar v) { node_->data[offset(idx)] = v; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return node_->is_leaf; }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<const Scalar> grad() const { return node_->grad; }
  std::span<Scalar> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.assign(node_->data.size(), Scalar(0)); }
  Tensor grad_tensor() const {
    if (!has_grad()) return Tensor(shape());
    return Tensor(shape(), node_->grad);
  }

  /// Copy of the values with no gradient history.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  /// 2-D views; the tensor must be rank 2.
  ConstMatrixMap matrix() const {
    if (rank() != 2) throw ShapeError("matrix() needs rank 2, got " + shape_to_string(shape()));
    return ConstMatrixMap(node_->data.data(), shape()[0], shape()[1]);
  }

  const std::shared_ptr<Node>& node() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::size_t offset(std::initializer_list<Index> idx) const {
    if (static_cast<Index>(idx.size()) != rank()) throw IndexError("index rank mismatch");
    std::size_t off = 0;
    std::size_t k = 0;
    for (Index i : idx) {
      const Index d = node_->shape[k++];
      if (i < 0 || i >= d) throw IndexError("index " + std::to_string(i) + " out of range " + std::to_string(d));
      off = off * static_cast<std::size_t>(d) + static_cast<std::size_t>(i);
    }
    return off;
  }

  std::shared_ptr<Node> node_;
};

/// Ordered record of differentiable ops executed while the tape is active.
///
/// Entries are appended as ops run, so the record is already in topological
/// order; backward() replays it in reverse. Each entry's closure owns the
/// activations it needs, and clear() releases all of them.
template <typename Scalar>
class Tape {
 public:
  using Node = detail::TensorNode<Scalar>;

  void record(std::shared_ptr<Node> output, std::function<void(const std::vector<Scalar>&)> backward_fn) {
    entries_.push_back(Entry{std::move(output), std::move(backward_fn)});
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  /// Reverse-mode pass from a scalar loss. Leaf gradients accumulate across
  /// calls; intermediate gradients are recomputed each time.
  void backward(const Tensor<Scalar>& loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " + shape_to_string(loss.shape()));
    }
    const Scalar one(1);
    backward(loss, std::span<const Scalar>(&one, 1));
  }

  /// Vector-Jacobian product: seeds `output` with `seed` instead of 1.
  void backward(const Tensor<Scalar>& output, std::span<const Scalar> seed) {
    if (static_cast<Index>(seed.size()) != output.numel()) throw ShapeError("seed size does not match output");
    const auto& out_node = output.node();
    if (!out_node->requires_grad) throw ContractError("backward() on a tensor that does not require grad");

    bool found = out_node->is_leaf;
    for (auto& e : entries_) {
      e.output->grad.assign(e.output->data.size(), Scalar(0));
      if (e.output == out_node) found = true;
    }
    if (!found) throw ContractError("backward() on a tensor that was not produced on this tape");

    auto& g = out_node->grad_buffer();
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];

    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      it->apply(it->output->grad);
    }
  }

 private:
  struct Entry {
    std::shared_ptr<Node> output;
    std::function<void(const std::vector<Scalar>&)> apply;
  };
  std::vector<Entry> entries_;
};

template <typename Scalar>
Tape<Scalar>*& active_tape_slot() {
  thread_local Tape<Scalar>* tape = nullptr;
  return tape;
}

template <typename Scalar>
Tape<Scalar>* active_tape() {
  return active_tape_slot<Scalar>();
}

/// Makes `tape` the recording target for the current thread while in scope.
template <typename Scalar>
class TapeScope {
 public:
  explicit TapeScope(Tape<Scalar>& tape) : previous_(active_tape_slot<Scalar>()) { active_tape_slot<Scalar>() = &tape; }
  ~TapeScope() { active_tape_slot<Scalar>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Scalar>* previous_;
};

/// Backward on the thread's active tape.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  Tape<Scalar>* tape = active_tape<Scalar>();
  if (tape == nullptr) throw ContractError("backward() without an active tape");
  tape->backward(loss);
}

}  // namespace mf
