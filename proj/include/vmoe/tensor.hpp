#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vmoe/errors.hpp"

namespace vmoe {

using Shape = std::vector<int>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables recording for the lifetime of the guard (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// One recorded value. Interior nodes keep their inputs alive and know how to
// push their gradient back into them; leaves accumulate.
template <typename Scalar>
struct Node {
  Shape shape;
  Vector<Scalar> value;
  Vector<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return inputs.empty(); }

  Vector<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad = Vector<Scalar>::Zero(value.size());
    return grad;
  }
};

template <typename Scalar>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  Tensor(Shape shape, Vector<Scalar> values, bool requires_grad = false)
      : node_(std::make_shared<Node<Scalar>>()) {
    if (shape_size(shape) != static_cast<std::size_t>(values.size())) {
      throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    }
    for (int d : shape) {
      if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = static_cast<Eigen::Index>(shape_size(shape));
    return Tensor(std::move(shape), Vector<Scalar>::Zero(n), requires_grad);
  }

  static Tensor constant(Shape shape, Scalar v) {
    const auto n = static_cast<Eigen::Index>(shape_size(shape));
    return Tensor(std::move(shape), Vector<Scalar>::Constant(n, v));
  }

  static Tensor from(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false) {
    Vector<Scalar> v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (Scalar x : values) v[i++] = x;
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  Eigen::Index size() const { return node_->value.size(); }
  int rows() const { return node_->shape.size() == 1 ? 1 : node_->shape[0]; }
  int cols() const { return node_->shape.back(); }

  const Vector<Scalar>& value() const { return node_->value; }
  Vector<Scalar>& mutable_value() { return node_->value; }
  Scalar operator[](Eigen::Index i) const { return node_->value[i]; }
  Scalar item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }

  // Row-major 2-D view; rank-1 tensors are viewed as a single row.
  ConstMatrixMap<Scalar> matrix() const {
    return ConstMatrixMap<Scalar>(node_->value.data(), rows(), cols());
  }
  MatrixMap<Scalar> mutable_matrix() {
    return MatrixMap<Scalar>(node_->value.data(), rows(), cols());
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Vector<Scalar>& grad() const { return node_->grad; }
  Vector<Scalar>& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() {
    if (has_grad()) node_->grad.setZero();
  }

  // Fresh leaf with copied values; no history.
  Tensor detach() const { return Tensor(shape(), value(), false); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape(), value().template cast<Other>(), requires_grad());
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

// Builds the result node of an operation. History is recorded only when
// recording is enabled and at least one input needs a gradient.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Vector<Scalar> value,
                           std::vector<std::shared_ptr<Node<Scalar>>> inputs,
                           std::function<void(Node<Scalar>&)> backward_fn) {
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in->requires_grad;
  if (any && grad_enabled()) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<Scalar>(std::move(node));
}

// Topologically ordered record of every differentiable node reachable from a
// root. Inputs always precede the operations that consume them.
template <typename Scalar>
class Tape {
 public:
  static Tape record(const Tensor<Scalar>& root) {
    Tape tape;
    if (!root.defined() || !root.requires_grad()) return tape;
    std::unordered_set<const Node<Scalar>*> visited;
    std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node<Scalar>* child = node->inputs[next++].get();
        if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      } else {
        tape.nodes_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  const std::vector<Node<Scalar>*>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds the last node (the root) with d(root)/d(root) = 1 and replays the
  // tape in reverse. Interior gradients are recomputed from scratch on every
  // pass; leaf gradients accumulate.
  void backward() {
    if (nodes_.empty()) return;
    for (Node<Scalar>* n : nodes_) {
      if (!n->is_leaf()) n->grad = Vector<Scalar>::Zero(n->value.size());
    }
    nodes_.back()->grad_buffer().array() += Scalar(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<Scalar>* n = *it;
      if (!n->is_leaf() && n->backward_fn) n->backward_fn(*n);
    }
  }

 private:
  std::vector<Node<Scalar>*> nodes_;
};

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a tensor that is not on the tape");
  }
  Tape<Scalar>::record(loss).backward();
}

}  // namespace vmoe
