#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xcnn/error.hpp"

namespace xcnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Whether ops on the calling thread record backward edges.
bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the grads of `inputs`.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T{0});
  }
};

}  // namespace detail

/// Dense row-major tensor handle. Copies share the underlying node, so a
/// parameter updated in place is seen by every handle to it.
///
/// T is float for the standard precision mode and double for the wide mode.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;
  using NodePtr = std::shared_ptr<NodeType>;
  using BackwardFn = std::function<void(NodeType&)>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Direct write access; used by optimizers and finite-difference checks.
  std::span<T> mutable_data() { return node_->data; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value);
  bool is_leaf() const { return node_->is_leaf(); }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad();
  void zero_grad() { node_->grad.clear(); }
  const char* op() const { return node_->op; }

  /// Reverse pass from this scalar; leaf grads accumulate across calls.
  void backward() const;

  /// Copy of the values with no graph history.
  Tensor detach() const;

  /// Creates an op output. The backward closure is attached only when
  /// recording is enabled and some input requires a gradient.
  static Tensor make_result(Shape shape, std::vector<T> data,
                            const std::vector<Tensor>& inputs, const char* op,
                            BackwardFn backward);

  const NodePtr& node() const { return node_; }

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  NodePtr node_;
};

/// Ordered record of the graph reachable from a root. Nodes appear in
/// topological order (inputs before consumers); replay runs it in reverse.
template <typename T>
class GradTape {
 public:
  using NodePtr = typename Tensor<T>::NodePtr;

  static GradTape record(const Tensor<T>& root);

  std::size_t size() const { return order_.size(); }
  std::span<const NodePtr> nodes() const { return order_; }

  void backward();

 private:
  NodePtr root_;
  std::vector<NodePtr> order_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class GradTape<float>;
extern template class GradTape<double>;
extern template class Tensor<long double>;
extern template class GradTape<long double>;

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace xcnn
