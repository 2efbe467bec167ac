#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace flowgen {

/// Ordered list of positive extents. 5-D data uses batch x channels x depth x
/// height x width.
using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

template <typename T>
class BasicTensor;

namespace detail {

template <typename T>
struct TensorNode;

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// One record of the define-by-run graph. Every tensor owns exactly one node;
// leaves have no backward function. `seq` increases with creation order, so
// sorting reachable nodes by descending `seq` is a valid reverse topological
// order.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<NodePtr<T>> inputs;
  std::function<void(TensorNode&)> backward;

  // Adds `g` into this node's gradient, allocating it on first use.
  void accumulate(std::span<const T> g);
  std::span<T> grad_buffer();
};

std::uint64_t next_sequence();

bool grad_enabled();
void set_grad_enabled(bool enabled);

}  // namespace detail

/// While alive, operations on the current thread record no history.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled()) { detail::set_grad_enabled(false); }
  ~NoGradGuard() { detail::set_grad_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor with reverse-mode autodiff. Copies share the same
/// underlying node; values are immutable once created except through
/// `mutable_data()` on leaves (used by optimizers between steps).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int axis) const;
  std::int64_t numel() const;

  std::span<const T> data() const;
  /// Writable view of a leaf's values. Throws ContractError on graph results.
  std::span<T> mutable_data();
  T item() const;
  T at(std::int64_t flat_index) const { return data()[static_cast<std::size_t>(flat_index)]; }

  bool requires_grad() const;
  /// Only valid on leaves; allocates or drops the gradient accumulator.
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  /// Gradient accumulator. Empty span when no gradient has been allocated.
  std::span<const T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// Accumulates d(this)/d(leaf) into every reachable leaf that requires a
  /// gradient. `this` must hold exactly one element.
  void backward() const;

  /// New leaf with a copy of the values and no history.
  BasicTensor detach() const;

  const char* op_name() const;

  // Graph plumbing for operation implementations.
  explicit BasicTensor(detail::NodePtr<T> node) : node_(std::move(node)) {}
  const detail::NodePtr<T>& node() const { return node_; }

 private:
  detail::NodePtr<T> node_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

namespace detail {

/// Creates an operation result. The backward closure is kept only if at least
/// one input requires a gradient; otherwise the result is a constant leaf.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           std::vector<BasicTensor<T>> inputs, const char* op,
                           std::function<void(TensorNode<T>&)> backward);

}  // namespace detail

/// Parameter handle with a stable, dotted name used by checkpoints.
template <typename T>
struct NamedParameter {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

/// Order-sensitive hash over parameter names, shapes and raw value bytes.
template <typename T>
std::uint64_t parameter_hash(const ParameterList<T>& params);

}  // namespace flowgen
