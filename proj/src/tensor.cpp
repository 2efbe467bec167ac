#include "flowgen/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "flowgen/errors.hpp"

namespace flowgen {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

template <typename T>
void TensorNode<T>::accumulate(std::span<const T> g) {
  if (grad.empty()) {
    grad.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

template <typename T>
std::span<T> TensorNode<T>::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), T(0));
  return grad;
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool enabled) { g_grad_enabled = enabled; }

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, std::vector<BasicTensor<T>> inputs,
                           const char* op, std::function<void(TensorNode<T>&)> backward) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->seq = next_sequence();
  node->op = op;
  node->is_leaf = false;
  const bool needs = grad_enabled() && std::any_of(inputs.begin(), inputs.end(), [](const BasicTensor<T>& t) {
                       return t.defined() && t.requires_grad();
                     });
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) {
      if (in.defined()) node->inputs.push_back(in.node());
    }
    node->backward = std::move(backward);
  } else {
    node->is_leaf = true;
  }
  return BasicTensor<T>(std::move(node));
}

}  // namespace detail

namespace {

template <typename T>
detail::NodePtr<T> make_leaf(Shape shape, std::vector<T> data, bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
  }
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_to_string(shape));
  }
  auto node = std::make_shared<detail::TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->seq = detail::next_sequence();
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->data.size(), T(0));
  return node;
}

template <typename T>
const detail::TensorNode<T>& checked(const detail::NodePtr<T>& node) {
  if (!node) throw ContractError("use of an undefined tensor");
  return *node;
}

}  // namespace

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = static_cast<std::size_t>(std::max<std::int64_t>(shape_numel(shape), 0));
  return BasicTensor(make_leaf<T>(std::move(shape), std::vector<T>(n, T(0)), requires_grad));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = static_cast<std::size_t>(std::max<std::int64_t>(shape_numel(shape), 0));
  return BasicTensor(make_leaf<T>(std::move(shape), std::vector<T>(n, value), requires_grad));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  return BasicTensor(make_leaf<T>(std::move(shape), std::move(data), requires_grad));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

template <typename T>
const Shape& BasicTensor<T>::shape() const {
  return checked(node_).shape;
}

template <typename T>
int BasicTensor<T>::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

template <typename T>
std::int64_t BasicTensor<T>::numel() const {
  return static_cast<std::int64_t>(checked(node_).data.size());
}

template <typename T>
std::span<const T> BasicTensor<T>::data() const {
  return checked(node_).data;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_data() {
  checked(node_);
  if (!node_->is_leaf) throw ContractError("mutable_data() is only available on leaf tensors");
  return node_->data;
}

template <typename T>
T BasicTensor<T>::item() const {
  const auto& n = checked(node_);
  if (n.data.size() != 1) {
    throw ContractError("item() requires a single-element tensor, shape is " + shape_to_string(n.shape));
  }
  return n.data[0];
}

template <typename T>
bool BasicTensor<T>::requires_grad() const {
  return checked(node_).requires_grad;
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool flag) {
  checked(node_);
  if (!node_->is_leaf) throw ContractError("set_requires_grad() is only available on leaf tensors");
  node_->requires_grad = flag;
  if (flag) {
    node_->grad.assign(node_->data.size(), T(0));
  } else {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }
}

template <typename T>
bool BasicTensor<T>::is_leaf() const {
  return checked(node_).is_leaf;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  return checked(node_).grad;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  checked(node_);
  return node_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  checked(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
const char* BasicTensor<T>::op_name() const {
  return checked(node_).op;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  const auto& n = checked(node_);
  return from_data(n.shape, n.data, false);
}

template <typename T>
void BasicTensor<T>::backward() const {
  checked(node_);
  if (node_->data.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_to_string(node_->shape));
  }
  if (!node_->requires_grad) {
    throw ContractError("backward() on a tensor that does not require gradients");
  }

  // Collect every reachable node exactly once.
  std::vector<detail::TensorNode<T>*> order;
  std::vector<detail::TensorNode<T>*> stack{node_.get()};
  std::unordered_set<const void*> seen{node_.get()};
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->seq > b->seq; });

  const T one(1);
  node_->accumulate(std::span<const T>(&one, 1));
  for (auto* n : order) {
    if (n->is_leaf || !n->backward) continue;
    if (n->grad.empty()) continue;
    n->backward(*n);
    // Interior gradients are transient so that a repeated backward() only
    // accumulates into leaves.
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

template <typename T>
std::uint64_t parameter_hash(const ParameterList<T>& params) {
  // FNV-1a, 64-bit.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& p : params) {
    mix(p.name.data(), p.name.size());
    const auto& s = p.tensor.shape();
    mix(s.data(), s.size() * sizeof(int));
    const auto d = p.tensor.data();
    mix(d.data(), d.size_bytes());
  }
  return h;
}

template struct detail::TensorNode<float>;
template struct detail::TensorNode<double>;
template class BasicTensor<float>;
template class BasicTensor<double>;
template BasicTensor<float> detail::make_result(Shape, std::vector<float>, std::vector<BasicTensor<float>>,
                                                const char*, std::function<void(TensorNode<float>&)>);
template BasicTensor<double> detail::make_result(Shape, std::vector<double>, std::vector<BasicTensor<double>>,
                                                 const char*, std::function<void(TensorNode<double>&)>);
template std::uint64_t parameter_hash(const ParameterList<float>&);
template std::uint64_t parameter_hash(const ParameterList<double>&);

}  // namespace flowgen
