#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace rlfn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// (batch, channel, height, width)
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first written
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  std::span<T> ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Handle to a 4-D array that may participate in reverse-mode differentiation.
///
/// Copies share storage. Values are fixed once an op has produced them; leaves (parameters,
/// inputs) may be written through mutable_data(), which is how optimizers update weights.
/// Training and inference use float; double exists so finite-difference oracles have headroom.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using node_type = detail::Node<T>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0)) : node_(std::make_shared<node_type>()) {
    check_dims(shape);
    node_->shape = shape;
    node_->data.assign(shape.numel(), fill);
    node_->seq = detail::next_seq();
  }

  BasicTensor(Shape shape, std::vector<T> values) : node_(std::make_shared<node_type>()) {
    check_dims(shape);
    if (values.size() != shape.numel()) {
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                       shape.str());
    }
    node_->shape = shape;
    node_->data = std::move(values);
    node_->seq = detail::next_seq();
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(shape, T(0)); }
  static BasicTensor ones(Shape shape) { return BasicTensor(shape, T(1)); }

  // Wraps an already-populated node; used by op construction.
  static BasicTensor from_node(std::shared_ptr<node_type> node) { return BasicTensor(std::move(node)); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t numel() const { return node().data.size(); }

  std::span<const T> data() const { return node().data; }

  std::span<T> mutable_data() {
    if (!node().is_leaf()) throw Error("tensor: cannot mutate the output of a recorded op");
    return node_->data;
  }

  T item() const {
    if (numel() != 1) throw ShapeError("tensor: item() on shape " + shape().str());
    return node().data[0];
  }

  T at(int n, int c, int h, int w) const {
    const Shape& s = shape();
    return node().data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
  }

  bool requires_grad() const { return node().requires_grad; }

  BasicTensor& set_requires_grad(bool flag) {
    if (!node().is_leaf()) throw Error("tensor: requires_grad can only be set on leaves");
    node_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return !node().grad.empty(); }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return node().ensure_grad(); }
  void zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }
  void clear_grad() { node().grad.clear(); }

  // Fresh leaf holding a copy of the values; never connected to any graph.
  BasicTensor detach() const { return BasicTensor(shape(), std::vector<T>(node().data)); }

  BasicTensor clone() const {
    BasicTensor out = detach();
    out.node_->requires_grad = requires_grad();
    return out;
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::span<const T> src = data();
    std::vector<U> values(src.begin(), src.end());
    BasicTensor<U> out(shape(), std::move(values));
    out.set_requires_grad(requires_grad());
    return out;
  }

  node_type& node() const {
    if (!node_) throw Error("tensor: use of undefined tensor");
    return *node_;
  }
  const std::shared_ptr<node_type>& handle() const { return node_; }

 private:
  explicit BasicTensor(std::shared_ptr<node_type> node) : node_(std::move(node)) {}

  static void check_dims(const Shape& s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
      throw ShapeError("tensor: negative dimension in shape " + s.str());
    }
  }

  std::shared_ptr<node_type> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Wraps freshly computed values as an op output. When grad mode is on and any input requires
// grad, the inputs and backward closure are recorded; otherwise the result is a plain leaf.
template <typename T>
BasicTensor<T> make_op_result(Shape shape, std::vector<T> values, std::vector<BasicTensor<T>> inputs,
                              std::function<void(detail::Node<T>&)> backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = shape;
  node->data = std::move(values);
  node->seq = detail::next_seq();
  bool track = false;
  if (detail::grad_mode()) {
    for (const auto& t : inputs) track = track || t.requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.handle());
    node->backward = std::move(backward);
  }
  return BasicTensor<T>::from_node(std::move(node));
}

/// Reverse-mode sweep from a one-element loss.
///
/// Nodes reachable through requires_grad edges are replayed in exact reverse of recording order.
/// Each sweep computes fresh gradients and then adds them to whatever the leaves already hold,
/// so two sweeps without zero_grad() leave every leaf gradient exactly doubled.
template <typename T>
void backward(const BasicTensor<T>& loss) {
  using NodeT = detail::Node<T>;
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + loss.shape().str());
  if (!loss.requires_grad()) throw Error("backward: loss is not connected to any tensor requiring grad");

  std::vector<NodeT*> tape;
  std::unordered_set<NodeT*> seen;
  std::vector<NodeT*> stack{&loss.node()};
  seen.insert(&loss.node());
  while (!stack.empty()) {
    NodeT* n = stack.back();
    stack.pop_back();
    tape.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(tape.begin(), tape.end(), [](const NodeT* a, const NodeT* b) { return a->seq > b->seq; });

  std::vector<std::pair<NodeT*, std::vector<T>>> held;
  for (NodeT* n : tape) {
    if (n->is_leaf() && !n->grad.empty()) held.emplace_back(n, std::move(n->grad));
    n->grad.assign(n->data.size(), T(0));
  }
  loss.node().grad[0] = T(1);
  for (NodeT* n : tape) {
    if (!n->is_leaf()) n->backward(*n);
  }
  for (auto& [n, previous] : held) {
    for (std::size_t i = 0; i < previous.size(); ++i) n->grad[i] = previous[i] + n->grad[i];
  }
}

}  // namespace rlfn
