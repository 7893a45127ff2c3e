// Dense rank-4 tensors and the tape that records differentiable operations.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace matteforge {

// ---------------------------------------------------------------------------
// errors
// ---------------------------------------------------------------------------

/// Incompatible tensor or image dimensions.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration record violates one of its invariants.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or other numeric breakdown at run time.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of the recording tape (double backward, detached loss, ...).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Shape
// ---------------------------------------------------------------------------

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  [[nodiscard]] constexpr std::size_t numel() const { return n * c * h * w; }
  [[nodiscard]] constexpr std::size_t plane() const { return h * w; }
  [[nodiscard]] constexpr bool is_scalar() const { return n == 1 && c == 1 && h == 1 && w == 1; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  [[nodiscard]] std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

inline ShapeError shape_error(const std::string& op, const Shape& a, const Shape& b) {
  return ShapeError(op + ": incompatible shapes " + a.str() + " and " + b.str());
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

/// Reference-counted handle to an NCHW buffer with an optional gradient.
///
/// Copies share storage, like framework tensors; use clone() for a deep copy.
/// The gradient buffer is allocated lazily, the first time a backward pass
/// reaches the tensor, and always has the same shape as the data.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    s_->shape = shape;
    s_->data.assign(shape.numel(), fill);
    s_->requires_grad = requires_grad;
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != shape.numel()) {
      throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                       " values do not fill shape " + shape.str());
    }
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->shape = shape;
    t.s_->data = std::move(values);
    t.s_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1, 1, 1, 1}, v, requires_grad);
  }

  [[nodiscard]] bool defined() const { return static_cast<bool>(s_); }
  [[nodiscard]] const Shape& shape() const { return s_->shape; }
  [[nodiscard]] std::size_t numel() const { return s_->data.size(); }

  [[nodiscard]] std::span<T> data() { return s_->data; }
  [[nodiscard]] std::span<const T> data() const { return s_->data; }
  [[nodiscard]] std::vector<T>& values() { return s_->data; }
  [[nodiscard]] const std::vector<T>& values() const { return s_->data; }

  [[nodiscard]] bool has_grad() const { return !s_->grad.empty(); }
  [[nodiscard]] std::span<T> grad() { return s_->grad; }
  [[nodiscard]] std::span<const T> grad() const { return s_->grad; }

  /// Allocates the gradient buffer on first use; never clears it. Handles
  /// share storage, so this is available through const handles too.
  std::span<T> ensure_grad() const {
    if (s_->grad.size() != s_->data.size()) s_->grad.assign(s_->data.size(), T(0));
    return s_->grad;
  }

  void zero_grad() const {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }
  void drop_grad() { s_->grad.clear(); }

  [[nodiscard]] bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }

  [[nodiscard]] T item() const {
    if (!s_->shape.is_scalar()) throw ShapeError("item() on non-scalar tensor " + s_->shape.str());
    return s_->data[0];
  }

  [[nodiscard]] std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    const Shape& sh = s_->shape;
    return ((n * sh.c + c) * sh.h + y) * sh.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) { return s_->data[index(n, c, y, x)]; }
  [[nodiscard]] T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return s_->data[index(n, c, y, x)];
  }

  /// Deep copy of the values; the copy carries no gradient and no graph link.
  [[nodiscard]] Tensor clone(bool requires_grad = false) const {
    return from(s_->shape, s_->data, requires_grad);
  }

  template <class U>
  [[nodiscard]] Tensor<U> cast() const {
    std::vector<U> out(s_->data.begin(), s_->data.end());
    return Tensor<U>::from(s_->shape, std::move(out));
  }

  /// Identity of the underlying storage; two handles alias iff equal.
  [[nodiscard]] const void* id() const { return s_.get(); }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

/// Tape of recorded operations for one forward pass.
///
/// Operations append a node when recording is on and at least one input
/// requires a gradient. backward() walks the nodes in exact reverse order of
/// recording, so the tape itself is the topological order. A tape may be
/// consumed once; reset() clears it for the next forward pass.
template <class T>
class Graph {
 public:
  struct Node {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::function<void()> backward;
  };

  explicit Graph(bool recording = true) : recording_(recording) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  [[nodiscard]] bool recording() const { return recording_; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] bool consumed() const { return consumed_; }
  [[nodiscard]] const std::vector<Node>& nodes() const { return nodes_; }

  [[nodiscard]] static bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
    for (const Tensor<T>* t : inputs) {
      if (t != nullptr && t->defined() && t->requires_grad()) return true;
    }
    return false;
  }

  /// True when an op over these inputs must be recorded.
  [[nodiscard]] bool tracks(std::initializer_list<const Tensor<T>*> inputs) const {
    return recording_ && any_requires_grad(inputs);
  }

  void record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T> output,
              std::function<void()> backward) {
    if (consumed_) throw GraphError("record after backward; call reset() first");
    output.set_requires_grad(true);
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output), std::move(backward)});
  }

  void backward(Tensor<T> loss) {
    if (consumed_) throw GraphError("backward called twice on the same graph without reset()");
    if (!loss.defined() || !loss.shape().is_scalar()) {
      throw GraphError("backward requires a scalar loss of shape (1,1,1,1), got " +
                       (loss.defined() ? loss.shape().str() : std::string("undefined")));
    }
    std::size_t last = nodes_.size();
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].output.id() == loss.id()) {
        last = i;
        break;
      }
    }
    if (last == nodes_.size()) {
      throw GraphError("backward on a loss that is not recorded in this graph (detached)");
    }
    for (Node& node : nodes_) {
      node.output.ensure_grad();
      node.output.zero_grad();
    }
    loss.grad()[0] = T(1);
    for (std::size_t i = last + 1; i-- > 0;) nodes_[i].backward();
    consumed_ = true;
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  std::vector<Node> nodes_;
  bool recording_ = true;
  bool consumed_ = false;
};

}  // namespace matteforge
