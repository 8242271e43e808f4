#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace nvist {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown when operand shapes are incompatible for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a caller violates an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
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
  // Recomputes `data` from the inputs' current data. Empty for leaves.
  std::function<void(Node&)> forward;
  // Accumulates this node's grad into the inputs' grads. Empty for leaves.
  std::function<void(Node&)> backward;

  bool recorded() const { return static_cast<bool>(backward); }
  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Whether newly executed operations are recorded for differentiation
/// on the calling thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor with shared-handle semantics. Copies of a Tensor
/// refer to the same storage and gradient, like a reference-counted array.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }
  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1));
  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  /// Gradient buffer, allocated (zero-filled) on first access.
  std::span<T> grad() const { return node_->ensure_grad(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const { return !node_->recorded(); }
  void zero_grad() const;

  T item() const;
  /// New leaf holding a copy of the values, disconnected from the graph.
  Tensor detach() const;

  /// Reverse-mode differentiation from a scalar tensor; gradients accumulate.
  void backward() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Topologically ordered list of the recorded operations that produced a
/// tensor. Leaves are not listed; every listed operation appears after the
/// operations producing its inputs.
template <typename T>
class ComputationRecord {
 public:
  explicit ComputationRecord(const Tensor<T>& root);

  std::size_t size() const { return ops_.size(); }
  std::vector<std::string> op_names() const;
  const std::vector<std::shared_ptr<detail::Node<T>>>& ops() const { return ops_; }

  /// Re-executes every recorded operation against current input values.
  void replay();
  void backward();

 private:
  Tensor<T> root_;
  std::vector<std::shared_ptr<detail::Node<T>>> ops_;
};

// ---------------------------------------------------------------------------
// Primitive operations. Binary elementwise ops broadcast numpy-style.

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T offset);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> sqrt(const Tensor<T>& x);
template <typename T> Tensor<T> sin(const Tensor<T>& x);
template <typename T> Tensor<T> cos(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
/// Tanh approximation of GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);

/// 2-D product [m,k]x[k,n], or batched [b,m,k]x[b,k,n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim = false);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdim = false);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T> Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t begin, std::size_t end);
/// Rows of `x` (axis 0) picked by index; repeated indices are allowed.
template <typename T> Tensor<T> index_select(const Tensor<T>& x, const std::vector<std::size_t>& rows);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);

/// Linear interpolation into `grid` [R, C] at continuous coordinates in
/// [0, R-1]; returns [S, C]. Differentiable with respect to the grid.
template <typename T>
Tensor<T> interp_line(const Tensor<T>& grid, std::type_identity_t<std::shared_ptr<const std::vector<T>>> coords);

/// Bilinear interpolation into `grid` [R, R, C] at (u, v) pairs, u indexing
/// the first axis; returns [S, C]. Differentiable with respect to the grid.
template <typename T>
Tensor<T> interp_plane(const Tensor<T>& grid, std::type_identity_t<std::shared_ptr<const std::vector<T>>> u,
                       std::type_identity_t<std::shared_ptr<const std::vector<T>>> v);

/// Parameter-free normalization over the last axis with population variance.
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, T eps = T(1e-5));

// ---------------------------------------------------------------------------
// Finite-difference verification (64-bit).

/// Central-difference stencils: (f(x+h) - f(x-h)) / 2h, error O(h^2), and
/// (8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h, error O(h^4). The wider
/// stencil tolerates a larger h, which keeps roundoff off tiny components.
enum class Stencil { Central3, Central5 };

/// Max over all coordinates of the parameters of
/// |analytic - central difference| / max(|analytic|, |numeric|, 1e-8).
double gradcheck(const std::function<Tensor<double>()>& f, const std::vector<Tensor<double>>& params,
                 double epsilon = 1e-6, Stencil stencil = Stencil::Central3);

/// Worst coordinate found by gradcheck.
struct GradcheckResult {
  double max_error = 0.0;
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};
GradcheckResult gradcheck_detailed(const std::function<Tensor<double>()>& f, const std::vector<Tensor<double>>& params,
                                   double epsilon = 1e-6, Stencil stencil = Stencil::Central3);
double gradcheck(const std::function<Tensor<double>()>& f, const Tensor<double>& x,
                 double epsilon = 1e-6);

}  // namespace nvist
