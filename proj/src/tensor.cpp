#include "nvist/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace nvist {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::Node<T>>()) {
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::Node<T>>()) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, Rng& rng, T stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, Rng& rng, T lo, T hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
std::size_t Tensor<T>::size(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  if (node_->recorded() && !flag) throw ContractError("cannot clear requires_grad on a recorded result");
  node_->requires_grad = flag;
  return *this;
}

template <typename T>
void Tensor<T>::zero_grad() const {
  node_->grad.assign(node_->data.size(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), node_->data);
}

template <typename T>
void Tensor<T>::backward() const {
  ComputationRecord<T>(*this).backward();
}

// ---------------------------------------------------------------------------

template <typename T>
ComputationRecord<T>::ComputationRecord(const Tensor<T>& root) : root_(root) {
  using NodePtr = std::shared_ptr<detail::Node<T>>;
  std::unordered_set<const detail::Node<T>*> visited;
  // Iterative post-order DFS; a node is emitted after all of its inputs.
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  if (root.node()->recorded()) stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodePtr child = node->inputs[next++];
      if (child->recorded() && visited.insert(child.get()).second) stack.emplace_back(child, 0);
      continue;
    }
    ops_.push_back(node);
    stack.pop_back();
  }
}

template <typename T>
std::vector<std::string> ComputationRecord<T>::op_names() const {
  std::vector<std::string> names;
  names.reserve(ops_.size());
  for (const auto& op : ops_) names.emplace_back(op->op);
  return names;
}

template <typename T>
void ComputationRecord<T>::replay() {
  for (const auto& op : ops_) op->forward(*op);
}

template <typename T>
void ComputationRecord<T>::backward() {
  auto& root = *root_.node();
  if (root.data.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) return;
  for (const auto& op : ops_) op->grad.assign(op->data.size(), T(0));
  root.ensure_grad()[0] += T(1);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)->backward(**it);
}

template class Tensor<float>;
template class Tensor<double>;
template class ComputationRecord<float>;
template class ComputationRecord<double>;

// ---------------------------------------------------------------------------

GradcheckResult gradcheck_detailed(const std::function<Tensor<double>()>& f, const std::vector<Tensor<double>>& params,
                                   double epsilon, Stencil stencil) {
  for (const auto& p : params) p.zero_grad();
  Tensor<double> loss = f();
  if (loss.numel() != 1) throw ContractError("gradcheck requires a scalar-valued function");
  loss.backward();

  GradcheckResult r;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<double> p = params[k];
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto at = [&](double offset) {
        values[i] = saved + offset;
        return f().item();
      };
      double numeric = 0.0;
      if (stencil == Stencil::Central3) {
        numeric = (at(epsilon) - at(-epsilon)) / (2.0 * epsilon);
      } else {
        numeric = (8.0 * (at(epsilon) - at(-epsilon)) - (at(2.0 * epsilon) - at(-2.0 * epsilon))) / (12.0 * epsilon);
      }
      values[i] = saved;
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      const double err = std::abs(analytic[i] - numeric) / denom;
      ++r.coordinates;
      if (r.coordinates == 1 || err > r.max_error) {
        r.max_error = err;
        r.param = k;
        r.index = i;
        r.analytic = analytic[i];
        r.numeric = numeric;
      }
    }
  }
  return r;
}

double gradcheck(const std::function<Tensor<double>()>& f, const std::vector<Tensor<double>>& params,
                 double epsilon, Stencil stencil) {
  return gradcheck_detailed(f, params, epsilon, stencil).max_error;
}

double gradcheck(const std::function<Tensor<double>()>& f, const Tensor<double>& x, double epsilon) {
  return gradcheck(f, std::vector<Tensor<double>>{x}, epsilon);
}

}  // namespace nvist
