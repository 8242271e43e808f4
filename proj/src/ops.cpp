#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "nvist/tensor.h"

namespace nvist {
namespace {

template <typename T>
using NodeT = detail::Node<T>;

template <typename T, typename Fwd, typename Bwd>
Tensor<T> record(const char* op, Shape shape, const std::vector<Tensor<T>>& inputs, Fwd fwd, Bwd bwd) {
  auto node = std::make_shared<NodeT<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->data.resize(shape_numel(node->shape));
  bool needs_grad = false;
  node->inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    node->inputs.push_back(in.node());
    needs_grad = needs_grad || in.requires_grad();
  }
  fwd(*node);
  if (needs_grad && grad_enabled()) {
    node->requires_grad = true;
    node->forward = std::move(fwd);
    node->backward = std::move(bwd);
  } else {
    node->inputs.clear();
  }
  return Tensor<T>(node);
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
  bool scalar_b = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.resize(r);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  const auto sa = strides_of(a);
  const auto sb = strides_of(b);
  for (std::size_t d = 0; d < r; ++d) {
    const bool in_a = d + a.size() >= r;
    const bool in_b = d + b.size() >= r;
    const std::size_t ia = d + a.size() - r;
    const std::size_t ib = d + b.size() - r;
    const std::size_t da = in_a ? a[ia] : 1;
    const std::size_t db = in_b ? b[ib] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    p.out[d] = std::max(da, db);
    if (in_a && da == p.out[d]) p.stride_a[d] = sa[ia];
    if (in_b && db == p.out[d]) p.stride_b[d] = sb[ib];
  }
  p.scalar_b = shape_numel(b) == 1 && shape_numel(a) == shape_numel(p.out);
  return p;
}

// Calls f(i, ia, ib) for every output index with the matching input offsets.
template <typename F>
void for_each_broadcast(const Broadcast& p, std::size_t n, F&& f) {
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  if (p.scalar_b) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, std::size_t{0});
    return;
  }
  const std::size_t r = p.out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t last = p.out[r - 1];
  const std::size_t la = p.stride_a[r - 1];
  const std::size_t lb = p.stride_b[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; i += last) {
    for (std::size_t j = 0; j < last; ++j) f(i + j, ia + j * la, ib + j * lb);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * p.out[d];
      ib -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

template <typename T, typename F, typename GA, typename GB>
Tensor<T> binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f, GA grad_a, GB grad_b) {
  Broadcast plan = plan_broadcast(a.shape(), b.shape());
  Shape out = plan.out;
  return record<T>(
      name, std::move(out), {a, b},
      [plan, f](NodeT<T>& self) {
        const T* x = self.inputs[0]->data.data();
        const T* y = self.inputs[1]->data.data();
        T* o = self.data.data();
        for_each_broadcast(plan, self.data.size(),
                           [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = f(x[ia], y[ib]); });
      },
      [plan, grad_a, grad_b](NodeT<T>& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        const T* x = na.data.data();
        const T* y = nb.data.data();
        const T* o = self.data.data();
        const T* g = self.grad.data();
        if (na.requires_grad) {
          T* ga = na.ensure_grad().data();
          for_each_broadcast(plan, self.data.size(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
            ga[ia] += grad_a(x[ia], y[ib], o[i], g[i]);
          });
        }
        if (nb.requires_grad) {
          T* gb = nb.ensure_grad().data();
          for_each_broadcast(plan, self.data.size(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
            gb[ib] += grad_b(x[ia], y[ib], o[i], g[i]);
          });
        }
      });
}

template <typename T, typename F, typename G>
Tensor<T> unary(const char* name, const Tensor<T>& x, F f, G df) {
  return record<T>(
      name, x.shape(), {x},
      [f](NodeT<T>& self) {
        const auto& in = self.inputs[0]->data;
        for (std::size_t i = 0; i < in.size(); ++i) self.data[i] = f(in[i]);
      },
      [df](NodeT<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto& gi = in.ensure_grad();
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += df(in.data[i], self.data[i], self.grad[i]);
      });
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T, T g) { return g; }, [](T, T, T, T g) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T, T g) { return g; },
      [](T, T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T, T g) { return g * y; },
      [](T x, T, T, T g) { return g * x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T, T g) { return g / y; },
      [](T, T y, T o, T g) { return -g * o / y; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary<T>(
      "neg", x, [](T v) { return -v; }, [](T, T, T g) { return -g; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T, T g) { return g * factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
  return unary<T>(
      "add_scalar", x, [offset](T v) { return v + offset; }, [](T, T, T g) { return g; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  // Subgradient at exactly zero is zero.
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T, T g) { return v > T(0) ? g : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y, T g) { return g * y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T, T g) { return g / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); }, [](T, T y, T g) { return g / (T(2) * y); });
}

template <typename T>
Tensor<T> sin(const Tensor<T>& x) {
  return unary<T>(
      "sin", x, [](T v) { return std::sin(v); }, [](T v, T, T g) { return g * std::cos(v); });
}

template <typename T>
Tensor<T> cos(const Tensor<T>& x) {
  return unary<T>(
      "cos", x, [](T v) { return std::cos(v); }, [](T v, T, T g) { return -g * std::sin(v); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y, T g) { return g * y * (T(1) - y); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = T(0.044715);
  return unary<T>(
      "gelu", x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(k * (v + c * v * v * v))); },
      [](T v, T, T g) {
        const T t = std::tanh(k * (v + c * v * v * v));
        const T dt = (T(1) - t * t) * k * (T(1) + T(3) * c * v * v);
        return g * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
      });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool plain = sa.size() == 2 && sb.size() == 2;
  const bool batched = sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0];
  if ((!plain && !batched) || sa[sa.size() - 1] != sb[sb.size() - 2]) {
    throw ShapeError("matmul dimension mismatch: " + shape_str(sa) + " x " + shape_str(sb));
  }
  const std::size_t batch = plain ? 1 : sa[0];
  const Eigen::Index m = static_cast<Eigen::Index>(sa[sa.size() - 2]);
  const Eigen::Index k = static_cast<Eigen::Index>(sa[sa.size() - 1]);
  const Eigen::Index n = static_cast<Eigen::Index>(sb[sb.size() - 1]);
  Shape out = plain ? Shape{sa[0], sb[1]} : Shape{batch, sa[1], sb[2]};
  return record<T>(
      "matmul", std::move(out), {a, b},
      [=](NodeT<T>& self) {
        const T* pa = self.inputs[0]->data.data();
        const T* pb = self.inputs[1]->data.data();
        for (std::size_t i = 0; i < batch; ++i) {
          Map(self.data.data() + i * m * n, m, n).noalias() = CMap(pa + i * m * k, m, k) * CMap(pb + i * k * n, k, n);
        }
      },
      [=](NodeT<T>& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        for (std::size_t i = 0; i < batch; ++i) {
          CMap g(self.grad.data() + i * m * n, m, n);
          if (na.requires_grad) {
            Map(na.ensure_grad().data() + i * m * k, m, k).noalias() +=
                g * CMap(nb.data.data() + i * k * n, k, n).transpose();
          }
          if (nb.requires_grad) {
            Map(nb.ensure_grad().data() + i * k * n, k, n).noalias() +=
                CMap(na.data.data() + i * m * k, m, k).transpose() * g;
          }
        }
      });
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  return record<T>(
      "sum", Shape{}, {x},
      [](NodeT<T>& self) {
        const auto& in = self.inputs[0]->data;
        self.data[0] = std::accumulate(in.begin(), in.end(), T(0));
      },
      [](NodeT<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        for (T& g : in.ensure_grad()) g += self.grad[0];
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), ax);
  Shape out = x.shape();
  if (keepdim) {
    out[ax] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  return record<T>(
      "sum_axis", std::move(out), {x},
      [s](NodeT<T>& self) {
        const T* in = self.inputs[0]->data.data();
        std::fill(self.data.begin(), self.data.end(), T(0));
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t l = 0; l < s.len; ++l)
            for (std::size_t i = 0; i < s.inner; ++i) self.data[o * s.inner + i] += in[(o * s.len + l) * s.inner + i];
      },
      [s](NodeT<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.ensure_grad().data();
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t l = 0; l < s.len; ++l)
            for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.len + l) * s.inner + i] += self.grad[o * s.inner + i];
      });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(x.shape()[ax]));
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return record<T>(
      "reshape", std::move(shape), {x}, [](NodeT<T>& self) { self.data = self.inputs[0]->data; },
      [](NodeT<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto& g = in.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const Shape& in_shape = x.shape();
  const std::size_t r = in_shape.size();
  std::vector<bool> seen(r, false);
  if (order.size() != r) throw ShapeError("permute order length mismatch for " + shape_str(in_shape));
  for (std::size_t a : order) {
    if (a >= r || seen[a]) throw ShapeError("invalid permutation for " + shape_str(in_shape));
    seen[a] = true;
  }
  const auto in_strides = strides_of(in_shape);
  Shape out(r);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = in_shape[order[i]];
    src_stride[i] = in_strides[order[i]];
  }
  // offsets[i] = source offset of output element i
  auto offsets = std::make_shared<std::vector<std::size_t>>(x.numel());
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < offsets->size(); ++i) {
      (*offsets)[i] = off;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        off += src_stride[d];
        if (idx[d] < out[d]) break;
        off -= src_stride[d] * out[d];
        idx[d] = 0;
      }
    }
  }
  return record<T>(
      "permute", std::move(out), {x},
      [offsets](NodeT<T>& self) {
        const T* in = self.inputs[0]->data.data();
        for (std::size_t i = 0; i < offsets->size(); ++i) self.data[i] = in[(*offsets)[i]];
      },
      [offsets](NodeT<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.ensure_grad().data();
        for (std::size_t i = 0; i < offsets->size(); ++i) g[(*offsets)[i]] += self.grad[i];
      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b) {
  const std::size_t a = normalize_axis(axis_a, x.rank());
  const std::size_t b = normalize_axis(axis_b, x.rank());
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::swap(order[a], order[b]);
  return permute(x, order);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const std::size_t ax = normalize_axis(axis, parts[0].rank());
  Shape out = parts[0].shape();
  out[ax] = 0;
  std::vector<std::size_t> chunk;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out.size()) throw ShapeError("concat rank mismatch: " + shape_str(s) + " vs " + shape_str(out));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != ax && s[d] != out[d]) {
        throw ShapeError("concat shape mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(s));
      }
    }
    out[ax] += s[ax];
    chunk.push_back(split_axis(s, ax).len * split_axis(s, ax).inner);
  }
  const std::size_t outer = split_axis(out, ax).outer;
  const std::size_t row = std::accumulate(chunk.begin(), chunk.end(), std::size_t{0});
  return record<T>(
      "concat", std::move(out), parts,
      [chunk, outer, row](NodeT<T>& self) {
        std::size_t base = 0;
        for (std::size_t p = 0; p < chunk.size(); ++p) {
          const T* in = self.inputs[p]->data.data();
          for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(in + o * chunk[p], chunk[p], self.data.data() + o * row + base);
          base += chunk[p];
        }
      },
      [chunk, outer, row](NodeT<T>& self) {
        std::size_t base = 0;
        for (std::size_t p = 0; p < chunk.size(); ++p) {
          auto& in = *self.inputs[p];
          if (in.requires_grad) {
            T* g = in.ensure_grad().data();
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t j = 0; j < chunk[p]; ++j) g[o * chunk[p] + j] += self.grad[o * row + base + j];
          }
          base += chunk[p];
        }
      });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  if (begin > end || end > x.shape()[ax]) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                     shape_str(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), ax);
  Shape out = x.shape();
  out[ax] = end - begin;
  const std::size_t len = end - begin;
  return record<T>(
      "slice", std::move(out), {x},
      [s, begin, len](NodeT<T>& self) {
        const T* in = self.inputs[0]->data.data();
        for (std::size_t o = 0; o < s.outer; ++o)
          std::copy_n(in + (o * s.len + begin) * s.inner, len * s.inner, self.data.data() + o * len * s.inner);
      },
      [s, begin, len](NodeT<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.ensure_grad().data();
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t j = 0; j < len * s.inner; ++j)
            g[(o * s.len + begin) * s.inner + j] += self.grad[o * len * s.inner + j];
      });
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  if (x.rank() == 0) throw ShapeError("index_select on a scalar");
  const std::size_t n = x.shape()[0];
  for (std::size_t r : rows) {
    if (r >= n) throw ShapeError("row index " + std::to_string(r) + " out of range for " + shape_str(x.shape()));
  }
  const std::size_t width = n == 0 ? 0 : x.numel() / n;
  Shape out = x.shape();
  out[0] = rows.size();
  auto idx = std::make_shared<const std::vector<std::size_t>>(rows);
  return record<T>(
      "index_select", std::move(out), {x},
      [idx, width](NodeT<T>& self) {
        const T* in = self.inputs[0]->data.data();
        for (std::size_t i = 0; i < idx->size(); ++i)
          std::copy_n(in + (*idx)[i] * width, width, self.data.data() + i * width);
      },
      [idx, width](NodeT<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.ensure_grad().data();
        for (std::size_t i = 0; i < idx->size(); ++i)
          for (std::size_t j = 0; j < width; ++j) g[(*idx)[i] * width + j] += self.grad[i * width + j];
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), ax);
  return record<T>(
      "softmax", x.shape(), {x},
      [s](NodeT<T>& self) {
        const T* in = self.inputs[0]->data.data();
        T* out = self.data.data();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.len * s.inner + i;
            T peak = in[base];
            for (std::size_t l = 1; l < s.len; ++l) peak = std::max(peak, in[base + l * s.inner]);
            T total = T(0);
            for (std::size_t l = 0; l < s.len; ++l) {
              const T e = std::exp(in[base + l * s.inner] - peak);
              out[base + l * s.inner] = e;
              total += e;
            }
            const T inv = T(1) / total;
            for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] *= inv;
          }
        }
      },
      [s](NodeT<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.ensure_grad().data();
        const T* y = self.data.data();
        const T* gy = self.grad.data();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.len * s.inner + i;
            T dot = T(0);
            for (std::size_t l = 0; l < s.len; ++l) dot += gy[base + l * s.inner] * y[base + l * s.inner];
            for (std::size_t l = 0; l < s.len; ++l) {
              const std::size_t k = base + l * s.inner;
              g[k] += y[k] * (gy[k] - dot);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
struct Lerp {
  std::size_t i0;
  T w;
};

template <typename T>
Lerp<T> locate(T u, std::size_t res) {
  constexpr T tol = T(1e-4);
  const T hi = static_cast<T>(res - 1);
  if (!(u >= -tol && u <= hi + tol)) {
    throw ContractError("grid coordinate " + std::to_string(static_cast<double>(u)) + " outside [0, " +
                        std::to_string(res - 1) + "]");
  }
  if (res == 1) return {0, T(0)};
  u = std::clamp(u, T(0), hi);
  std::size_t i0 = static_cast<std::size_t>(u);
  if (i0 > res - 2) i0 = res - 2;
  return {i0, u - static_cast<T>(i0)};
}

}  // namespace

template <typename T>
Tensor<T> interp_line(const Tensor<T>& grid, std::type_identity_t<std::shared_ptr<const std::vector<T>>> coords) {
  if (grid.rank() != 2) throw ShapeError("interp_line expects [R,C] grid, got " + shape_str(grid.shape()));
  const std::size_t res = grid.shape()[0];
  const std::size_t ch = grid.shape()[1];
  auto cells = std::make_shared<std::vector<Lerp<T>>>();
  cells->reserve(coords->size());
  for (T u : *coords) cells->push_back(locate(u, res));
  const std::size_t step = res > 1 ? ch : 0;
  return record<T>(
      "interp_line", Shape{coords->size(), ch}, {grid},
      [cells, ch, step](NodeT<T>& self) {
        const T* g = self.inputs[0]->data.data();
        for (std::size_t s = 0; s < cells->size(); ++s) {
          const auto [i0, w] = (*cells)[s];
          const T* a = g + i0 * ch;
          T* out = self.data.data() + s * ch;
          for (std::size_t c = 0; c < ch; ++c) out[c] = (T(1) - w) * a[c] + w * a[c + step];
        }
      },
      [cells, ch, step](NodeT<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.ensure_grad().data();
        for (std::size_t s = 0; s < cells->size(); ++s) {
          const auto [i0, w] = (*cells)[s];
          const T* go = self.grad.data() + s * ch;
          T* a = g + i0 * ch;
          for (std::size_t c = 0; c < ch; ++c) {
            a[c] += (T(1) - w) * go[c];
            a[c + step] += w * go[c];
          }
        }
      });
}

template <typename T>
Tensor<T> interp_plane(const Tensor<T>& grid, std::type_identity_t<std::shared_ptr<const std::vector<T>>> u,
                       std::type_identity_t<std::shared_ptr<const std::vector<T>>> v) {
  if (grid.rank() != 3 || grid.shape()[0] != grid.shape()[1]) {
    throw ShapeError("interp_plane expects [R,R,C] grid, got " + shape_str(grid.shape()));
  }
  if (u->size() != v->size()) throw ShapeError("interp_plane coordinate count mismatch");
  const std::size_t res = grid.shape()[0];
  const std::size_t ch = grid.shape()[2];
  auto cells = std::make_shared<std::vector<std::pair<Lerp<T>, Lerp<T>>>>();
  cells->reserve(u->size());
  for (std::size_t s = 0; s < u->size(); ++s) cells->emplace_back(locate((*u)[s], res), locate((*v)[s], res));
  const std::size_t row = res * ch;
  const std::size_t du = res > 1 ? row : 0;
  const std::size_t dv = res > 1 ? ch : 0;
  return record<T>(
      "interp_plane", Shape{u->size(), ch}, {grid},
      [cells, ch, row, du, dv](NodeT<T>& self) {
        const T* g = self.inputs[0]->data.data();
        for (std::size_t s = 0; s < cells->size(); ++s) {
          const auto& [lu, lv] = (*cells)[s];
          const T* p = g + lu.i0 * row + lv.i0 * ch;
          const T w00 = (T(1) - lu.w) * (T(1) - lv.w), w01 = (T(1) - lu.w) * lv.w;
          const T w10 = lu.w * (T(1) - lv.w), w11 = lu.w * lv.w;
          T* out = self.data.data() + s * ch;
          for (std::size_t c = 0; c < ch; ++c)
            out[c] = w00 * p[c] + w01 * p[c + dv] + w10 * p[c + du] + w11 * p[c + du + dv];
        }
      },
      [cells, ch, row, du, dv](NodeT<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.ensure_grad().data();
        for (std::size_t s = 0; s < cells->size(); ++s) {
          const auto& [lu, lv] = (*cells)[s];
          T* p = g + lu.i0 * row + lv.i0 * ch;
          const T w00 = (T(1) - lu.w) * (T(1) - lv.w), w01 = (T(1) - lu.w) * lv.w;
          const T w10 = lu.w * (T(1) - lv.w), w11 = lu.w * lv.w;
          const T* go = self.grad.data() + s * ch;
          for (std::size_t c = 0; c < ch; ++c) {
            p[c] += w00 * go[c];
            p[c + dv] += w01 * go[c];
            p[c + du] += w10 * go[c];
            p[c + du + dv] += w11 * go[c];
          }
        }
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, T eps) {
  Tensor<T> centered = sub(x, mean(x, -1, true));
  Tensor<T> var = mean(mul(centered, centered), -1, true);
  return div(centered, sqrt(add_scalar(var, eps)));
}

#define NVIST_INSTANTIATE_OPS(T)                                                                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> neg(const Tensor<T>&);                                                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                                          \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                     \
  template Tensor<T> relu(const Tensor<T>&);                                                              \
  template Tensor<T> exp(const Tensor<T>&);                                                               \
  template Tensor<T> log(const Tensor<T>&);                                                               \
  template Tensor<T> sqrt(const Tensor<T>&);                                                              \
  template Tensor<T> sin(const Tensor<T>&);                                                               \
  template Tensor<T> cos(const Tensor<T>&);                                                               \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                           \
  template Tensor<T> gelu(const Tensor<T>&);                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> sum(const Tensor<T>&);                                                               \
  template Tensor<T> sum(const Tensor<T>&, int, bool);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                              \
  template Tensor<T> mean(const Tensor<T>&, int, bool);                                                   \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                    \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                          \
  template Tensor<T> transpose(const Tensor<T>&, int, int);                                               \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                          \
  template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);                              \
  template Tensor<T> index_select(const Tensor<T>&, const std::vector<std::size_t>&);                     \
  template Tensor<T> softmax(const Tensor<T>&, int);                                                      \
  template Tensor<T> interp_line(const Tensor<T>&, std::shared_ptr<const std::vector<T>>);                \
  template Tensor<T> interp_plane(const Tensor<T>&, std::shared_ptr<const std::vector<T>>,                \
                                  std::shared_ptr<const std::vector<T>>);                                 \
  template Tensor<T> layer_norm(const Tensor<T>&, T);

NVIST_INSTANTIATE_OPS(float)
NVIST_INSTANTIATE_OPS(double)

}  // namespace nvist
