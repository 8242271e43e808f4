#include "nvist/params.h"

#include <algorithm>
#include <cmath>

namespace nvist {

Init Init::xavier(std::size_t fan_in, std::size_t fan_out) {
  return uniform(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

template <typename T>
Tensor<T> ParamBuilder<T>::make(const std::string& name, Shape shape, const Init& init) {
  const std::string full = prefix_ + name;
  specs_.push_back({full, shape, group_});
  if (!allocating()) return {};

  const std::size_t n = shape_numel(shape);
  std::vector<T> v(n, T(0));
  switch (init.kind) {
    case Init::Kind::Zeros:
      break;
    case Init::Kind::Ones:
      std::fill(v.begin(), v.end(), T(1));
      break;
    case Init::Kind::Constant:
      std::fill(v.begin(), v.end(), static_cast<T>(init.a));
      break;
    case Init::Kind::Normal: {
      std::normal_distribution<double> d(0.0, init.a);
      for (auto& x : v) x = static_cast<T>(d(*rng_));
      break;
    }
    case Init::Kind::Uniform: {
      std::uniform_real_distribution<double> d(-init.a, init.a);
      for (auto& x : v) x = static_cast<T>(d(*rng_));
      break;
    }
    case Init::Kind::Values:
      if (init.values.size() != n) throw ShapeError("initializer for " + full + " has the wrong length");
      for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<T>(init.values[i]);
      break;
  }
  Tensor<T> t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  params_.push_back({full, t, group_});
  return t;
}

std::size_t count_elements(const std::vector<ParamSpec>& specs) {
  std::size_t n = 0;
  for (const auto& s : specs) n += shape_numel(s.shape);
  return n;
}

template class ParamBuilder<float>;
template class ParamBuilder<double>;

}  // namespace nvist
