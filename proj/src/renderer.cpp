#include "nvist/renderer.h"

#include <algorithm>
#include <cmath>

namespace nvist {

template <typename T>
void VMRepresentation<T>::validate() const {
  const std::size_t r = vx.size(0), k = vx.size(1);
  const Shape line{r, k}, plane{r, r, k};
  if (vy.shape() != line || vz.shape() != line || myz.shape() != plane || mzx.shape() != plane ||
      mxy.shape() != plane) {
    throw ShapeError("VM factors disagree on resolution or channel count");
  }
}

GridCoords grid_coords(const std::vector<Eigen::Vector3d>& points, const Box& bounds, std::size_t resolution) {
  GridCoords g;
  g.x = std::make_shared<std::vector<double>>(points.size());
  g.y = std::make_shared<std::vector<double>>(points.size());
  g.z = std::make_shared<std::vector<double>>(points.size());
  std::vector<double>* axes[3] = {g.x.get(), g.y.get(), g.z.get()};
  const double top = static_cast<double>(resolution - 1);
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      const double extent = bounds.hi[a] - bounds.lo[a];
      const double u = (points[i][a] - bounds.lo[a]) / extent;
      if (!(u >= -1e-9 && u <= 1.0 + 1e-9)) {
        throw ContractError("VM query outside the field bounds on axis " + std::to_string(a));
      }
      (*axes[a])[i] = std::clamp(u, 0.0, 1.0) * top;
    }
  }
  return g;
}

namespace {

template <typename T>
std::shared_ptr<const std::vector<T>> as(const std::shared_ptr<std::vector<double>>& v) {
  if constexpr (std::is_same_v<T, double>) {
    return v;
  } else {
    return std::make_shared<const std::vector<T>>(v->begin(), v->end());
  }
}

}  // namespace

template <typename T>
Tensor<T> query_vm(const VMRepresentation<T>& vm, const GridCoords& c) {
  auto x = as<T>(c.x), y = as<T>(c.y), z = as<T>(c.z);
  Tensor<T> a = mul(interp_line(vm.vx, x), interp_plane(vm.myz, y, z));
  Tensor<T> b = mul(interp_line(vm.vy, y), interp_plane(vm.mzx, z, x));
  Tensor<T> d = mul(interp_line(vm.vz, z), interp_plane(vm.mxy, x, y));
  return add(add(a, b), d);
}

template <typename T>
Tensor<T> query_vm(const VMRepresentation<T>& vm, const std::vector<Eigen::Vector3d>& points) {
  vm.validate();
  return query_vm(vm, grid_coords(points, vm.bounds, vm.resolution()));
}

template <typename T>
Tensor<T> density(const Tensor<T>& features) {
  return relu(sum(features, 1));
}

template <typename T>
ColorMlp<T>::ColorMlp(ParamBuilder<T>& b, const std::string& name, std::size_t channels, std::size_t hidden) {
  auto s = b.scope(name);
  fc1 = Linear<T>(b, "fc1", channels + 3, hidden);
  fc2 = Linear<T>(b, "fc2", hidden, 3);
}

template <typename T>
Tensor<T> ColorMlp<T>::operator()(const Tensor<T>& features, const Tensor<T>& directions) const {
  return sigmoid(fc2(relu(fc1(concat(std::vector<Tensor<T>>{features, directions}, 1)))));
}

template <typename T>
Tensor<T> color(const Tensor<T>& features, const std::vector<Eigen::Vector3d>& directions, const ColorMlp<T>& mlp) {
  std::vector<T> d;
  d.reserve(directions.size() * 3);
  for (const auto& v : directions) {
    if (std::abs(v.norm() - 1.0) > 1e-6) throw ContractError("view direction is not unit length");
    for (int a = 0; a < 3; ++a) d.push_back(static_cast<T>(v[a]));
  }
  return mlp(features, Tensor<T>(Shape{directions.size(), 3}, std::move(d)));
}

RaySamples sample_ray(const Ray& ray, const Box& bounds, std::size_t n, bool stratified, Rng& rng) {
  RaySamples out;
  auto hit = ray_box_intersect(ray, bounds);
  if (!hit || n == 0) return out;
  out.hit = true;
  out.t_near = hit->first;
  out.t_far = hit->second;
  const double bin = (out.t_far - out.t_near) / static_cast<double>(n);
  out.t.resize(n);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = stratified ? jitter(rng) : 0.5;
    out.t[i] = out.t_near + (static_cast<double>(i) + f) * bin;
  }
  out.delta.resize(n);
  for (std::size_t i = 0; i + 1 < n; ++i) out.delta[i] = out.t[i + 1] - out.t[i];
  out.delta[n - 1] = out.t_far - out.t[n - 1];
  return out;
}

RaySamples sample_ray(const Ray& ray, const Box& bounds, std::size_t n, bool stratified, std::uint64_t seed) {
  Rng rng(seed);
  return sample_ray(ray, bounds, n, stratified, rng);
}

template <typename T>
Composite<T> composite(const Tensor<T>& sigma, const Tensor<T>& col, const Tensor<T>& delta) {
  if (sigma.rank() != 2 || delta.shape() != sigma.shape()) throw ShapeError("composite expects sigma and delta [B, N]");
  const std::size_t b = sigma.size(0), n = sigma.size(1);
  if (col.shape() != Shape{b, n, 3}) throw ShapeError("composite expects colors [B, N, 3]");
  // Strictly upper-triangular ones: (tau U)[i] = sum over j < i of tau[j].
  std::vector<T> upper(n * n, T(0));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = j + 1; i < n; ++i) upper[j * n + i] = T(1);
  Tensor<T> tau = mul(sigma, delta);
  Composite<T> out;
  out.transmittance = exp(neg(matmul(tau, Tensor<T>(Shape{n, n}, std::move(upper)))));
  Tensor<T> alpha = add_scalar(neg(exp(neg(tau))), T(1));
  out.weights = mul(out.transmittance, alpha);
  out.rgb = sum(mul(reshape(out.weights, {b, n, 1}), col), 1);
  out.accumulation = sum(out.weights, 1);
  return out;
}

template <typename T>
RayBatch<T> render_rays(const VMRepresentation<T>& vm, const ColorMlp<T>& mlp, const std::vector<Ray>& rays,
                        const RenderOptions& options, Rng& rng) {
  vm.validate();
  const std::size_t b = rays.size(), n = options.samples;
  RayBatch<T> out;
  out.samples.reserve(b);
  std::vector<Eigen::Vector3d> points(b * n);
  std::vector<T> dirs(b * n * 3), deltas(b * n, T(1)), mask(b * n, T(0));
  for (std::size_t r = 0; r < b; ++r) {
    RaySamples s = sample_ray(rays[r], vm.bounds, n, options.stratified, rng);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = r * n + i;
      for (int a = 0; a < 3; ++a) dirs[idx * 3 + a] = static_cast<T>(rays[r].direction[a]);
      if (!s.hit) {
        points[idx] = vm.bounds.lo;
        continue;
      }
      points[idx] = rays[r].origin + s.t[i] * rays[r].direction;
      deltas[idx] = static_cast<T>(s.delta[i]);
      mask[idx] = T(1);
    }
    out.samples.push_back(std::move(s));
  }

  Tensor<T> features = query_vm(vm, grid_coords(points, vm.bounds, vm.resolution()));
  Tensor<T> sigma = reshape(mul(density(features), Tensor<T>(Shape{b * n}, std::move(mask))), {b, n});
  Tensor<T> rgb = reshape(mlp(features, Tensor<T>(Shape{b * n, 3}, std::move(dirs))), {b, n, 3});
  Composite<T> c = composite(sigma, rgb, Tensor<T>(Shape{b, n}, std::move(deltas)));

  Tensor<T> bg(Shape{3}, std::vector<T>{static_cast<T>(options.background[0]), static_cast<T>(options.background[1]),
                                          static_cast<T>(options.background[2])});
  Tensor<T> clear = reshape(add_scalar(neg(c.accumulation), T(1)), {b, 1});
  out.rgb = add(c.rgb, mul(clear, bg));
  out.weights = c.weights;
  out.accumulation = c.accumulation;

  out.depth.assign(b, 0.0);
  const auto w = c.weights.data();
  for (std::size_t r = 0; r < b; ++r) {
    if (!out.samples[r].hit) continue;
    double wt = 0.0, ws = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      wt += static_cast<double>(w[r * n + i]) * out.samples[r].t[i];
      ws += static_cast<double>(w[r * n + i]);
    }
    out.depth[r] = wt / std::max(ws, 1e-10);
  }
  return out;
}

template <typename T>
RenderedImage render_image(const VMRepresentation<T>& vm, const ColorMlp<T>& mlp, const CameraPose& pose,
                           const RenderOptions& options) {
  pose.validate();
  NoGradGuard no_grad;
  RenderedImage img;
  img.width = pose.width;
  img.height = pose.height;
  const std::size_t total = static_cast<std::size_t>(pose.width) * static_cast<std::size_t>(pose.height);
  img.rgb.resize(total * 3);
  img.depth.resize(total);
  img.accumulation.resize(total);
  Rng rng(0);
  RenderOptions opts = options;
  opts.stratified = false;
  const std::size_t chunk = std::max<std::size_t>(options.chunk, 1);
  for (std::size_t begin = 0; begin < total; begin += chunk) {
    const std::size_t end = std::min(total, begin + chunk);
    std::vector<Ray> rays;
    rays.reserve(end - begin);
    for (std::size_t p = begin; p < end; ++p) {
      rays.push_back(generate_ray(pose, static_cast<double>(p % pose.width), static_cast<double>(p / pose.width)));
    }
    RayBatch<T> batch = render_rays(vm, mlp, rays, opts, rng);
    const auto rgb = batch.rgb.data();
    const auto acc = batch.accumulation.data();
    for (std::size_t p = begin; p < end; ++p) {
      for (int a = 0; a < 3; ++a) img.rgb[p * 3 + a] = static_cast<float>(rgb[(p - begin) * 3 + a]);
      img.depth[p] = static_cast<float>(batch.depth[p - begin]);
      img.accumulation[p] = static_cast<float>(acc[p - begin]);
    }
  }
  return img;
}

#define NVIST_INSTANTIATE_RENDERER(T)                                                                          \
  template struct VMRepresentation<T>;                                                                         \
  template struct ColorMlp<T>;                                                                                 \
  template Tensor<T> query_vm(const VMRepresentation<T>&, const std::vector<Eigen::Vector3d>&);                \
  template Tensor<T> query_vm(const VMRepresentation<T>&, const GridCoords&);                                  \
  template Tensor<T> density(const Tensor<T>&);                                                                \
  template Tensor<T> color(const Tensor<T>&, const std::vector<Eigen::Vector3d>&, const ColorMlp<T>&);         \
  template Composite<T> composite(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template RayBatch<T> render_rays(const VMRepresentation<T>&, const ColorMlp<T>&, const std::vector<Ray>&,    \
                                   const RenderOptions&, Rng&);                                                \
  template RenderedImage render_image(const VMRepresentation<T>&, const ColorMlp<T>&, const CameraPose&,       \
                                      const RenderOptions&);

NVIST_INSTANTIATE_RENDERER(float)
NVIST_INSTANTIATE_RENDERER(double)

}  // namespace nvist
