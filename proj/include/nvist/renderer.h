#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <vector>

#include "nvist/attention.h"
#include "nvist/camera.h"
#include "nvist/tensor.h"

namespace nvist {

/// Factorized feature grid: three axis lines [R, k] and three planes
/// [R, R, k]. `myz` is indexed [y, z], `mzx` [z, x], `mxy` [x, y].
template <typename T>
struct VMRepresentation {
  Tensor<T> vx, vy, vz;
  Tensor<T> myz, mzx, mxy;
  Box bounds;

  std::size_t resolution() const { return vx.size(0); }
  std::size_t channels() const { return vx.size(1); }
  /// Throws ShapeError unless all six factors agree on R and k.
  void validate() const;
};

/// Continuous grid coordinates in [0, R-1] for each axis of a point set.
struct GridCoords {
  std::shared_ptr<std::vector<double>> x, y, z;
};

/// Maps points to grid coordinates; throws ContractError for a point outside
/// the bounds (beyond a 1e-9 relative slack).
GridCoords grid_coords(const std::vector<Eigen::Vector3d>& points, const Box& bounds, std::size_t resolution);

/// Feature [S, k] at each point: per channel Vx*Myz + Vy*Mzx + Vz*Mxy with
/// linear and bilinear interpolation.
template <typename T>
Tensor<T> query_vm(const VMRepresentation<T>& vm, const std::vector<Eigen::Vector3d>& points);
template <typename T>
Tensor<T> query_vm(const VMRepresentation<T>& vm, const GridCoords& coords);

/// relu of the channel sum: [S, k] -> [S].
template <typename T>
Tensor<T> density(const Tensor<T>& features);

/// (feature, view direction) -> rgb through one hidden ReLU layer and a sigmoid.
template <typename T>
struct ColorMlp {
  Linear<T> fc1;
  Linear<T> fc2;

  ColorMlp() = default;
  ColorMlp(ParamBuilder<T>& b, const std::string& name, std::size_t channels, std::size_t hidden);

  /// features [S, k], directions [S, 3] -> [S, 3].
  Tensor<T> operator()(const Tensor<T>& features, const Tensor<T>& directions) const;
};

/// Checks every direction has unit length (1e-6) before evaluating the MLP.
template <typename T>
Tensor<T> color(const Tensor<T>& features, const std::vector<Eigen::Vector3d>& directions, const ColorMlp<T>& mlp);

struct RaySamples {
  bool hit = false;
  double t_near = 0.0;
  double t_far = 0.0;
  std::vector<double> t;
  std::vector<double> delta;
};

/// N samples in the ray's box interval, one per equal bin: midpoints, or one
/// uniform draw per bin when stratified. delta_i = t_{i+1} - t_i and
/// delta_N = t_far - t_N. A miss yields an empty sample set.
RaySamples sample_ray(const Ray& ray, const Box& bounds, std::size_t n, bool stratified, Rng& rng);
RaySamples sample_ray(const Ray& ray, const Box& bounds, std::size_t n, bool stratified, std::uint64_t seed);

template <typename T>
struct Composite {
  Tensor<T> rgb;            // [B, 3]
  Tensor<T> weights;        // [B, N]
  Tensor<T> transmittance;  // [B, N]
  Tensor<T> accumulation;   // [B]
};

/// sigma [B, N], color [B, N, 3], delta [B, N].
template <typename T>
Composite<T> composite(const Tensor<T>& sigma, const Tensor<T>& color, const Tensor<T>& delta);

struct RenderOptions {
  std::size_t samples = 48;
  bool stratified = false;
  Eigen::Vector3d background = Eigen::Vector3d::Ones();
  std::size_t chunk = 4096;  // rays per batch in render_image
};

template <typename T>
struct RayBatch {
  Tensor<T> rgb;      // [B, 3], background composited
  Tensor<T> weights;  // [B, N]
  Tensor<T> accumulation;
  std::vector<RaySamples> samples;  // per ray; empty t on miss
  std::vector<double> depth;        // per ray, sum(w t) / max(sum w, eps)
};

template <typename T>
RayBatch<T> render_rays(const VMRepresentation<T>& vm, const ColorMlp<T>& mlp, const std::vector<Ray>& rays,
                        const RenderOptions& options, Rng& rng);

struct RenderedImage {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;  // row-major [H, W, 3]
  std::vector<float> depth;
  std::vector<float> accumulation;
};

/// Full image without recording gradients.
template <typename T>
RenderedImage render_image(const VMRepresentation<T>& vm, const ColorMlp<T>& mlp, const CameraPose& pose,
                           const RenderOptions& options);

}  // namespace nvist
