#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "nvist/renderer.h"
#include "nvist/tensor.h"

namespace nvist {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LossWeights {
  double lambda_perceptual = 0.1;
  double beta_distortion = 0.01;
};

/// Mean squared error over every element.
template <typename T>
Tensor<T> l2_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Per-ray sample intervals normalized to [0, 1]: interval i of ray r is
/// [start, start + width) at index r * samples + i.
struct NormalizedIntervals {
  std::size_t rays = 0;
  std::size_t samples = 0;
  std::vector<double> start;
  std::vector<double> width;
};

/// Interval i = [t_i, t_i + delta_i] mapped by (t - t_near) / (t_far - t_near).
/// Rays that miss get a uniform partition (their weights are zero).
NormalizedIntervals normalize_intervals(const std::vector<RaySamples>& samples, std::size_t n);

/// Mean over rays of sum_ij w_i w_j |m_i - m_j| + 1/3 sum_i w_i^2 width_i with
/// m the interval midpoints. weights: [rays, samples].
template <typename T>
Tensor<T> distortion_loss(const Tensor<T>& weights, const NormalizedIntervals& intervals);

/// Perceptual term hook; the default contributes nothing.
template <typename T>
using PerceptualLoss = std::function<Tensor<T>(const Tensor<T>& pred, const Tensor<T>& target)>;

template <typename T>
struct LossTerms {
  Tensor<T> total;
  Tensor<T> l2;
  Tensor<T> distortion;
  Tensor<T> perceptual;
};

template <typename T>
LossTerms<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& weights,
                        const NormalizedIntervals& intervals, const LossWeights& lw,
                        const PerceptualLoss<T>& perceptual = {});

/// 10 log10(1 / mse), 99 dB when mse < 1e-10.
double psnr_from_mse(double mse);
double psnr(const std::vector<float>& a, const std::vector<float>& b);

/// Mean SSIM over valid 11x11 Gaussian (sigma 1.5) windows and channels of
/// two [H, W, C] images in [0, 1].
double ssim(const std::vector<float>& a, const std::vector<float>& b, int height, int width, int channels = 3);

}  // namespace nvist
