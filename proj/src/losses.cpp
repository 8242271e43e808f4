#include "nvist/losses.h"

#include <cmath>
#include <string>

namespace nvist {

template <typename T>
Tensor<T> l2_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("l2_loss shapes " + shape_str(pred.shape()) + " and " + shape_str(target.shape()));
  }
  Tensor<T> d = sub(pred, target);
  return mean(mul(d, d));
}

NormalizedIntervals normalize_intervals(const std::vector<RaySamples>& samples, std::size_t n) {
  NormalizedIntervals out;
  out.rays = samples.size();
  out.samples = n;
  out.start.resize(out.rays * n);
  out.width.resize(out.rays * n);
  for (std::size_t r = 0; r < out.rays; ++r) {
    const RaySamples& s = samples[r];
    const double len = s.t_far - s.t_near;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = r * n + i;
      if (!s.hit || s.t.size() != n || !(len > 0.0)) {
        out.start[k] = static_cast<double>(i) / static_cast<double>(n);
        out.width[k] = 1.0 / static_cast<double>(n);
      } else {
        out.start[k] = (s.t[i] - s.t_near) / len;
        out.width[k] = s.delta[i] / len;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> distortion_loss(const Tensor<T>& weights, const NormalizedIntervals& iv) {
  const std::size_t b = iv.rays, n = iv.samples;
  if (weights.shape() != Shape{b, n}) {
    throw ShapeError("distortion_loss weights " + shape_str(weights.shape()) + " for " + std::to_string(b) +
                     " rays of " + std::to_string(n) + " samples");
  }
  if (b == 0) return Tensor<T>::scalar(T(0));
  std::vector<T> mid(b * n), third_width(b * n), upper(n * n, T(0));
  for (std::size_t k = 0; k < b * n; ++k) {
    mid[k] = static_cast<T>(iv.start[k] + 0.5 * iv.width[k]);
    third_width[k] = static_cast<T>(iv.width[k] / 3.0);
  }
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = j + 1; i < n; ++i) upper[j * n + i] = T(1);
  // With midpoints increasing along the ray, the pairwise sum equals
  // 2 sum_i w_i (m_i W_{<i} - (w m)_{<i}) using exclusive prefix sums.
  Tensor<T> m(Shape{b, n}, std::move(mid));
  Tensor<T> u(Shape{n, n}, std::move(upper));
  Tensor<T> wm = mul(weights, m);
  Tensor<T> inner = sub(mul(m, matmul(weights, u)), matmul(wm, u));
  Tensor<T> pair = scale(sum(mul(weights, inner)), T(2));
  Tensor<T> self = sum(mul(mul(weights, weights), Tensor<T>(Shape{b, n}, std::move(third_width))));
  return scale(add(pair, self), static_cast<T>(1.0 / static_cast<double>(b)));
}

template <typename T>
LossTerms<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& weights,
                        const NormalizedIntervals& intervals, const LossWeights& lw,
                        const PerceptualLoss<T>& perceptual) {
  if (lw.lambda_perceptual < 0.0 || lw.beta_distortion < 0.0) throw ContractError("loss weights must be non-negative");
  LossTerms<T> t;
  t.l2 = l2_loss(pred, target);
  t.distortion = distortion_loss(weights, intervals);
  t.perceptual = perceptual ? perceptual(pred, target) : Tensor<T>::scalar(T(0));
  t.total = add(add(t.l2, scale(t.distortion, static_cast<T>(lw.beta_distortion))),
                scale(t.perceptual, static_cast<T>(lw.lambda_perceptual)));
  return t;
}

double psnr_from_mse(double mse) {
  if (mse < 1e-10) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

double psnr(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size() || a.empty()) throw MetricError("psnr needs two non-empty images of equal size");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return psnr_from_mse(acc / static_cast<double>(a.size()));
}

double ssim(const std::vector<float>& a, const std::vector<float>& b, int height, int width, int channels) {
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  if (height < kWin || width < kWin) {
    throw MetricError("ssim needs images of at least 11x11, got " + std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t expect = static_cast<std::size_t>(height) * width * channels;
  if (a.size() != expect || b.size() != expect) throw MetricError("ssim image buffers do not match their size");

  double kernel[kWin][kWin];
  double norm = 0.0;
  for (int i = 0; i < kWin; ++i) {
    for (int j = 0; j < kWin; ++j) {
      const double di = i - kWin / 2, dj = j - kWin / 2;
      kernel[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * kSigma * kSigma));
      norm += kernel[i][j];
    }
  }
  for (auto& row : kernel)
    for (double& v : row) v /= norm;

  double total = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y + kWin <= height; ++y) {
      for (int x = 0; x + kWin <= width; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < kWin; ++i) {
          for (int j = 0; j < kWin; ++j) {
            const std::size_t k = (static_cast<std::size_t>(y + i) * width + (x + j)) * channels + c;
            const double w = kernel[i][j], va = a[k], vb = b[k];
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        }
        const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

#define NVIST_INSTANTIATE_LOSSES(T)                                                                        \
  template Tensor<T> l2_loss(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> distortion_loss(const Tensor<T>&, const NormalizedIntervals&);                        \
  template LossTerms<T> total_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                   \
                                   const NormalizedIntervals&, const LossWeights&, const PerceptualLoss<T>&);

NVIST_INSTANTIATE_LOSSES(float)
NVIST_INSTANTIATE_LOSSES(double)

}  // namespace nvist
