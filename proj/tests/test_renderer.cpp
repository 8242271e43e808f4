#include <gtest/gtest.h>

#include <cmath>

#include "nvist/losses.h"
#include "nvist/renderer.h"

using namespace nvist;

namespace {

using D = Tensor<double>;

VMRepresentation<double> random_vm(std::size_t r, std::size_t k, Rng& rng, double stddev = 1.0) {
  VMRepresentation<double> vm;
  vm.vx = D::randn({r, k}, rng, stddev);
  vm.vy = D::randn({r, k}, rng, stddev);
  vm.vz = D::randn({r, k}, rng, stddev);
  vm.myz = D::randn({r, r, k}, rng, stddev);
  vm.mzx = D::randn({r, r, k}, rng, stddev);
  vm.mxy = D::randn({r, r, k}, rng, stddev);
  return vm;
}

VMRepresentation<double> constant_vm(std::size_t r, std::size_t k, double line, double plane) {
  VMRepresentation<double> vm;
  vm.vx = D(Shape{r, k}, line);
  vm.vy = D(Shape{r, k}, line);
  vm.vz = D(Shape{r, k}, line);
  vm.myz = D(Shape{r, r, k}, plane);
  vm.mzx = D(Shape{r, r, k}, plane);
  vm.mxy = D(Shape{r, r, k}, plane);
  return vm;
}

// Materializes the full R^3 x k grid from the factors and interpolates it
// trilinearly: an implementation independent of query_vm.
std::vector<double> dense_oracle(const VMRepresentation<double>& vm, const Eigen::Vector3d& p) {
  const std::size_t r = vm.resolution(), k = vm.channels();
  auto vx = vm.vx.values(), vy = vm.vy.values(), vz = vm.vz.values();
  auto myz = vm.myz.values(), mzx = vm.mzx.values(), mxy = vm.mxy.values();
  auto grid = [&](std::size_t x, std::size_t y, std::size_t z, std::size_t c) {
    return vx[x * k + c] * myz[(y * r + z) * k + c] + vy[y * k + c] * mzx[(z * r + x) * k + c] +
           vz[z * k + c] * mxy[(x * r + y) * k + c];
  };
  double u[3];
  std::size_t i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    u[a] = (p[a] + 1.0) / 2.0 * static_cast<double>(r - 1);
    i0[a] = std::min<std::size_t>(static_cast<std::size_t>(std::floor(u[a])), r - 2);
    f[a] = u[a] - static_cast<double>(i0[a]);
  }
  std::vector<double> out(k, 0.0);
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) {
        const double w = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dz ? f[2] : 1 - f[2]);
        for (std::size_t c = 0; c < k; ++c) out[c] += w * grid(i0[0] + dx, i0[1] + dy, i0[2] + dz, c);
      }
  return out;
}

Eigen::Vector3d random_point(Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return {u(rng), u(rng), u(rng)};
}

ColorMlp<double> random_mlp(std::size_t k, std::size_t hidden, Rng& rng) {
  ParamBuilder<double> b(rng);
  ColorMlp<double> mlp(b, "mlp", k, hidden);
  for (auto& v : mlp.fc1.bias.data()) v = 0.3 * std::normal_distribution<double>(0, 1)(rng);
  return mlp;
}

CameraPose front_camera(int size, double distance, double focal = 1.0) {
  CameraPose p;
  p.center = {0, 0, -distance};
  p.width = p.height = size;
  p.focal = focal;
  p.principal = {size / 2.0, size / 2.0};
  return p;
}

}  // namespace

TEST(QueryVm, ConstantField) {
  auto vm = constant_vm(4, 3, 1.0, 1.0);
  Rng rng(1);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 20; ++i) pts.push_back(random_point(rng));
  D f = query_vm(vm, pts);
  for (double v : f.values()) EXPECT_NEAR(v, 3.0, 1e-12);
}

TEST(QueryVm, BasisFunction) {
  const std::size_t r = 5, k = 1;
  auto vm = constant_vm(r, k, 0.0, 0.0);
  vm.vx.data()[2] = 1.0;                 // x node 2 -> x = 0
  vm.myz.data()[(1 * r + 3) * k] = 1.0;  // y node 1 -> -0.5, z node 3 -> 0.5
  EXPECT_NEAR(query_vm(vm, {{0.0, -0.5, 0.5}}).item(), 1.0, 1e-15);
  // Halfway to the next x node along x, and a quarter cell off in y and z.
  EXPECT_NEAR(query_vm(vm, {{0.25, -0.5, 0.5}}).item(), 0.5, 1e-15);
  EXPECT_NEAR(query_vm(vm, {{0.0, -0.375, 0.375}}).item(), 0.75 * 0.75, 1e-15);
  EXPECT_NEAR(query_vm(vm, {{0.6, 0.5, 0.5}}).item(), 0.0, 1e-15);
}

TEST(QueryVm, MatchesDenseGridOracle) {
  Rng rng(2);
  for (std::size_t r : {2u, 3u, 4u, 5u, 8u}) {
    for (std::size_t k : {1u, 2u, 4u}) {
      auto vm = random_vm(r, k, rng);
      std::vector<Eigen::Vector3d> pts;
      for (int i = 0; i < 100; ++i) pts.push_back(random_point(rng));
      pts.push_back({1, 1, 1});
      pts.push_back({-1, -1, -1});
      D f = query_vm(vm, pts);
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto expect = dense_oracle(vm, pts[i]);
        for (std::size_t c = 0; c < k; ++c) EXPECT_NEAR(f.data()[i * k + c], expect[c], 1e-5);
      }
    }
  }
}

TEST(QueryVm, OutOfBoundsRejected) {
  auto vm = constant_vm(3, 1, 1.0, 1.0);
  EXPECT_THROW(query_vm(vm, {{1.01, 0.0, 0.0}}), ContractError);
  vm.myz = D(Shape{4, 4, 1});
  EXPECT_THROW(query_vm(vm, {{0.0, 0.0, 0.0}}), ShapeError);
}

TEST(Density, ChannelSumRelu) {
  EXPECT_EQ(density(D(Shape{1, 3}, -1.0)).item(), 0.0);
  EXPECT_EQ(density(D(Shape{1, 2}, {1.0, 2.0})).item(), 3.0);
  Rng rng(3);
  D sig = density(D::randn({50, 4}, rng));
  for (double s : sig.values()) EXPECT_GE(s, 0.0);
}

TEST(Color, ZeroNetworkIsGray) {
  Rng rng(4);
  ParamBuilder<double> b(rng);
  ColorMlp<double> mlp(b, "mlp", 4, 8);
  for (const auto& p : b.parameters()) {
    D t = p.value;
    std::fill(t.data().begin(), t.data().end(), 0.0);
  }
  D c = color(D::randn({3, 4}, rng), {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, mlp);
  for (double v : c.values()) EXPECT_EQ(v, 0.5);
}

TEST(Color, RangeDirectionCheckAndGradcheck) {
  Rng rng(5);
  ColorMlp<double> mlp = random_mlp(4, 6, rng);
  std::vector<Eigen::Vector3d> dirs{Eigen::Vector3d(1, 2, 3).normalized(), Eigen::Vector3d(-1, 0, 1).normalized()};
  D feat = D::randn({2, 4}, rng, 3.0);
  D rgb = color(feat, dirs, mlp);
  for (double v : rgb.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(color(feat, {{1, 1, 0}, {0, 0, 1}}, mlp), ContractError);
  std::vector<D> params{mlp.fc1.weight, mlp.fc1.bias, mlp.fc2.weight, mlp.fc2.bias, feat.set_requires_grad(true)};
  D w = D::randn({2, 3}, rng);
  EXPECT_LE(gradcheck([&] { return sum(mul(color(feat, dirs, mlp), w)); }, params), 1e-4);
}

TEST(SampleRay, MidpointsAndIntervals) {
  Ray ray;
  ray.origin = {0, 0, -2};
  ray.direction = {0, 0, 1};
  RaySamples s = sample_ray(ray, Box{}, 4, false, std::uint64_t{0});
  ASSERT_TRUE(s.hit);
  EXPECT_EQ(s.t, (std::vector<double>{1.25, 1.75, 2.25, 2.75}));
  EXPECT_EQ(s.delta, (std::vector<double>{0.5, 0.5, 0.5, 0.25}));
}

TEST(SampleRay, StratifiedBinsAndDeterminism) {
  Ray ray;
  ray.origin = {0.1, -0.2, -3};
  ray.direction = Eigen::Vector3d(0.05, 0.02, 1).normalized();
  RaySamples a = sample_ray(ray, Box{}, 16, true, std::uint64_t{42});
  RaySamples b = sample_ray(ray, Box{}, 16, true, std::uint64_t{42});
  RaySamples c = sample_ray(ray, Box{}, 16, true, std::uint64_t{43});
  EXPECT_EQ(a.t, b.t);
  EXPECT_NE(a.t, c.t);
  const double bin = (a.t_far - a.t_near) / 16;
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_GE(a.t[i], a.t_near + i * bin);
    EXPECT_LE(a.t[i], a.t_near + (i + 1) * bin);
    EXPECT_GT(a.delta[i], 0.0);
  }
}

TEST(SampleRay, MissIsEmpty) {
  Ray ray;
  ray.origin = {0, 3, -2};
  ray.direction = {0, 0, 1};
  RaySamples s = sample_ray(ray, Box{}, 8, false, std::uint64_t{0});
  EXPECT_FALSE(s.hit);
  EXPECT_TRUE(s.t.empty());
}

TEST(Composite, HandEvaluatedTwoSamples) {
  D sigma(Shape{1, 2}, {1.0, 1.0});
  D delta(Shape{1, 2}, {1.0, 1.0});
  D col(Shape{1, 2, 3}, {1, 0, 0, 0, 1, 0});
  auto c = composite(sigma, col, delta);
  const double e1 = std::exp(-1.0);
  EXPECT_NEAR(c.weights.data()[0], 1 - e1, 1e-12);
  EXPECT_NEAR(c.weights.data()[1], e1 * (1 - e1), 1e-12);
  EXPECT_NEAR(c.weights.data()[0], 0.6321, 1e-4);
  EXPECT_NEAR(c.weights.data()[1], 0.2325, 1e-4);
  EXPECT_NEAR(c.rgb.data()[0], 0.6321, 1e-4);
  EXPECT_NEAR(c.rgb.data()[1], 0.2325, 1e-4);
  EXPECT_EQ(c.rgb.data()[2], 0.0);
}

TEST(Composite, EmptySpaceAndOpaqueFirstSample) {
  D col(Shape{1, 3, 3}, {0.2, 0.4, 0.6, 1, 1, 1, 0, 0, 0});
  auto empty = composite(D(Shape{1, 3}, 0.0), col, D(Shape{1, 3}, 0.5));
  for (double v : empty.rgb.values()) EXPECT_EQ(v, 0.0);
  for (double v : empty.weights.values()) EXPECT_EQ(v, 0.0);
  for (double v : empty.transmittance.values()) EXPECT_EQ(v, 1.0);
  auto opaque = composite(D(Shape{1, 3}, {1e4, 1.0, 1.0}), col, D(Shape{1, 3}, 0.5));
  EXPECT_NEAR(opaque.weights.data()[0], 1.0, 1e-12);
  EXPECT_NEAR(opaque.rgb.data()[0], 0.2, 1e-12);
  EXPECT_NEAR(opaque.rgb.data()[2], 0.6, 1e-12);
}

TEST(Composite, TransmittanceAndWeightIdentities) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 3, n = 2 + rng() % 60;
    D sigma = D::uniform({b, n}, rng, 0.0, 5.0);
    D delta = D::uniform({b, n}, rng, 0.001, 0.2);
    auto c = composite(sigma, D::uniform({b, n, 3}, rng, 0.0, 1.0), delta);
    for (std::size_t r = 0; r < b; ++r) {
      double tau = 0.0, wsum = 0.0;
      EXPECT_EQ(c.transmittance.data()[r * n], 1.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (i > 0) {
          EXPECT_LE(c.transmittance.data()[r * n + i], c.transmittance.data()[r * n + i - 1]);
        }
        EXPECT_GE(c.weights.data()[r * n + i], 0.0);
        tau += sigma.data()[r * n + i] * delta.data()[r * n + i];
        wsum += c.weights.data()[r * n + i];
      }
      EXPECT_NEAR(wsum, 1.0 - std::exp(-tau), 1e-6);
    }
  }
}

TEST(Composite, HomogeneousMediumClosedForm) {
  Rng rng(7);
  for (std::size_t n : {2u, 48u, 96u}) {
    const double s = 1.7, length = 1.3;
    const Eigen::Vector3d col(0.2, 0.5, 0.9);
    // Arbitrary positive partition of the segment.
    D parts = D::uniform({1, n}, rng, 0.1, 1.0);
    double total = 0.0;
    for (double v : parts.values()) total += v;
    std::vector<double> delta(n), colors(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
      delta[i] = parts.data()[i] / total * length;
      for (int a = 0; a < 3; ++a) colors[i * 3 + a] = col[a];
    }
    auto c = composite(D(Shape{1, n}, s), D(Shape{1, n, 3}, colors), D(Shape{1, n}, delta));
    for (int a = 0; a < 3; ++a) EXPECT_NEAR(c.rgb.data()[a], col[a] * (1 - std::exp(-s * length)), 1e-6);
  }
}

TEST(RenderImage, EmptyFieldShowsBackground) {
  auto vm = constant_vm(4, 2, 0.0, 0.0);
  Rng rng(8);
  ColorMlp<double> mlp = random_mlp(2, 4, rng);
  RenderOptions opt;
  opt.background = {0.1, 0.7, 0.3};
  opt.samples = 16;
  RenderedImage img = render_image(vm, mlp, front_camera(12, 2.5), opt);
  for (std::size_t p = 0; p < 144; ++p) {
    EXPECT_NEAR(img.rgb[p * 3 + 0], 0.1, 1e-6);
    EXPECT_NEAR(img.rgb[p * 3 + 1], 0.7, 1e-6);
    EXPECT_NEAR(img.rgb[p * 3 + 2], 0.3, 1e-6);
    EXPECT_EQ(img.accumulation[p], 0.0f);
  }
}

TEST(RenderImage, SlabSilhouetteMatchesProjection) {
  // Dense slab |x| <= 0.5 spanning the field in y and z; grid nodes at +-0.5.
  const std::size_t r = 41;
  auto vm = constant_vm(r, 1, 0.0, 0.0);
  for (std::size_t i = 10; i <= 30; ++i) vm.vx.data()[i] = 400.0;
  vm.myz = D(Shape{r, r, 1}, 1.0);
  Rng rng(9);
  ColorMlp<double> mlp = random_mlp(1, 4, rng);
  const int size = 64;
  CameraPose cam = front_camera(size, 3.0, 0.5);  // 32 px focal
  RenderOptions opt;
  opt.samples = 96;
  RenderedImage img = render_image(vm, mlp, cam, opt);
  // A ray of lateral slope s first meets |x| <= 0.5 on the near face z = -1
  // when |2 s| <= 0.5, so the silhouette edges sit at slope +-0.25.
  const double f = cam.focal_pixels();
  const int row = size / 2;
  int mismatches = 0;
  for (int u = 0; u < size; ++u) {
    const double slope = (u + 0.5 - cam.principal.x()) / f;
    const bool inside = std::abs(slope) <= 0.25;
    const bool covered = img.accumulation[row * size + u] > 0.5f;
    if (inside != covered) {
      ++mismatches;
      // Only the pixels adjacent to the analytic edge may disagree.
      EXPECT_LE(std::abs(std::abs(slope) - 0.25) * f, 1.0) << "column " << u;
    }
  }
  EXPECT_LE(mismatches, 2);
}

TEST(RenderImage, QuadratureRefinementIsStable) {
  const std::size_t r = 8, k = 2;
  VMRepresentation<double> vm = constant_vm(r, k, 0.0, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      const double x = static_cast<double>(i) / (r - 1);
      vm.vx.data()[i * k + c] = 0.6 + 0.3 * std::sin(3 * x + c);
      vm.vy.data()[i * k + c] = 0.5 + 0.2 * std::cos(2 * x);
      vm.vz.data()[i * k + c] = 0.4;
      for (std::size_t j = 0; j < r; ++j) {
        const double y = static_cast<double>(j) / (r - 1);
        vm.myz.data()[(i * r + j) * k + c] = 0.8 + 0.4 * x * y;
        vm.mzx.data()[(i * r + j) * k + c] = 0.5 + 0.3 * std::sin(x + 2 * y);
        vm.mxy.data()[(i * r + j) * k + c] = 0.6;
      }
    }
  }
  Rng rng(10);
  ColorMlp<double> mlp = random_mlp(k, 8, rng);
  RenderOptions a;
  a.samples = 48;
  RenderOptions b = a;
  b.samples = 96;
  CameraPose cam = front_camera(16, 2.5, 0.8);
  cam.rotation = rotation_about_axis({0.3, 1, 0.1}, 0.4);
  cam.center = cam.rotation * Eigen::Vector3d(0, 0, -2.5);
  RenderedImage i48 = render_image(vm, mlp, cam, a);
  RenderedImage i96 = render_image(vm, mlp, cam, b);
  double mae = 0.0;
  for (std::size_t i = 0; i < i48.rgb.size(); ++i) mae += std::abs(i48.rgb[i] - i96.rgb[i]);
  mae /= static_cast<double>(i48.rgb.size());
  EXPECT_LT(mae, 1e-2);
}

TEST(RenderRays, DepthOfOpaqueWall) {
  // Density only for z >= 0 (grid nodes from the middle up): an opaque wall at
  // z = 0, blurred by one cell of linear interpolation.
  const std::size_t r = 81;
  auto vm = constant_vm(r, 1, 0.0, 0.0);
  for (std::size_t i = 40; i < r; ++i) vm.vz.data()[i] = 2000.0;
  vm.mxy = D(Shape{r, r, 1}, 1.0);
  Rng rng(11);
  ColorMlp<double> mlp = random_mlp(1, 4, rng);
  Ray ray;
  ray.origin = {0.1, 0.2, -2};
  ray.direction = {0, 0, 1};
  RenderOptions opt;
  opt.samples = 400;
  auto batch = render_rays(vm, mlp, {ray}, opt, rng);
  EXPECT_NEAR(batch.depth[0], 2.0, 0.025);
  EXPECT_NEAR(batch.accumulation.item(), 1.0, 1e-6);
}

TEST(RenderRays, PipelineGradcheck) {
  Rng rng(12);
  auto vm = random_vm(4, 2, rng, 0.8);
  for (auto& v : vm.vx.data()) v += 1.0;
  ColorMlp<double> mlp = random_mlp(2, 5, rng);
  std::vector<Ray> rays;
  for (int i = 0; i < 5; ++i) {
    Ray ray;
    ray.origin = Eigen::Vector3d(0.1 * i - 0.2, 0.05 * i, -2.0);
    ray.direction = Eigen::Vector3d(0.05 * i, -0.03 * i, 1.0).normalized();
    rays.push_back(ray);
  }
  RenderOptions opt;
  opt.samples = 8;
  opt.stratified = true;
  opt.background = {0.9, 0.8, 0.7};
  D target = D::uniform({5, 3}, rng, 0.0, 1.0);
  std::vector<D> params{vm.vx, vm.vy, vm.vz, vm.myz, vm.mzx, vm.mxy, mlp.fc1.weight, mlp.fc1.bias, mlp.fc2.weight,
                        mlp.fc2.bias};
  for (auto& p : params) p.set_requires_grad(true);
  LossWeights lw{0.1, 0.5};
  auto f = [&] {
    Rng sample_rng(77);
    auto batch = render_rays(vm, mlp, rays, opt, sample_rng);
    return total_loss(batch.rgb, target, batch.weights, normalize_intervals(batch.samples, opt.samples), lw).total;
  };
  EXPECT_LE(gradcheck(f, params, 1e-6), 1e-4);
}
