#include "nvist/verify.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <ostream>
#include <unistd.h>

#include <Eigen/Geometry>

#include "nvist/checkpoint.h"
#include "nvist/losses.h"
#include "nvist/model.h"
#include "nvist/scene.h"
#include "nvist/train.h"

namespace nvist {

namespace {

using D = Tensor<double>;

D random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return D::uniform(shape, rng, lo, hi).set_requires_grad(true);
}

/// Scalar probe: sum(x * W) with W fixed per (shape, seed).
D probe(const D& x, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(x, D::uniform(x.shape(), rng, -1.0, 1.0)));
}

std::vector<D> leaves(const std::vector<NamedParameter<double>>& params) {
  std::vector<D> out;
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

void jitter(const std::vector<NamedParameter<double>>& params, Rng& rng, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  for (const auto& p : params) {
    D t = p.value;
    for (auto& v : t.data()) v += n(rng);
  }
}

// ---------------------------------------------------------------------------

SuiteReport gradcheck_suite() {
  SuiteReport r;
  auto add_check = [&](const std::string& name, const std::function<D()>& f, const std::vector<D>& params,
                       double eps = 1e-6, Stencil stencil = Stencil::Central3) {
    const GradcheckResult g = gradcheck_detailed(f, params, eps, stencil);
    char where[160];
    std::snprintf(where, sizeof(where), "param %zu [%zu]: analytic %.6e numeric %.6e", g.param, g.index, g.analytic,
                  g.numeric);
    r.checks.push_back({"grad " + name, g.max_error, 1e-4, where});
  };

  Rng rng(101);
  const Shape shape{3, 4};
  D a = random_tensor(shape, rng);
  D b = random_tensor(shape, rng);
  D pos = random_tensor(shape, rng, 0.5, 2.0);
  D away = random_tensor(shape, rng, 0.1, 1.0);
  for (std::size_t i = 0; i < away.numel(); i += 2) away.data()[i] = -away.data()[i];
  D row = random_tensor({4}, rng);
  D col = random_tensor({3, 1}, rng, 0.5, 1.5);
  D batched = random_tensor({2, 3, 4}, rng);
  D batched_rhs = random_tensor({2, 4, 2}, rng);
  const std::vector<D> all{a, b, pos, away};
  const std::map<std::string, std::function<D()>> primitives{
      {"add", [&] { return probe(add(a, b), 1); }},
      {"add_broadcast", [&] { return probe(add(a, row), 2); }},
      {"sub", [&] { return probe(sub(a, b), 3); }},
      {"mul", [&] { return probe(mul(a, col), 4); }},
      {"div", [&] { return probe(div(a, pos), 5); }},
      {"neg", [&] { return probe(neg(a), 6); }},
      {"scale", [&] { return probe(scale(a, 1.7), 7); }},
      {"add_scalar", [&] { return probe(mul(add_scalar(a, 0.3), b), 8); }},
      {"relu", [&] { return probe(relu(away), 9); }},
      {"exp", [&] { return probe(exp(a), 10); }},
      {"log", [&] { return probe(log(pos), 11); }},
      {"sqrt", [&] { return probe(sqrt(pos), 12); }},
      {"sin", [&] { return probe(sin(a), 13); }},
      {"cos", [&] { return probe(cos(a), 14); }},
      {"sigmoid", [&] { return probe(sigmoid(a), 15); }},
      {"gelu", [&] { return probe(gelu(a), 16); }},
      {"matmul", [&] { return probe(matmul(a, transpose(b, 0, 1)), 17); }},
      {"matmul_batched", [&] { return probe(matmul(batched, batched_rhs), 18); }},
      {"sum", [&] { return mul(sum(a), sum(b)); }},
      {"sum_axis", [&] { return probe(sum(a, 0), 19); }},
      {"mean", [&] { return mul(mean(a), mean(b)); }},
      {"mean_axis", [&] { return probe(mean(a, 1, true), 20); }},
      {"reshape", [&] { return probe(mul(reshape(a, {2, 6}), reshape(b, {2, 6})), 21); }},
      {"permute", [&] { return probe(mul(permute(batched, {2, 0, 1}), permute(batched, {2, 0, 1})), 22); }},
      {"transpose", [&] { return probe(mul(transpose(a, 0, 1), transpose(b, 0, 1)), 23); }},
      {"concat", [&] { return probe(mul(concat<double>({a, b}, 1), concat<double>({b, a}, 1)), 24); }},
      {"slice", [&] { return probe(mul(slice(a, 1, 1, 3), slice(b, 1, 0, 2)), 25); }},
      {"index_select", [&] { return probe(mul(index_select(a, {0, 0, 2}), index_select(b, {1, 0, 0})), 26); }},
      {"softmax", [&] { return probe(softmax(a, 1), 27); }},
      {"layer_norm", [&] { return probe(layer_norm(a), 28); }},
  };
  for (const auto& [name, f] : primitives) add_check(name, f, {a, b, pos, away, row, col, batched, batched_rhs});

  D line = random_tensor({5, 3}, rng);
  D plane = random_tensor({4, 4, 2}, rng);
  auto u = std::make_shared<std::vector<double>>(std::vector<double>{0.0, 0.3, 2.7, 3.0, 1.5, 3.999});
  auto v = std::make_shared<std::vector<double>>(std::vector<double>{1.2, 0.0, 3.0, 2.2, 0.5, 0.1});
  auto w = std::make_shared<std::vector<double>>(std::vector<double>{0.1, 2.9, 3.0, 1.0, 0.0, 2.5});
  add_check("interp_line", [&] { return probe(interp_line(line, u), 30); }, {line});
  add_check("interp_plane", [&] { return probe(interp_plane(plane, v, w), 31); }, {plane});

  // Modules, with parameters jittered away from their structured inits.
  {
    ParamBuilder<double> pb(rng);
    Linear<double> lin(pb, "lin", 8, 5);
    LayerNorm<double> ln(pb, "ln", 8);
    Mlp<double> mlp(pb, "mlp", 8, 2);
    MultiHeadAttention<double> attn(pb, "attn", 8, 2);
    PatchEmbed<double> embed(pb, "embed", 2, 8);
    jitter(pb.parameters(), rng, 0.1);
    D x = random_tensor({4, 8}, rng);
    D ctx = random_tensor({3, 8}, rng);
    D image = random_tensor({4, 6, 3}, rng, 0.0, 1.0);
    std::vector<D> params = leaves(pb.parameters());
    params.insert(params.end(), {x, ctx, image});
    add_check("linear", [&] { return probe(lin(x), 40); }, params);
    add_check("layer_norm_affine", [&] { return probe(ln(x), 41); }, params);
    add_check("mlp", [&] { return probe(mlp(x), 42); }, params);
    add_check("self_attention", [&] { return probe(attn(x, x), 43); }, params);
    add_check("cross_attention", [&] { return probe(attn(x, ctx), 44); }, params);
    add_check("patch_embed", [&] { return probe(embed(image), 45); }, params);
  }
  {
    ParamBuilder<double> pb(rng);
    TransformerBlock<double> plain(pb, "plain", 8, 2, false, false);
    TransformerBlock<double> cross(pb, "cross", 8, 2, false, true);
    TransformerBlock<double> adaptive(pb, "adaptive", 8, 2, true, true);
    DecoderBlock<double> dec(pb, "dec", 8, 2);
    AdaLNMlp<double> cond_mlp(pb, "cond", 18, 6, 8, 3, 0.5);
    jitter(pb.parameters(), rng, 0.2);
    D x = random_tensor({4, 8}, rng);
    D ctx = random_tensor({5, 8}, rng);
    D cond = random_tensor({18}, rng);
    std::vector<D> params = leaves(pb.parameters());
    params.insert(params.end(), {x, ctx, cond});
    add_check("adaptive_layer_norm", [&] {
      auto sites = cond_mlp(cond);
      return probe(adaptive_layer_norm(x, sites[0]), 50);
    }, params);
    add_check("block_plain", [&] { return probe(plain(x), 51); }, params);
    add_check("block_cross", [&] { return probe(cross(x, &ctx), 52); }, params);
    add_check("block_adaptive", [&] {
      auto sites = cond_mlp(cond);
      return probe(adaptive(x, &ctx, &sites[0], &sites[1]), 53);
    }, params);
    add_check("decoder_block", [&] {
      auto sites = cond_mlp(cond);
      return probe(dec(x, ctx, sites.data()), 54);
    }, params);
  }
  {
    VMRepresentation<double> vm;
    vm.vx = random_tensor({4, 2}, rng, 0.5, 1.5);
    vm.vy = random_tensor({4, 2}, rng, 0.5, 1.5);
    vm.vz = random_tensor({4, 2}, rng, 0.5, 1.5);
    vm.myz = random_tensor({4, 4, 2}, rng, 0.2, 1.0);
    vm.mzx = random_tensor({4, 4, 2}, rng, 0.2, 1.0);
    vm.mxy = random_tensor({4, 4, 2}, rng, 0.2, 1.0);
    ParamBuilder<double> pb(rng);
    ColorMlp<double> mlp(pb, "color", 2, 6);
    jitter(pb.parameters(), rng, 0.3);
    std::vector<Eigen::Vector3d> pts, dirs;
    std::uniform_real_distribution<double> unit(-0.95, 0.95);
    for (int i = 0; i < 7; ++i) {
      pts.emplace_back(unit(rng), unit(rng), unit(rng));
      dirs.push_back(Eigen::Vector3d(unit(rng), unit(rng), 1.0).normalized());
    }
    std::vector<D> params{vm.vx, vm.vy, vm.vz, vm.myz, vm.mzx, vm.mxy};
    for (const auto& t : leaves(pb.parameters())) params.push_back(t);
    add_check("query_vm", [&] { return probe(query_vm(vm, pts), 60); }, params);
    add_check("density", [&] { return probe(density(query_vm(vm, pts)), 61); }, params);
    add_check("color", [&] { return probe(color(query_vm(vm, pts), dirs, mlp), 62); }, params);

    D sigma = random_tensor({3, 5}, rng, 0.1, 3.0);
    D rgb = random_tensor({3, 5, 3}, rng, 0.0, 1.0);
    D delta = D::uniform({3, 5}, rng, 0.05, 0.4);
    add_check("composite", [&] {
      auto c = composite(sigma, rgb, delta);
      return add(probe(c.rgb, 63), probe(c.accumulation, 64));
    }, {sigma, rgb});

    D pred = random_tensor({6, 3}, rng, 0.0, 1.0);
    D target = D::uniform({6, 3}, rng, 0.0, 1.0);
    add_check("l2_loss", [&] { return l2_loss(pred, target); }, {pred});
    D weights = random_tensor({3, 5}, rng, 0.0, 0.4);
    NormalizedIntervals iv;
    iv.rays = 3;
    iv.samples = 5;
    for (std::size_t r = 0; r < 3; ++r) {
      std::vector<double> cuts{0.0, 1.0};
      for (int i = 0; i < 4; ++i) cuts.push_back(std::uniform_real_distribution<double>(0.0, 1.0)(rng));
      std::sort(cuts.begin(), cuts.end());
      for (std::size_t i = 0; i < 5; ++i) {
        iv.start.push_back(cuts[i]);
        iv.width.push_back(cuts[i + 1] - cuts[i]);
      }
    }
    add_check("distortion_loss", [&] { return distortion_loss(weights, iv); }, {weights});
    LossWeights lw{0.1, 0.5};
    D wide_pred = random_tensor({3, 3}, rng, 0.0, 1.0);
    D wide_target = D::uniform({3, 3}, rng, 0.0, 1.0);
    add_check("total_loss", [&] { return total_loss(wide_pred, wide_target, weights, iv, lw).total; },
              {wide_pred, weights});
  }
  {
    const ModelConfig cfg = ModelConfig::tiny();
    ParamBuilder<double> pb(rng);
    Encoder<double> enc(pb, cfg.encoder);
    MaeHead<double> head(pb, cfg.encoder, cfg.mae);
    jitter(pb.parameters(), rng, 0.05);
    D image = D::uniform({8, 8, 3}, rng, 0.0, 1.0);
    PatchMask mask = random_patch_mask(4, 0.5, rng);
    add_check("mae_loss", [&] { return head.loss(enc, image, mask); }, leaves(pb.parameters()), 1e-3,
              Stencil::Central5);
  }
  {
    // Image to loss through encoder, conditioned decoder, VM field, renderer
    // and the combined objective. Gates start open and every parameter is
    // jittered so no path has an identically zero gradient.
    ModelConfig cfg = ModelConfig::tiny();
    cfg.decoder.gate_init = 0.5;
    cfg.decoder.head_scale = 1.0;
    cfg.decoder.head_bias = 0.4;
    NvistModel<double> model(cfg, 7);
    jitter(model.parameters(), rng, 0.05);
    D image = D::uniform({8, 8, 3}, rng, 0.0, 1.0);
    const ConditioningVector cond = encode_conditioning(1.1, 2.0);
    CameraPose input;
    input.center = conditioned_input_center(2.0);
    input.width = 8;
    input.height = 8;
    input.principal = {4.0, 4.0};
    CameraPose target = input;
    target.rotation = rotation_about_axis(Eigen::Vector3d::UnitY(), 0.4);
    target.center = target.rotation * input.center;
    const std::vector<Pixel> pixels{{1, 2}, {4, 4}, {6, 1}, {3, 7}, {7, 5}};
    const auto rays = generate_rays(target, pixels);
    D colors = D::uniform({5, 3}, rng, 0.0, 1.0);
    RenderOptions opt;
    opt.samples = cfg.renderer.samples;
    opt.stratified = true;
    LossWeights lw{0.1, 0.5};
    auto f = [&] {
      Rng sample_rng(5);
      auto vm = model.predict(image, cond);
      auto batch = render_rays(vm, model.color_mlp(), rays, opt, sample_rng);
      return total_loss(batch.rgb, colors, batch.weights, normalize_intervals(batch.samples, opt.samples), lw).total;
    };
    add_check("pipeline_image_to_loss", f, leaves(model.parameters()), 1e-3, Stencil::Central5);
  }
  return r;
}

// ---------------------------------------------------------------------------

/// Materializes the full R^3 x k feature grid from the six factors and
/// interpolates it trilinearly.
class DenseGrid {
 public:
  explicit DenseGrid(const VMRepresentation<double>& vm) : r_(vm.resolution()), k_(vm.channels()) {
    const auto vx = vm.vx.values(), vy = vm.vy.values(), vz = vm.vz.values();
    const auto myz = vm.myz.values(), mzx = vm.mzx.values(), mxy = vm.mxy.values();
    grid_.resize(r_ * r_ * r_ * k_);
    for (std::size_t x = 0; x < r_; ++x)
      for (std::size_t y = 0; y < r_; ++y)
        for (std::size_t z = 0; z < r_; ++z)
          for (std::size_t c = 0; c < k_; ++c) {
            grid_[((x * r_ + y) * r_ + z) * k_ + c] = vx[x * k_ + c] * myz[(y * r_ + z) * k_ + c] +
                                                      vy[y * k_ + c] * mzx[(z * r_ + x) * k_ + c] +
                                                      vz[z * k_ + c] * mxy[(x * r_ + y) * k_ + c];
          }
    lo_ = vm.bounds.lo;
    hi_ = vm.bounds.hi;
  }

  std::vector<double> operator()(const Eigen::Vector3d& p) const {
    std::size_t i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
      const double u = (p[a] - lo_[a]) / (hi_[a] - lo_[a]) * static_cast<double>(r_ - 1);
      i0[a] = std::min<std::size_t>(static_cast<std::size_t>(std::floor(u)), r_ - 2);
      f[a] = u - static_cast<double>(i0[a]);
    }
    std::vector<double> out(k_, 0.0);
    for (int corner = 0; corner < 8; ++corner) {
      const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
      const double w = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dz ? f[2] : 1 - f[2]);
      const std::size_t base = (((i0[0] + dx) * r_ + i0[1] + dy) * r_ + i0[2] + dz) * k_;
      for (std::size_t c = 0; c < k_; ++c) out[c] += w * grid_[base + c];
    }
    return out;
  }

 private:
  std::size_t r_, k_;
  Eigen::Vector3d lo_, hi_;
  std::vector<double> grid_;
};

SuiteReport vm_suite() {
  SuiteReport r;
  Rng rng(202);
  for (std::size_t res : {2, 4, 8}) {
    for (std::size_t k : {1, 2, 4}) {
      VMRepresentation<double> vm;
      vm.vx = D::randn({res, k}, rng);
      vm.vy = D::randn({res, k}, rng);
      vm.vz = D::randn({res, k}, rng);
      vm.myz = D::randn({res, res, k}, rng);
      vm.mzx = D::randn({res, res, k}, rng);
      vm.mxy = D::randn({res, res, k}, rng);
      std::vector<Eigen::Vector3d> pts;
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (int i = 0; i < 100; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
      pts[0] = Eigen::Vector3d(-1, -1, -1);
      pts[1] = Eigen::Vector3d(1, 1, 1);
      const D got = query_vm(vm, pts);
      const DenseGrid dense(vm);
      double err = 0.0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto expect = dense(pts[i]);
        for (std::size_t c = 0; c < k; ++c) err = std::max(err, std::abs(got.data()[i * k + c] - expect[c]));
      }
      r.checks.push_back({"query_vm vs dense grid R=" + std::to_string(res) + " k=" + std::to_string(k), err, 1e-5});
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

SuiteReport quadrature_suite() {
  SuiteReport r;
  Rng rng(303);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (std::size_t n : {2, 48, 96}) {
    double err = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const double sigma = 0.05 + 5.0 * u01(rng);
      const double length = 0.1 + 2.0 * u01(rng);
      const double c[3] = {u01(rng), u01(rng), u01(rng)};
      std::vector<double> cuts{0.0, length};
      for (std::size_t i = 1; i < n; ++i) cuts.push_back(length * u01(rng));
      std::sort(cuts.begin(), cuts.end());
      D s(Shape{1, n}, sigma), col(Shape{1, n, 3}), delta(Shape{1, n});
      for (std::size_t i = 0; i < n; ++i) {
        delta.data()[i] = cuts[i + 1] - cuts[i];
        for (int ch = 0; ch < 3; ++ch) col.data()[i * 3 + ch] = c[ch];
      }
      const auto out = composite(s, col, delta);
      for (int ch = 0; ch < 3; ++ch) {
        err = std::max(err, std::abs(out.rgb.data()[ch] - c[ch] * (1.0 - std::exp(-sigma * length))));
      }
    }
    r.checks.push_back({"homogeneous medium N=" + std::to_string(n), err, 1e-6});
  }
  double weight_err = 0.0, trans_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 4, n = 1 + static_cast<std::size_t>(u01(rng) * 64);
    D sigma = D::uniform({b, n}, rng, 0.0, 10.0);
    D delta = D::uniform({b, n}, rng, 0.0, 0.2);
    D col = D::uniform({b, n, 3}, rng, 0.0, 1.0);
    const auto out = composite(sigma, col, delta);
    for (std::size_t ray = 0; ray < b; ++ray) {
      double optical = 0.0, wsum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        trans_err = std::max(trans_err, std::abs(out.transmittance.data()[ray * n + i] - std::exp(-optical)));
        optical += sigma.data()[ray * n + i] * delta.data()[ray * n + i];
        wsum += out.weights.data()[ray * n + i];
      }
      weight_err = std::max(weight_err, std::abs(wsum - (1.0 - std::exp(-optical))));
    }
  }
  r.checks.push_back({"weight sum = 1 - exp(-optical depth)", weight_err, 1e-6});
  r.checks.push_back({"transmittance = exp(-prefix optical depth)", trans_err, 1e-6});
  return r;
}

// ---------------------------------------------------------------------------

Eigen::Matrix3d random_rotation(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

CameraPose random_pose(Rng& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  CameraPose p;
  p.rotation = random_rotation(rng);
  p.center = Eigen::Vector3d(u(rng), u(rng), u(rng));
  p.focal = 0.8 + 0.1 * std::abs(u(rng));
  p.width = 32;
  p.height = 24;
  p.principal = {16.0, 12.0};
  return p;
}

Eigen::Vector3d random_vector(Rng& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

double pose_distance(const CameraPose& a, const CameraPose& b) {
  return std::max((a.rotation - b.rotation).cwiseAbs().maxCoeff(), (a.center - b.center).cwiseAbs().maxCoeff());
}

SuiteReport camera_suite() {
  SuiteReport r;
  Rng rng(404);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  double invariance = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const CameraPose in = random_pose(rng), target = random_pose(rng);
    const double z = u(rng);
    const Eigen::Matrix3d rot = random_rotation(rng);
    const Eigen::Vector3d shift = random_vector(rng, 10.0);
    CameraPose in2 = in, target2 = target;
    in2.rotation = rot * in.rotation;
    in2.center = rot * in.center + shift;
    target2.rotation = rot * target.rotation;
    target2.center = rot * target.center + shift;
    invariance = std::max(invariance, pose_distance(relativize_pose(in, target, z), relativize_pose(in2, target2, z)));
  }
  r.checks.push_back({"relativize invariant under 1000 common rigid transforms", invariance, 1e-6});

  double self = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const CameraPose in = random_pose(rng);
    const double z = u(rng);
    const CameraPose rel = relativize_pose(in, in, z);
    CameraPose expect = rel;
    expect.rotation = Eigen::Matrix3d::Identity();
    expect.center = conditioned_input_center(z);
    self = std::max(self, pose_distance(rel, expect));
  }
  r.checks.push_back({"relativize(input, input) is exactly (I, C0(z))", self, 0.0});

  double reproject = 0.0, unit = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const CameraPose p = random_pose(rng);
    const double px = 32.0 * u(rng) / 3.0, py = 24.0 * u(rng) / 3.0;
    const Ray ray = generate_ray(p, px, py);
    unit = std::max(unit, std::abs(ray.direction.norm() - 1.0));
    const Eigen::Vector2d back = project_point(p, ray.origin + u(rng) * ray.direction);
    reproject = std::max(reproject, (back - Eigen::Vector2d(px, py)).cwiseAbs().maxCoeff());
  }
  r.checks.push_back({"ray directions have unit length", unit, 1e-12});
  r.checks.push_back({"points along a pixel ray project back to the pixel", reproject, 1e-9});

  double bbox = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Eigen::Vector3d> pts;
    const double s = u(rng);
    const Eigen::Vector3d offset = random_vector(rng, 5.0);
    for (int i = 0; i < 20; ++i) pts.push_back(offset + random_vector(rng, s));
    const auto ns = normalize_scene(pts, {random_pose(rng), random_pose(rng)}, 0);
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e300), hi = -lo;
    for (const auto& p : pts) {
      const Eigen::Vector3d q = ns.normalization.apply(p);
      lo = lo.cwiseMin(q);
      hi = hi.cwiseMax(q);
    }
    bbox = std::max({bbox, ((lo + hi) / 2).cwiseAbs().maxCoeff(), std::abs((hi - lo).maxCoeff() - 1.0),
                     std::abs(ns.normalization.z - ns.poses[0].center.norm())});
  }
  r.checks.push_back({"normalized bounding box centered with unit extent", bbox, 1e-12});
  return r;
}

// ---------------------------------------------------------------------------

SuiteReport tokens_suite() {
  SuiteReport r;
  const ModelConfig paper = ModelConfig::paper();
  auto exact = [&](const std::string& name, double got, double expect) {
    r.checks.push_back({name + " = " + std::to_string(static_cast<long long>(got)), std::abs(got - expect), 0.0});
  };
  exact("feature tokens", static_cast<double>(feature_token_count(paper.encoder)), 576);
  exact("output tokens", static_cast<double>(output_token_count(paper.decoder)), 816);
  exact("matrix head width", static_cast<double>(matrix_head_width(paper.decoder)), 288);
  exact("vector head width", static_cast<double>(vector_head_width(paper.decoder)), 96);
  const ParameterCounts counts = count_parameters(paper);
  auto near = [&](const std::string& name, std::size_t got, double expect) {
    r.checks.push_back({name + " " + std::to_string(got) + " vs " + std::to_string(static_cast<long long>(expect)),
                        std::abs(static_cast<double>(got) - expect) / expect, 0.10});
  };
  near("encoder parameters", counts.encoder, 85e6);
  near("decoder parameters", counts.decoder, 131e6);

  // The declared count agrees with an allocated model.
  const ModelConfig toy = ModelConfig::toy();
  NvistModel<float> model(toy, 0);
  std::size_t allocated = 0;
  for (const auto& p : model.parameters()) allocated += p.value.numel();
  exact("toy declared minus allocated parameters", static_cast<double>(count_parameters(toy).total()) - allocated, 0);
  return r;
}

// ---------------------------------------------------------------------------

double pairwise_distortion(const std::vector<double>& w, const NormalizedIntervals& iv) {
  double total = 0.0;
  for (std::size_t ray = 0; ray < iv.rays; ++ray) {
    for (std::size_t i = 0; i < iv.samples; ++i) {
      const std::size_t a = ray * iv.samples + i;
      for (std::size_t j = 0; j < iv.samples; ++j) {
        const std::size_t b = ray * iv.samples + j;
        total += w[a] * w[b] * std::abs((iv.start[a] + iv.width[a] / 2) - (iv.start[b] + iv.width[b] / 2));
      }
      total += w[a] * w[a] * iv.width[a] / 3.0;
    }
  }
  return total / static_cast<double>(iv.rays);
}

SuiteReport losses_suite() {
  SuiteReport r;
  Rng rng(505);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double dist = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    NormalizedIntervals iv;
    iv.rays = 3;
    iv.samples = 1 + static_cast<std::size_t>(u01(rng) * 20);
    for (std::size_t ray = 0; ray < iv.rays; ++ray) {
      std::vector<double> cuts{0.0, 1.0};
      for (std::size_t i = 1; i < iv.samples; ++i) cuts.push_back(u01(rng));
      std::sort(cuts.begin(), cuts.end());
      for (std::size_t i = 0; i < iv.samples; ++i) {
        iv.start.push_back(cuts[i]);
        iv.width.push_back(cuts[i + 1] - cuts[i]);
      }
    }
    D w = D::uniform({iv.rays, iv.samples}, rng, 0.0, 1.0 / static_cast<double>(iv.samples));
    dist = std::max(dist, std::abs(distortion_loss(w, iv).item() - pairwise_distortion(w.values(), iv)));
  }
  r.checks.push_back({"distortion loss vs pairwise sum", dist, 1e-12});

  std::vector<float> img(24 * 20 * 3);
  for (auto& v : img) v = static_cast<float>(u01(rng));
  r.checks.push_back({"psnr of identical images is the 99 dB cap", std::abs(psnr(img, img) - 99.0), 0.0});
  r.checks.push_back({"ssim of identical images is 1", std::abs(ssim(img, img, 24, 20) - 1.0), 1e-12});
  std::vector<float> shifted(img.size(), 0.25f), flat(img.size(), 0.75f);
  const double c1 = 0.01 * 0.01;
  const double expect = (2 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
  r.checks.push_back({"ssim of constant images in closed form", std::abs(ssim(shifted, flat, 24, 20) - expect), 1e-9});
  std::vector<float> noisy = img;
  for (auto& v : noisy) v = std::clamp(v + 0.1f * static_cast<float>(u01(rng) - 0.5), 0.0f, 1.0f);
  double mse = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) mse += std::pow(static_cast<double>(img[i]) - noisy[i], 2);
  mse /= static_cast<double>(img.size());
  r.checks.push_back({"psnr = 10 log10(1 / mse)", std::abs(psnr(img, noisy) - 10.0 * std::log10(1.0 / mse)), 1e-9});
  return r;
}

// ---------------------------------------------------------------------------

SuiteReport persistence_suite() {
  SuiteReport r;
  Rng rng(606);
  r.checks.push_back({"lr(0) = lr0 and lr(total) = 0",
                      std::abs(lr_schedule(0, 777, 4e-4) - 4e-4) + std::abs(lr_schedule(777, 777, 4e-4)), 0.0});
  r.checks.push_back({"lr(total / 2) = lr0 / 2", std::abs(lr_schedule(500, 1000, 6e-5) - 3e-5), 1e-18});

  {
    D p = D::randn({8}, rng).set_requires_grad(true);
    const std::vector<double> before(p.data().begin(), p.data().end());
    Adam<double> adam({{"p", p, ParamGroup::Encoder}});
    std::vector<double> g(8);
    for (auto& v : g) v = std::normal_distribution<double>(0.0, 1.0)(rng);
    std::copy(g.begin(), g.end(), p.grad().begin());
    adam.step({6e-5, 4e-4, 0.0});
    double err = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      const double expect = -6e-5 * (g[i] > 0 ? 1.0 : -1.0);
      err = std::max(err, std::abs((p.data()[i] - before[i]) - expect) / 6e-5);
    }
    r.checks.push_back({"first Adam step moves -lr sign(g), relative", err, 1e-6});

    D q = D::randn({8}, rng).set_requires_grad(true);
    const std::vector<double> q0(q.data().begin(), q.data().end());
    Adam<double> fresh({{"q", q, ParamGroup::DecoderRenderer}});
    fresh.zero_grad();
    fresh.step({6e-5, 4e-4, 0.0});
    double moved = 0.0;
    for (std::size_t i = 0; i < 8; ++i) moved = std::max(moved, std::abs(q.data()[i] - q0[i]));
    r.checks.push_back({"zero gradient leaves parameters unchanged", moved, 0.0});
    r.checks.push_back({"zero gradient still counts a step", std::abs(static_cast<double>(fresh.steps()) - 1.0), 0.0});
  }

  Checkpoint ck;
  const D a = D::randn({3, 5}, rng);
  ck.put("param/a", a.shape(), std::span<const double>(a.data()));
  ck.put_u64("train.step", 42);
  ck.put_text("meta.kind", "nvist");
  const auto bytes = ck.serialize();
  const auto again = Checkpoint::deserialize(bytes).serialize();
  r.checks.push_back({"checkpoint save/load/save byte identity", again == bytes ? 0.0 : 1.0, 0.0});
  double undetected = 0.0;
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    try {
      Checkpoint::deserialize(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n)));
      undetected += 1.0;
    } catch (const CheckpointCorruptError&) {
    }
  }
  r.checks.push_back({"truncated checkpoints rejected (count undetected)", undetected, 0.0});

  // Two seeded training runs give identical metric rows and checkpoints.
  const auto dir = std::filesystem::temp_directory_path() / ("nvist_verify_" + std::to_string(::getpid()));
  DatasetOptions opt;
  opt.scenes = 2;
  opt.views = 3;
  opt.width = 16;
  opt.height = 16;
  opt.holdout_stride = 0;
  const Dataset ds = generate_dataset(dir, opt);
  ModelConfig cfg = ModelConfig::tiny();
  cfg.encoder.image_height = cfg.encoder.image_width = 16;
  TrainConfig tc;
  tc.steps = 4;
  tc.pixels_per_image = 24;
  auto run = [&] {
    NvistModel<float> model(cfg, 1);
    Trainer trainer(model, ds, tc);
    std::string rows;
    for (std::size_t s = 0; s < tc.steps; ++s) rows += metrics_row(trainer.step()) + "\n";
    const auto bytes = trainer.checkpoint().serialize();
    return rows + std::string(bytes.begin(), bytes.end());
  };
  r.checks.push_back({"seeded training runs identical", run() == run() ? 0.0 : 1.0, 0.0});
  std::filesystem::remove_all(dir);
  return r;
}

}  // namespace

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.passed(); });
}

double SuiteReport::max_error() const {
  double m = 0.0;
  for (const auto& c : checks) m = std::max(m, c.error);
  return m;
}

double SuiteReport::worst_ratio() const {
  double m = 0.0;
  for (const auto& c : checks) {
    if (c.error == 0.0) continue;
    m = std::max(m, c.tolerance > 0.0 ? c.error / c.tolerance : std::numeric_limits<double>::infinity());
  }
  return m;
}

const std::vector<std::string>& verify_suite_names() {
  static const std::vector<std::string> names{"gradcheck", "vm", "quadrature", "camera", "tokens", "losses", "persistence"};
  return names;
}

SuiteReport run_verify_suite(const std::string& name) {
  static const std::map<std::string, SuiteReport (*)()> suites{
      {"gradcheck", gradcheck_suite}, {"vm", vm_suite},         {"quadrature", quadrature_suite},
      {"camera", camera_suite},       {"tokens", tokens_suite}, {"losses", losses_suite},
      {"persistence", persistence_suite},
  };
  auto it = suites.find(name);
  if (it == suites.end()) {
    std::string known;
    for (const auto& n : verify_suite_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown verify suite '" + name + "' (known: " + known + ")");
  }
  const auto start = std::chrono::steady_clock::now();
  SuiteReport r = it->second();
  r.suite = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void print_suite_report(const SuiteReport& report, std::ostream& out) {
  char buf[512];
  for (const auto& c : report.checks) {
    std::snprintf(buf, sizeof(buf), "  %-4s %-56s max err %.3e (tol %.1e)\n", c.passed() ? "ok" : "FAIL", c.name.c_str(),
                  c.error, c.tolerance);
    out << buf;
    if (!c.passed() && !c.detail.empty()) out << "         " << c.detail << "\n";
  }
  std::snprintf(buf, sizeof(buf), "suite %-12s %s  %zu checks  max err %.3e  %.1fs\n", report.suite.c_str(),
                report.passed() ? "PASS" : "FAIL", report.checks.size(), report.max_error(), report.seconds);
  out << buf;
}

}  // namespace nvist
