#include <gtest/gtest.h>

#include <cmath>

#include "nvist/model.h"

using namespace nvist;

namespace {
using D = Tensor<double>;

bool within(double value, double target, double rel) { return std::abs(value - target) <= rel * target; }
}  // namespace

TEST(ModelConfig, PaperTokenArithmetic) {
  const ModelConfig c = ModelConfig::paper();
  EXPECT_EQ(feature_token_count(c.encoder), 576u);
  EXPECT_EQ(output_token_count(c.decoder), 816u);
  EXPECT_EQ(matrix_head_width(c.decoder), 288u);
  EXPECT_EQ(vector_head_width(c.decoder), 96u);
}

TEST(ModelConfig, ToyTokenArithmetic) {
  DecoderConfig d;
  d.vm_resolution = 12;
  d.patch = 3;
  EXPECT_EQ(output_token_count(d), 60u);
  d.vm_channels = 2;
  EXPECT_EQ(matrix_head_width(d), 18u);
  EXPECT_EQ(vector_head_width(d), 6u);
  EncoderConfig e;
  e.image_height = e.image_width = 32;
  e.patch = 4;
  EXPECT_EQ(feature_token_count(e), 64u);
}

TEST(ModelConfig, TokenFormulasOverRandomConfigs) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t q = 1 + rng() % 4, g = 1 + rng() % 6, p = 1 + rng() % 5;
    const std::size_t rows = 1 + rng() % 8, cols = 1 + rng() % 8;
    DecoderConfig d;
    d.patch = q;
    d.vm_resolution = q * g;
    EncoderConfig e;
    e.patch = p;
    e.image_height = p * rows;
    e.image_width = p * cols;
    EXPECT_EQ(output_token_count(d), 3 * g * g + 3 * g);
    EXPECT_EQ(feature_token_count(e), rows * cols);
    // Token rows exactly tile the VM factors.
    EXPECT_EQ(3 * g * g * q * q + 3 * g * q, 3 * d.vm_resolution * d.vm_resolution + 3 * d.vm_resolution);
  }
}

TEST(ModelConfig, ValidationErrors) {
  ModelConfig c = ModelConfig::toy();
  c.encoder.patch = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::toy();
  c.decoder.patch = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::toy();
  c.decoder.width = 64;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(ModelConfig::paper().validate());
  EXPECT_NO_THROW(ModelConfig::tiny().validate());
}

TEST(CountParameters, PaperScale) {
  const ParameterCounts c = count_parameters(ModelConfig::paper());
  EXPECT_TRUE(within(static_cast<double>(c.encoder), 85e6, 0.10)) << c.encoder;
  EXPECT_TRUE(within(static_cast<double>(c.decoder), 131e6, 0.10)) << c.decoder;
  EXPECT_TRUE(within(static_cast<double>(c.renderer), 7e3, 0.50)) << c.renderer;
}

TEST(CountParameters, MatchesAllocatedModel) {
  const ModelConfig cfg = ModelConfig::tiny();
  NvistModel<double> m(cfg, 3);
  std::size_t allocated = 0;
  for (const auto& p : m.parameters()) allocated += p.value.numel();
  EXPECT_EQ(allocated, count_parameters(cfg).total());
  // Hand count of the renderer MLP: (k + 3) * h + h + h * 3 + 3.
  EXPECT_EQ(count_parameters(cfg).renderer, (2 + 3) * 8 + 8 + 8 * 3 + 3u);
}

TEST(Encoder, ShapesAndDeterminism) {
  const ModelConfig cfg = ModelConfig::tiny();
  NvistModel<double> m(cfg, 4);
  Rng rng(5);
  D image = D::uniform({8, 8, 3}, rng, 0.0, 1.0);
  auto a = m.encoder()(image);
  auto b = m.encoder()(D(image.shape(), image.values()));
  EXPECT_EQ(a.features.shape(), (Shape{4, 16}));
  EXPECT_EQ(a.cls.shape(), (Shape{1, 16}));
  EXPECT_EQ(a.features.values(), b.features.values());
  EXPECT_EQ(a.cls.values(), b.cls.values());
  EXPECT_THROW(m.encoder()(D(Shape{8, 4, 3})), ConfigError);
}

TEST(VmLayout, PatchifyRoundTripWithIdentityHeads) {
  Rng rng(6);
  const std::size_t r = 6, k = 2, q = 3;
  VMRepresentation<double> vm;
  vm.vx = D::randn({r, k}, rng);
  vm.vy = D::randn({r, k}, rng);
  vm.vz = D::randn({r, k}, rng);
  vm.myz = D::randn({r, r, k}, rng);
  vm.mzx = D::randn({r, r, k}, rng);
  vm.mxy = D::randn({r, r, k}, rng);
  auto [m, v] = patchify_vm(vm, q);
  EXPECT_EQ(m.shape(), (Shape{12, 18}));
  EXPECT_EQ(v.shape(), (Shape{6, 6}));
  VMRepresentation<double> back = unpatchify_vm(m, v, r, q, k);
  EXPECT_EQ(back.myz.values(), vm.myz.values());
  EXPECT_EQ(back.mzx.values(), vm.mzx.values());
  EXPECT_EQ(back.mxy.values(), vm.mxy.values());
  EXPECT_EQ(back.vx.values(), vm.vx.values());
  EXPECT_EQ(back.vz.values(), vm.vz.values());
}

TEST(VmLayout, TokenToPositionAssignment) {
  // With R=6, q=3 each matrix has 4 tokens: token 5 is Mzx patch (0, 1);
  // vector tokens pair up per axis, so token 4 holds Vz cells 0..2.
  const std::size_t r = 6, k = 1, q = 3;
  std::vector<double> mrows(12 * 9, 0.0), vrows(6 * 3, 0.0);
  for (std::size_t j = 0; j < 9; ++j) mrows[5 * 9 + j] = 1.0 + static_cast<double>(j);
  vrows[4 * 3 + 2] = 7.0;
  auto vm = unpatchify_vm(D(Shape{12, 9}, mrows), D(Shape{6, 3}, vrows), r, q, k);
  // Within the patch the layout is (row, col): entry j at (j / 3, 3 + j % 3).
  EXPECT_EQ(vm.mzx.data()[(0 * r + 3) * k], 1.0);
  EXPECT_EQ(vm.mzx.data()[(1 * r + 5) * k], 6.0);
  EXPECT_EQ(vm.mzx.data()[(2 * r + 3) * k], 7.0);
  EXPECT_EQ(vm.vz.data()[2], 7.0);
  double total = 0.0;
  for (double x : vm.myz.values()) total += std::abs(x);
  EXPECT_EQ(total, 0.0);
  EXPECT_THROW(unpatchify_vm(D(Shape{11, 9}), D(Shape{6, 3}), r, q, k), ContractError);
}

TEST(Decoder, OutputShapesAndTokenCountError) {
  const ModelConfig cfg = ModelConfig::tiny();
  NvistModel<double> m(cfg, 7);
  Rng rng(8);
  D image = D::uniform({8, 8, 3}, rng, 0.0, 1.0);
  auto vm = m.predict(image, encode_conditioning(1.2, 1.8));
  EXPECT_EQ(vm.vx.shape(), (Shape{6, 2}));
  EXPECT_EQ(vm.myz.shape(), (Shape{6, 6, 2}));
  EXPECT_THROW(m.decoder().reshape_to_vm(D(Shape{17, 16})), ContractError);
  EXPECT_EQ(m.decoder().output_tokens.shape(), (Shape{18, 16}));
  EXPECT_EQ(m.decoder().position.shape(), (Shape{19, 16}));
}

TEST(Decoder, ZeroGatesCutFeatureAndConditionGradients) {
  const ModelConfig cfg = ModelConfig::tiny();
  NvistModel<double> m(cfg, 9);
  Rng rng(10);
  D features = D::randn({4, 16}, rng).set_requires_grad(true);
  D cls = D::randn({1, 16}, rng).set_requires_grad(true);
  ConditioningVector cv = encode_conditioning(1.1, 2.0);
  D cond = conditioning_tensor<double>(cv).set_requires_grad(true);
  auto vm = m.decoder()(features, cls, cond);
  D loss = add(add(sum(mul(vm.myz, vm.myz)), sum(vm.vx)), sum(mul(vm.mxy, vm.mzx)));
  loss.backward();
  for (double g : features.grad()) EXPECT_EQ(g, 0.0);
  for (double g : cls.grad()) EXPECT_EQ(g, 0.0);
  for (double g : cond.grad()) EXPECT_EQ(g, 0.0);
  double token_grad = 0.0;
  for (double g : m.decoder().output_tokens.grad()) token_grad += std::abs(g);
  EXPECT_GT(token_grad, 0.0);
}

TEST(Decoder, OpenGatesPassFeatureGradients) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.decoder.gate_init = 1.0;
  NvistModel<double> m(cfg, 11);
  Rng rng(12);
  D features = D::randn({4, 16}, rng).set_requires_grad(true);
  auto vm = m.decoder()(features, D::randn({1, 16}, rng), conditioning_tensor<double>(encode_conditioning(1.1, 2.0)));
  sum(mul(vm.myz, vm.myz)).backward();
  double total = 0.0;
  for (double g : features.grad()) total += std::abs(g);
  EXPECT_GT(total, 0.0);
}

TEST(Mae, MaskCounts) {
  Rng rng(13);
  PatchMask m = random_patch_mask(64, 0.75, rng);
  EXPECT_EQ(m.masked.size(), 48u);
  EXPECT_EQ(m.visible.size(), 16u);
  std::vector<bool> seen(64, false);
  for (auto i : m.masked) seen[i] = true;
  for (auto i : m.visible) {
    EXPECT_FALSE(seen[i]);
    seen[i] = true;
  }
  for (bool s : seen) EXPECT_TRUE(s);
  EXPECT_EQ(random_patch_mask(10, 0.25, rng).masked.size(), 3u);
  EXPECT_EQ(random_patch_mask(10, 0.0, rng).masked.size(), 0u);
  EXPECT_THROW(random_patch_mask(10, 1.0, rng), ContractError);
}

TEST(Mae, ZeroRatioLossIsZeroAndLossIsFinite) {
  const ModelConfig cfg = ModelConfig::tiny();
  Rng rng(14);
  ParamBuilder<double> b(rng);
  Encoder<double> enc(b, cfg.encoder);
  MaeHead<double> head(b, cfg.encoder, cfg.mae);
  D image = D::uniform({8, 8, 3}, rng, 0.0, 1.0);
  EXPECT_EQ(head.loss(enc, image, random_patch_mask(4, 0.0, rng)).item(), 0.0);
  D loss = head.loss(enc, image, random_patch_mask(4, 0.5, rng));
  EXPECT_TRUE(std::isfinite(loss.item()));
  EXPECT_GT(loss.item(), 0.0);
}

TEST(Mae, GradcheckThroughMaskedReconstruction) {
  const ModelConfig cfg = ModelConfig::tiny();
  Rng rng(15);
  ParamBuilder<double> b(rng);
  Encoder<double> enc(b, cfg.encoder);
  MaeHead<double> head(b, cfg.encoder, cfg.mae);
  D image = D::uniform({8, 8, 3}, rng, 0.0, 1.0);
  PatchMask mask = random_patch_mask(4, 0.5, rng);
  std::vector<D> params;
  for (const auto& p : b.parameters()) params.push_back(p.value);
  const auto r = gradcheck_detailed([&] { return head.loss(enc, image, mask); }, params, 1e-5);
  EXPECT_LE(r.max_error, 1e-4) << b.parameters()[r.param].name << "[" << r.index << "] analytic " << r.analytic << " numeric " << r.numeric;
}
