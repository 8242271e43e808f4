#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "nvist/checkpoint.h"
#include "nvist/config.h"
#include "nvist/train.h"

using namespace nvist;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("nvist_train_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ModelConfig small_config() {
  ModelConfig c = ModelConfig::tiny();
  c.encoder.image_height = 16;
  c.encoder.image_width = 16;
  return c;
}

const Dataset& small_dataset() {
  static const Dataset ds = [] {
    DatasetOptions opt;
    opt.scenes = 4;
    opt.views = 4;
    opt.width = 16;
    opt.height = 16;
    opt.holdout_stride = 4;
    return generate_dataset(scratch_dir("data"), opt);
  }();
  return ds;
}

std::vector<std::vector<float>> snapshot(const std::vector<NamedParameter<float>>& params) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params) out.emplace_back(p.value.data().begin(), p.value.data().end());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(KeyValueConfig, SectionsCommentsAndTypes) {
  auto kv = KeyValueConfig::parse(
      "top = 1\n"
      "# comment\n"
      "[train]\n"
      "  lr = 2.5e-4   # trailing\n"
      "steps=30\n"
      "freeze = true\n"
      "[data]\n"
      "dir = some/path\n");
  EXPECT_EQ(kv.get_size("top", 0), 1u);
  EXPECT_DOUBLE_EQ(kv.get_double("train.lr", 0), 2.5e-4);
  EXPECT_EQ(kv.get_u64("train.steps", 0), 30u);
  EXPECT_TRUE(kv.get_bool("train.freeze", false));
  EXPECT_EQ(kv.get_string("data.dir", ""), "some/path");
  EXPECT_EQ(kv.get_size("absent.key", 7), 7u);
  EXPECT_NO_THROW(kv.reject_unconsumed());
}

TEST(KeyValueConfig, Errors) {
  try {
    KeyValueConfig::parse("a = 1\nbroken line\n", "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(KeyValueConfig::parse("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse("[open\n"), ConfigError);

  auto kv = KeyValueConfig::parse("[train]\nsteps = ten\nlr = x\nflag = maybe\ntypo = 3\n");
  EXPECT_THROW(kv.get_u64("train.steps", 0), ConfigError);
  EXPECT_THROW(kv.get_double("train.lr", 0), ConfigError);
  EXPECT_THROW(kv.get_bool("train.flag", false), ConfigError);
  try {
    kv.reject_unconsumed();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.typo"), std::string::npos);
  }
}

TEST(KeyValueConfig, ModelConfigRoundTrip) {
  for (ModelConfig c : {ModelConfig::toy(), ModelConfig::paper(), small_config()}) {
    c.decoder.head_scale = 0.123456789012345;
    c.mae.mask_ratio = 0.6;
    KeyValueConfig kv;
    write_model_config(c, kv);
    auto parsed = KeyValueConfig::parse(kv.dump());
    ModelConfig back = read_model_config(parsed);
    EXPECT_NO_THROW(parsed.reject_unconsumed());
    KeyValueConfig again;
    write_model_config(back, again);
    EXPECT_EQ(kv.dump(), again.dump());
    EXPECT_EQ(back.decoder.head_scale, c.decoder.head_scale);
  }
  auto bad = KeyValueConfig::parse("[model]\npreset = huge\n");
  EXPECT_THROW(read_model_config(bad), ConfigError);
  auto inconsistent = KeyValueConfig::parse("[encoder]\npatch = 5\n");
  EXPECT_THROW(read_model_config(inconsistent), ConfigError);
}

// ---------------------------------------------------------------------------

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  const std::vector<float> f = {1.5f, -2.0f, 3.25f, 0.0f, -0.0f, 1e-30f};
  const std::vector<double> d = {M_PI, -1e300};
  ck.put("a/float", {2, 3}, std::span<const float>(f));
  ck.put("b/double", {2}, std::span<const double>(d));
  ck.put_u64("step", 123456789012345ull);
  ck.put_text("meta", "hello\nworld");
  return ck;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const Checkpoint ck = sample_checkpoint();
  const auto bytes = ck.serialize();
  const Checkpoint back = Checkpoint::deserialize(bytes);
  EXPECT_EQ(back.serialize(), bytes);
  std::vector<float> f(6);
  back.get("a/float", {2, 3}, std::span<float>(f));
  EXPECT_EQ(f[2], 3.25f);
  EXPECT_TRUE(std::signbit(f[4]));
  std::vector<double> d(2);
  back.get("b/double", {2}, std::span<double>(d));
  EXPECT_EQ(d[0], M_PI);
  EXPECT_EQ(back.get_u64("step"), 123456789012345ull);
  EXPECT_EQ(back.get_text("meta"), "hello\nworld");

  const fs::path dir = scratch_dir("ck");
  fs::create_directories(dir);
  ck.save(dir / "a.nvst");
  Checkpoint::load(dir / "a.nvst").save(dir / "b.nvst");
  EXPECT_EQ(slurp(dir / "a.nvst"), slurp(dir / "b.nvst"));
  EXPECT_FALSE(fs::exists(dir / "a.nvst.tmp"));
  fs::remove_all(dir);
}

TEST(Checkpoint, EveryTruncationIsDetected) {
  const auto bytes = sample_checkpoint().serialize();
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_THROW(Checkpoint::deserialize(cut), CheckpointCorruptError) << "length " << n;
  }
}

TEST(Checkpoint, CorruptionVersionShapeAndMissing) {
  auto bytes = sample_checkpoint().serialize();
  auto flipped = bytes;
  flipped[flipped.size() - 10] ^= 0x40;
  EXPECT_THROW(Checkpoint::deserialize(flipped), CheckpointCorruptError);

  auto versioned = bytes;
  versioned[4] = 7;
  try {
    Checkpoint::deserialize(versioned);
    FAIL();
  } catch (const CheckpointVersionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('7'), std::string::npos);
    EXPECT_NE(msg.find('1'), std::string::npos);
  }

  const Checkpoint ck = sample_checkpoint();
  std::vector<float> f(6);
  EXPECT_THROW(ck.get("a/float", {3, 2}, std::span<float>(f)), CheckpointShapeError);
  std::vector<double> d(6);
  EXPECT_THROW(ck.get("a/float", {2, 3}, std::span<double>(d)), CheckpointShapeError);
  EXPECT_THROW(ck.get("nope", {2, 3}, std::span<float>(f)), CheckpointShapeError);
  EXPECT_THROW(Checkpoint::load(scratch_dir("missing") / "x.nvst"), CheckpointMissingError);
}

// ---------------------------------------------------------------------------

TEST(LrSchedule, CosineEndpoints) {
  EXPECT_DOUBLE_EQ(lr_schedule(0, 100, 4e-4), 4e-4);
  EXPECT_NEAR(lr_schedule(50, 100, 4e-4), 2e-4, 1e-18);
  EXPECT_EQ(lr_schedule(100, 100, 4e-4), 0.0);
  EXPECT_NEAR(lr_schedule(25, 100, 1.0), 0.5 * (1 + std::sqrt(0.5)), 1e-15);
  for (std::size_t s = 1; s <= 100; ++s) EXPECT_LT(lr_schedule(s, 100, 1.0), lr_schedule(s - 1, 100, 1.0));
}

TEST(LrSchedule, WarmupRamp) {
  EXPECT_EQ(warmup_factor(0, 0), 1.0);
  EXPECT_EQ(warmup_factor(0, 4), 0.25);
  EXPECT_EQ(warmup_factor(2, 4), 0.75);
  EXPECT_EQ(warmup_factor(3, 4), 1.0);
  EXPECT_EQ(warmup_factor(40, 4), 1.0);
}

namespace {

NamedParameter<double> make_param(const std::string& name, std::vector<double> v, ParamGroup g) {
  const std::size_t n = v.size();
  Tensor<double> t(Shape{n}, std::move(v));
  t.set_requires_grad(true);
  return {name, t, g};
}

void set_grad(const NamedParameter<double>& p, const std::vector<double>& g) {
  Tensor<double> t = p.value;
  auto grad = t.grad();
  std::copy(g.begin(), g.end(), grad.begin());
}

}  // namespace

TEST(Adam, MatchesScalarRecurrence) {
  auto p = make_param("w", {0.5, -1.0, 2.0}, ParamGroup::DecoderRenderer);
  Adam<double> adam({p}, {0.9, 0.95, 1e-8});
  const std::vector<std::vector<double>> grads = {{1.0, -2.0, 0.0}, {0.5, 0.5, 3.0}, {-1.0, 0.0, 1e-3}};
  std::vector<double> x = {0.5, -1.0, 2.0}, m(3, 0.0), v(3, 0.0);
  const double lr = 0.01;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    adam.zero_grad();
    set_grad(p, grads[t - 1]);
    adam.step({0.0, lr, 0.0});
    for (std::size_t k = 0; k < 3; ++k) {
      const double g = grads[t - 1][k];
      m[k] = 0.9 * m[k] + 0.1 * g;
      v[k] = 0.95 * v[k] + 0.05 * g * g;
      const double mh = m[k] / (1 - std::pow(0.9, t));
      const double vh = v[k] / (1 - std::pow(0.95, t));
      x[k] -= lr * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p.value.data()[k], x[k], 1e-12) << "step " << t << " entry " << k;
    }
  }
  EXPECT_EQ(adam.steps(), 3u);
  // First step moves each coordinate with nonzero gradient by lr against its sign.
  auto q = make_param("q", {0.0, 0.0}, ParamGroup::DecoderRenderer);
  Adam<double> fresh({q});
  set_grad(q, {3.0, -1e-4});
  fresh.step({0.0, 0.1, 0.0});
  EXPECT_NEAR(q.value.data()[0], -0.1, 1e-9);
  EXPECT_NEAR(q.value.data()[1], 0.1, 1e-4);
}

TEST(Adam, GroupsFrozenAndZeroGradient) {
  auto enc = make_param("enc", {1.0, 2.0}, ParamGroup::Encoder);
  auto dec = make_param("dec", {1.0, 2.0}, ParamGroup::DecoderRenderer);
  auto frozen = make_param("frozen", {1.0, 2.0}, ParamGroup::DecoderRenderer);
  auto still = make_param("still", {1.0, 2.0}, ParamGroup::DecoderRenderer);
  Adam<double> adam({enc, dec, frozen, still});
  set_grad(enc, {1.0, 1.0});
  set_grad(dec, {1.0, 1.0});
  set_grad(frozen, {1.0, 1.0});
  Tensor<double> f = frozen.value;
  f.set_requires_grad(false);
  adam.step({0.0, 0.1, 0.0});
  EXPECT_EQ(enc.value.data()[0], 1.0);
  EXPECT_NEAR(dec.value.data()[0], 0.9, 1e-9);
  EXPECT_EQ(frozen.value.data()[0], 1.0);
  EXPECT_EQ(still.value.data()[1], 2.0);
}

TEST(Adam, SaveLoadContinuesIdentically) {
  auto run = [](bool reload) {
    auto p = make_param("w", {0.3, -0.7}, ParamGroup::DecoderRenderer);
    Adam<double> adam({p});
    for (int t = 0; t < 6; ++t) {
      if (reload && t == 3) {
        Checkpoint ck;
        save_parameters(adam.parameters(), ck);
        adam.save(ck);
        ck = Checkpoint::deserialize(ck.serialize());
        auto p2 = make_param("w", {9.0, 9.0}, ParamGroup::DecoderRenderer);
        Adam<double> other({p2});
        other.load(ck);
        load_parameters(other.parameters(), ck);
        adam = other;
        p = p2;
      }
      adam.zero_grad();
      const double x0 = p.value.data()[0], x1 = p.value.data()[1];
      set_grad(p, {2 * x0 - 1, std::sin(x1)});
      adam.step({0.0, 0.05, 0.0});
    }
    return std::vector<double>(p.value.data().begin(), p.value.data().end());
  };
  EXPECT_EQ(run(false), run(true));
}

TEST(LoadParameters, AtomicOnMissingEntry) {
  auto a = make_param("a", {1.0}, ParamGroup::Encoder);
  auto b = make_param("b", {2.0, 3.0}, ParamGroup::DecoderRenderer);
  Checkpoint ck;
  const std::vector<double> av = {5.0};
  ck.put("param/a", {1}, std::span<const double>(av));
  EXPECT_THROW(load_parameters(std::vector{a, b}, ck), CheckpointShapeError);
  EXPECT_EQ(a.value.data()[0], 1.0);
  load_parameters(std::vector{a, b}, ck, "a");
  EXPECT_EQ(a.value.data()[0], 5.0);
  EXPECT_EQ(b.value.data()[0], 2.0);
}

// ---------------------------------------------------------------------------

TEST(ViewPair, RelativeFrame) {
  const Dataset& ds = small_dataset();
  const SceneRecord& scene = ds.scenes[0];
  ViewPair self = make_view_pair(scene, 1, 1);
  EXPECT_LT((self.target.rotation - Eigen::Matrix3d::Identity()).norm(), 1e-9);
  const double z = scene.normalized_pose(1).center.norm();
  EXPECT_NEAR(self.target.center.z(), -z, 1e-9);
  EXPECT_NEAR(self.target.center.head<2>().norm(), 0.0, 1e-9);
  EXPECT_EQ(self.image.shape(), (Shape{16, 16, 3}));
  // Distances between camera centers survive the change of frame.
  ViewPair pair = make_view_pair(scene, 1, 2);
  const double d_norm = (scene.normalized_pose(2).center - scene.normalized_pose(1).center).norm();
  EXPECT_NEAR((pair.target.center - self.target.center).norm(), d_norm, 1e-9);
}

TEST(Trainer, RejectsMismatchedImageSize) {
  NvistModel<float> model(ModelConfig::tiny(), 1);
  EXPECT_THROW(Trainer(model, small_dataset(), TrainConfig{}), ConfigError);
}

TEST(Trainer, DeterministicAndResumable) {
  TrainConfig cfg;
  cfg.steps = 6;
  cfg.pixels_per_image = 32;
  cfg.images_per_step = 2;
  cfg.seed = 11;
  auto run = [&](std::size_t split) {
    NvistModel<float> model(small_config(), 3);
    Trainer trainer(model, small_dataset(), cfg);
    std::vector<std::string> rows;
    for (std::size_t s = 0; s < split; ++s) rows.push_back(metrics_row(trainer.step()));
    const auto bytes = trainer.checkpoint().serialize();
    NvistModel<float> resumed_model(small_config(), 99);
    Trainer resumed(resumed_model, small_dataset(), cfg);
    resumed.restore(Checkpoint::deserialize(bytes));
    EXPECT_EQ(resumed.next_step(), split);
    for (std::size_t s = split; s < cfg.steps; ++s) rows.push_back(metrics_row(resumed.step()));
    return std::make_pair(rows, resumed.checkpoint().serialize());
  };
  const auto straight = run(cfg.steps);
  const auto split = run(3);
  EXPECT_EQ(straight.first, split.first);
  EXPECT_EQ(straight.second, split.second);
  EXPECT_EQ(straight.first.front().substr(0, 2), "1,");
  NvistModel<float> done(small_config(), 3);
  Trainer finished(done, small_dataset(), cfg);
  finished.restore(Checkpoint::deserialize(straight.second));
  EXPECT_THROW(finished.step(), ContractError);
}

TEST(Trainer, FreezeEncoderLeavesEncoderUntouched) {
  TrainConfig cfg;
  cfg.steps = 3;
  cfg.pixels_per_image = 16;
  cfg.freeze_encoder = true;
  NvistModel<float> model(small_config(), 5);
  const auto before = snapshot(model.parameters());
  Trainer trainer(model, small_dataset(), cfg);
  for (int s = 0; s < 3; ++s) trainer.step();
  const auto after = snapshot(model.parameters());
  bool decoder_moved = false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (model.parameters()[i].group == ParamGroup::Encoder) {
      EXPECT_EQ(before[i], after[i]) << model.parameters()[i].name;
    } else if (before[i] != after[i]) {
      decoder_moved = true;
    }
  }
  EXPECT_TRUE(decoder_moved);
}

TEST(Trainer, RestoreRejectsOtherConfigsAtomically) {
  TrainConfig cfg;
  cfg.steps = 2;
  cfg.pixels_per_image = 16;
  NvistModel<float> model(small_config(), 5);
  Trainer trainer(model, small_dataset(), cfg);
  trainer.step();
  Checkpoint ck = trainer.checkpoint();

  ModelConfig wider = small_config();
  wider.renderer.hidden = 12;
  NvistModel<float> other(wider, 5);
  const auto before = snapshot(other.parameters());
  Trainer other_trainer(other, small_dataset(), cfg);
  EXPECT_THROW(other_trainer.restore(ck), CheckpointShapeError);
  EXPECT_EQ(snapshot(other.parameters()), before);
  EXPECT_EQ(other_trainer.next_step(), 0u);
}

TEST(MaePretrainer, LossDecreasesAndDecoderUntouched) {
  MaeTrainConfig cfg;
  cfg.steps = 40;
  cfg.lr = 3e-3;
  cfg.images_per_step = 4;
  NvistModel<float> model(small_config(), 2);
  const auto before = snapshot(model.parameters());
  MaePretrainer pre(model, small_dataset(), cfg);
  double first = 0.0, last = 0.0;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const double loss = pre.step().loss;
    if (s < 5) first += loss / 5;
    if (s >= cfg.steps - 5) last += loss / 5;
  }
  EXPECT_LT(last, 0.7 * first);
  const auto after = snapshot(model.parameters());
  bool encoder_moved = false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (model.parameters()[i].group == ParamGroup::Encoder) {
      encoder_moved |= before[i] != after[i];
    } else {
      EXPECT_EQ(before[i], after[i]) << model.parameters()[i].name;
    }
  }
  EXPECT_TRUE(encoder_moved);

  const Checkpoint ck = pre.checkpoint();
  NvistModel<float> fresh(small_config(), 8);
  load_parameters(fresh.parameters(), ck, "encoder.");
  const auto loaded = snapshot(fresh.parameters());
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (model.parameters()[i].group == ParamGroup::Encoder) {
      EXPECT_EQ(loaded[i], after[i]);
    }
  }
}

// ---------------------------------------------------------------------------

TEST(RunSteps, MetricsAndCheckpointsWithResume) {
  const fs::path dir = scratch_dir("run");
  std::size_t counter = 0;
  auto step = [&] {
    ++counter;
    StepMetrics m;
    m.step = counter;
    m.loss = 1.0 / static_cast<double>(counter);
    return m;
  };
  auto ck = [&] {
    Checkpoint c;
    c.put_u64("train.step", counter);
    return c;
  };
  run_steps(step, ck, 0, 5, 2, dir);
  EXPECT_TRUE(fs::exists(dir / "checkpoint_000002.nvst"));
  EXPECT_TRUE(fs::exists(dir / "checkpoint_000004.nvst"));
  EXPECT_FALSE(fs::exists(dir / "checkpoint_000005.nvst"));
  EXPECT_EQ(Checkpoint::load(dir / "latest.nvst").get_u64("train.step"), 5u);
  const std::string full = slurp(dir / "metrics.csv");

  counter = 2;
  run_steps(step, ck, 2, 5, 2, dir);
  EXPECT_EQ(slurp(dir / "metrics.csv"), full);
  std::istringstream lines(full);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, metrics_header());
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, 5);
  fs::remove_all(dir);
}

TEST(Evaluate, GroundTruthBaselineAndErrors) {
  const Dataset& ds = small_dataset();
  const auto test = ds.split(true);
  ASSERT_EQ(test.size(), 1u);
  auto truth = [](const SceneRecord& scene) {
    std::vector<std::vector<float>> out;
    for (std::size_t t = 1; t < scene.views.size(); ++t) out.push_back(scene.views[t].rgb);
    return out;
  };
  const EvalReport r = evaluate_predictions(ds, test, truth);
  EXPECT_EQ(r.psnr, 99.0);
  EXPECT_NEAR(r.ssim, 1.0, 1e-12);
  ASSERT_EQ(r.scenes.size(), 1u);
  EXPECT_EQ(r.scenes[0].views, 3u);

  auto white = [](const SceneRecord& scene) {
    return std::vector<std::vector<float>>(scene.views.size() - 1, std::vector<float>(scene.views[0].rgb.size(), 1.0f));
  };
  const EvalReport b = evaluate_predictions(ds, test, white);
  EXPECT_DOUBLE_EQ(b.psnr, b.baseline_psnr);
  EXPECT_DOUBLE_EQ(b.ssim, b.baseline_ssim);
  EXPECT_LT(b.baseline_psnr, 99.0);

  EXPECT_THROW(evaluate_predictions(ds, {}, truth), EvaluationError);

  NvistModel<float> model(small_config(), 4);
  const EvalReport u = evaluate(model, ds, test);
  EXPECT_TRUE(std::isfinite(u.psnr));
  EXPECT_GT(u.ssim, -1.0);
  EXPECT_LE(u.ssim, 1.0);
}
