#include <CLI11.hpp>
#include <Eigen/LU>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <optional>

#include "json.hpp"
#include "nvist/checkpoint.h"
#include "nvist/config.h"
#include "nvist/parallel.h"
#include "nvist/train.h"
#include "nvist/verify.h"

using namespace nvist;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kUsage = 2, kIo = 3, kMismatch = 4 };

/// Bad flags or config values; always exit 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::vector<std::pair<std::string, std::string>> overrides;  // config key, value

  void set(const std::string& key, const std::string& value) { overrides.emplace_back(key, value); }
};

template <typename V>
void override_flag(CLI::App* cmd, Options& o, const std::string& flag, const std::string& key, const std::string& help) {
  cmd->add_option_function<std::string>(flag, [&o, key](const std::string& v) { o.set(key, v); }, help);
}

void switch_flag(CLI::App* cmd, Options& o, const std::string& flag, const std::string& key, const std::string& help) {
  cmd->add_flag_callback(flag, [&o, key] { o.set(key, "true"); }, help);
}

/// Config file then flag overrides; the first stage where ConfigError means bad input.
KeyValueConfig load_config(const Options& o) {
  KeyValueConfig kv;
  if (!o.config.empty()) {
    try {
      kv = KeyValueConfig::load(o.config);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  for (const auto& [k, v] : o.overrides) kv.set(k, v);
  return kv;
}

template <typename F>
auto resolve(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

ModelConfig model_config_from(const Checkpoint& ck) {
  if (!ck.contains("meta.model_config")) throw CheckpointShapeError("checkpoint carries no model configuration");
  auto kv = KeyValueConfig::parse(ck.get_text("meta.model_config"), "checkpoint model configuration");
  ModelConfig c = read_model_config(kv);
  kv.reject_unconsumed();
  return c;
}

std::string kind_of(const Checkpoint& ck) { return ck.contains("meta.kind") ? ck.get_text("meta.kind") : ""; }

void require_positive(std::size_t v, const std::string& flag) {
  if (v == 0) throw UsageError(flag + " must be at least 1");
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  std::size_t scenes = 64, views = 12, stride = 8;
  int size = 64;
  int supersample = 4;
  std::uint64_t seed = 0;
};

int cmd_gen_data(const GenDataArgs& a) {
  require_positive(a.scenes, "--scenes");
  if (a.views < 3) throw UsageError("--views must be at least 3");
  if (a.size < 8) throw UsageError("--size must be at least 8");
  if (a.supersample < 1) throw UsageError("--supersample must be at least 1");
  DatasetOptions opt;
  opt.scenes = a.scenes;
  opt.views = a.views;
  opt.width = opt.height = a.size;
  opt.seed = a.seed;
  opt.holdout_stride = a.stride;
  opt.supersample = a.supersample;
  const Dataset ds = generate_dataset(a.out, opt);
  std::cout << "wrote " << ds.scenes.size() << " scenes (" << ds.split(false).size() << " train, "
            << ds.split(true).size() << " test), " << a.views << " views of " << a.size << "x" << a.size << " to "
            << fs::absolute(ds.root).string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct RunArgs {
  Options opt;
  std::string resume;
  std::string init_encoder;
};

void put(KeyValueConfig& kv, const std::string& k, double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  kv.set(k, os.str());
}

int cmd_train(const RunArgs& a) {
  KeyValueConfig kv = load_config(a.opt);
  struct Resolved {
    ModelConfig model;
    TrainConfig train;
    std::string data, run;
    std::uint64_t model_seed;
  };
  const Resolved r = resolve([&] {
    Resolved r;
    r.model = read_model_config(kv);
    TrainConfig& t = r.train;
    t.lr_encoder = kv.get_double("train.lr_encoder", t.lr_encoder);
    t.lr_decoder = kv.get_double("train.lr_decoder", t.lr_decoder);
    t.steps = kv.get_size("train.steps", t.steps);
    t.images_per_step = kv.get_size("train.images_per_step", t.images_per_step);
    t.pixels_per_image = kv.get_size("train.pixels_per_image", t.pixels_per_image);
    t.seed = kv.get_u64("train.seed", t.seed);
    t.checkpoint_every = kv.get_size("train.checkpoint_every", t.checkpoint_every);
    t.freeze_encoder = kv.get_bool("train.freeze_encoder", t.freeze_encoder);
    t.warmup_steps = kv.get_size("train.warmup_steps", t.warmup_steps);
    t.first_view_input = kv.get_bool("train.first_view_input", t.first_view_input);
    t.loss.lambda_perceptual = kv.get_double("train.lambda_perceptual", t.loss.lambda_perceptual);
    t.loss.beta_distortion = kv.get_double("train.beta_distortion", t.loss.beta_distortion);
    t.adam.beta1 = kv.get_double("train.adam_beta1", t.adam.beta1);
    t.adam.beta2 = kv.get_double("train.adam_beta2", t.adam.beta2);
    t.adam.eps = kv.get_double("train.adam_eps", t.adam.eps);
    r.model_seed = kv.get_u64("model.seed", t.seed);
    r.data = kv.get_string("data.dir", "");
    r.run = kv.get_string("run.dir", "");
    kv.reject_unconsumed();
    t.validate();
    if (r.data.empty()) throw ConfigError("no dataset given (--data or data.dir)");
    if (r.run.empty()) throw ConfigError("no run directory given (--out or run.dir)");
    return r;
  });

  const Dataset data = load_dataset(r.data);
  NvistModel<float> model(r.model, r.model_seed);
  std::optional<Checkpoint> init, resume;
  if (!a.init_encoder.empty()) init = Checkpoint::load(a.init_encoder);
  if (!a.resume.empty()) resume = Checkpoint::load(a.resume);
  if (init) {
    if (kind_of(*init) != "mae") throw CheckpointShapeError(a.init_encoder + " is not a pretraining checkpoint");
    load_parameters(model.parameters(), *init, "encoder.");
  }
  Trainer trainer(model, data, r.train);
  if (resume) trainer.restore(*resume);

  fs::create_directories(r.run);
  KeyValueConfig resolved;
  write_model_config(r.model, resolved);
  const TrainConfig& t = r.train;
  put(resolved, "train.lr_encoder", t.lr_encoder);
  put(resolved, "train.lr_decoder", t.lr_decoder);
  resolved.set("train.steps", std::to_string(t.steps));
  resolved.set("train.images_per_step", std::to_string(t.images_per_step));
  resolved.set("train.pixels_per_image", std::to_string(t.pixels_per_image));
  resolved.set("train.seed", std::to_string(t.seed));
  resolved.set("train.checkpoint_every", std::to_string(t.checkpoint_every));
  resolved.set("train.freeze_encoder", t.freeze_encoder ? "true" : "false");
  resolved.set("train.warmup_steps", std::to_string(t.warmup_steps));
  resolved.set("train.first_view_input", t.first_view_input ? "true" : "false");
  put(resolved, "train.lambda_perceptual", t.loss.lambda_perceptual);
  put(resolved, "train.beta_distortion", t.loss.beta_distortion);
  put(resolved, "train.adam_beta1", t.adam.beta1);
  put(resolved, "train.adam_beta2", t.adam.beta2);
  put(resolved, "train.adam_eps", t.adam.eps);
  resolved.set("model.seed", std::to_string(r.model_seed));
  resolved.set("data.dir", fs::absolute(r.data).string());
  resolved.set("run.dir", fs::absolute(r.run).string());
  if (init) resolved.set("run.init_encoder", fs::absolute(a.init_encoder).string());
  if (resume) resolved.set("run.resumed_from", fs::absolute(a.resume).string());
  write_text(fs::path(r.run) / "config.resolved.cfg", resolved.dump());

  std::cout << "training " << t.steps << " steps from step " << trainer.next_step() << " on "
            << data.split(false).size() << " scenes" << (t.freeze_encoder ? " with the encoder frozen" : "") << "\n";
  run_steps([&] { return trainer.step(); }, [&] { return trainer.checkpoint(); }, trainer.next_step(), t.steps,
            t.checkpoint_every, r.run, &std::cout);
  std::cout << "done; latest checkpoint " << (fs::path(r.run) / "latest.nvst").string() << "\n";
  return kOk;
}

int cmd_pretrain(const RunArgs& a) {
  KeyValueConfig kv = load_config(a.opt);
  struct Resolved {
    ModelConfig model;
    MaeTrainConfig train;
    std::string data, run;
    std::uint64_t model_seed;
  };
  const Resolved r = resolve([&] {
    Resolved r;
    r.model = read_model_config(kv);
    MaeTrainConfig& t = r.train;
    t.lr = kv.get_double("pretrain.lr", t.lr);
    t.steps = kv.get_size("pretrain.steps", t.steps);
    t.images_per_step = kv.get_size("pretrain.images_per_step", t.images_per_step);
    t.seed = kv.get_u64("pretrain.seed", t.seed);
    t.checkpoint_every = kv.get_size("pretrain.checkpoint_every", t.checkpoint_every);
    r.model_seed = kv.get_u64("model.seed", t.seed);
    r.data = kv.get_string("data.dir", "");
    r.run = kv.get_string("run.dir", "");
    kv.reject_unconsumed();
    if (r.data.empty()) throw ConfigError("no dataset given (--data or data.dir)");
    if (r.run.empty()) throw ConfigError("no run directory given (--out or run.dir)");
    return r;
  });
  const Dataset data = load_dataset(r.data);
  NvistModel<float> model(r.model, r.model_seed);
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) resume = Checkpoint::load(a.resume);
  MaePretrainer pre(model, data, r.train);
  if (resume) pre.restore(*resume);

  fs::create_directories(r.run);
  KeyValueConfig resolved;
  write_model_config(r.model, resolved);
  put(resolved, "pretrain.lr", r.train.lr);
  resolved.set("pretrain.steps", std::to_string(r.train.steps));
  resolved.set("pretrain.images_per_step", std::to_string(r.train.images_per_step));
  resolved.set("pretrain.seed", std::to_string(r.train.seed));
  resolved.set("pretrain.checkpoint_every", std::to_string(r.train.checkpoint_every));
  resolved.set("model.seed", std::to_string(r.model_seed));
  resolved.set("data.dir", fs::absolute(r.data).string());
  resolved.set("run.dir", fs::absolute(r.run).string());
  write_text(fs::path(r.run) / "config.resolved.cfg", resolved.dump());

  std::cout << "pretraining the encoder for " << r.train.steps << " steps from step " << pre.next_step() << "\n";
  run_steps([&] { return pre.step(); }, [&] { return pre.checkpoint(); }, pre.next_step(), r.train.steps,
            r.train.checkpoint_every, r.run, &std::cout);
  return kOk;
}

// ---------------------------------------------------------------------------

/// Restores a trained model from a novel-view checkpoint.
std::unique_ptr<NvistModel<float>> load_model(const std::string& path) {
  const Checkpoint ck = Checkpoint::load(path);
  if (kind_of(ck) != "nvist") throw CheckpointShapeError(path + " is not a novel-view training checkpoint");
  auto model = std::make_unique<NvistModel<float>>(model_config_from(ck), 0);
  load_parameters(model->parameters(), ck);
  return model;
}

struct EvalArgs {
  std::string checkpoint, data, split = "test", report;
};

int cmd_eval(const EvalArgs& a) {
  if (a.split != "test" && a.split != "train") throw UsageError("--split must be test or train");
  auto model = load_model(a.checkpoint);
  const Dataset data = load_dataset(a.data);
  const auto scenes = data.split(a.split == "test");
  const EvalReport r = evaluate(*model, data, scenes);
  std::cout << std::fixed << std::setprecision(3);
  for (const auto& s : r.scenes) {
    std::cout << s.id << "  psnr " << s.psnr << "  ssim " << s.ssim << "  baseline psnr " << s.baseline_psnr
              << "  ssim " << s.baseline_ssim << "\n";
  }
  std::cout << "mean over " << r.scenes.size() << " " << a.split << " scenes: psnr " << r.psnr << "  ssim " << r.ssim
            << "  (constant background: psnr " << r.baseline_psnr << "  ssim " << r.baseline_ssim << ")\n";
  if (!a.report.empty()) {
    nlohmann::ordered_json j;
    j["split"] = a.split;
    j["psnr"] = r.psnr;
    j["ssim"] = r.ssim;
    j["baseline_psnr"] = r.baseline_psnr;
    j["baseline_ssim"] = r.baseline_ssim;
    for (const auto& s : r.scenes) {
      j["scenes"].push_back({{"id", s.id},
                             {"views", s.views},
                             {"psnr", s.psnr},
                             {"ssim", s.ssim},
                             {"baseline_psnr", s.baseline_psnr},
                             {"baseline_ssim", s.baseline_ssim}});
    }
    write_text(a.report, j.dump(2) + "\n");
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct RenderArgs {
  std::string checkpoint, input, dataset, scene, out;
  std::size_t view = 0;
  double focal = 1.0, distance = 2.0;
  std::size_t orbit = 0, samples = 0;
  std::vector<double> rotation, translation;
};

std::vector<float> grayscale(const std::vector<float>& v, float lo, float hi) {
  std::vector<float> out(v.size() * 3);
  const float span = hi > lo ? hi - lo : 1.0f;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float g = std::isfinite(v[i]) ? (v[i] - lo) / span : 0.0f;
    out[i * 3] = out[i * 3 + 1] = out[i * 3 + 2] = std::clamp(g, 0.0f, 1.0f);
  }
  return out;
}

int cmd_render(const RenderArgs& a) {
  if (a.input.empty() == a.dataset.empty()) throw UsageError("give exactly one of --input or --dataset");
  if (!a.dataset.empty() && a.scene.empty()) throw UsageError("--dataset needs --scene");
  if (a.orbit > 0 && (!a.rotation.empty() || !a.translation.empty())) {
    throw UsageError("--orbit cannot be combined with --rotation/--translation");
  }
  if (!a.rotation.empty() && a.rotation.size() != 9) throw UsageError("--rotation takes 9 row-major values");
  if (!a.translation.empty() && a.translation.size() != 3) throw UsageError("--translation takes 3 values");
  if (!(a.focal > 0.0) || !(a.distance > 0.0)) throw UsageError("--focal and --distance must be positive");

  auto model = load_model(a.checkpoint);
  const ModelConfig& mc = model->config();
  const int w = static_cast<int>(mc.encoder.image_width), h = static_cast<int>(mc.encoder.image_height);

  std::vector<float> rgb;
  double focal = a.focal, z = a.distance;
  if (!a.dataset.empty()) {
    const Dataset data = load_dataset(a.dataset);
    const SceneRecord* scene = nullptr;
    for (const auto& s : data.scenes)
      if (s.id == a.scene) scene = &s;
    if (!scene) throw UsageError("no scene " + a.scene + " in " + a.dataset);
    if (a.view >= scene->views.size()) throw UsageError("--view out of range for " + a.scene);
    const CameraPose in = scene->normalized_pose(a.view);
    rgb = scene->views[a.view].rgb;
    focal = in.focal;
    z = in.center.norm();
    if (in.width != w || in.height != h) throw ConfigError("dataset images do not match the model input size");
  } else {
    int iw = 0, ih = 0;
    rgb = read_ppm(a.input, iw, ih);
    if (iw != w || ih != h) {
      throw ConfigError("input image is " + std::to_string(iw) + "x" + std::to_string(ih) + " but the model expects " +
                        std::to_string(w) + "x" + std::to_string(h));
    }
  }

  CameraPose base;
  base.center = conditioned_input_center(z);
  base.focal = focal;
  base.width = w;
  base.height = h;
  base.principal = {w / 2.0, h / 2.0};
  std::vector<CameraPose> poses;
  if (a.orbit > 0) {
    for (std::size_t i = 0; i < a.orbit; ++i) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(a.orbit);
      CameraPose p = base;
      p.rotation = rotation_about_axis(Eigen::Vector3d::UnitY(), angle);
      p.center = p.rotation * base.center;
      poses.push_back(p);
    }
  } else {
    CameraPose p = base;
    if (!a.rotation.empty()) {
      for (int i = 0; i < 9; ++i) p.rotation(i / 3, i % 3) = a.rotation[static_cast<std::size_t>(i)];
      if ((p.rotation.transpose() * p.rotation - Eigen::Matrix3d::Identity()).norm() > 1e-6 ||
          p.rotation.determinant() < 0) {
        throw UsageError("--rotation is not a proper rotation matrix");
      }
    }
    if (!a.translation.empty()) p.center = {a.translation[0], a.translation[1], a.translation[2]};
    poses.push_back(p);
  }

  RenderOptions opt;
  opt.samples = a.samples > 0 ? a.samples : mc.renderer.samples;
  opt.background = scene_background();
  std::vector<RenderedImage> images;
  {
    NoGradGuard no_grad;
    const auto vm = model->predict(image_tensor<float>(rgb, static_cast<std::size_t>(h), static_cast<std::size_t>(w)),
                                   encode_conditioning(focal, z));
    for (const auto& p : poses) images.push_back(render_image(vm, model->color_mlp(), p, opt));
  }

  fs::create_directories(a.out);
  for (std::size_t i = 0; i < images.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "%03zu", i);
    const auto& img = images[i];
    float lo = std::numeric_limits<float>::infinity(), hi = -lo;
    for (std::size_t k = 0; k < img.depth.size(); ++k) {
      if (img.accumulation[k] < 1e-3f) continue;
      lo = std::min(lo, img.depth[k]);
      hi = std::max(hi, img.depth[k]);
    }
    if (!(lo <= hi)) lo = hi = 0.0f;
    std::vector<float> depth = img.depth;
    for (std::size_t k = 0; k < depth.size(); ++k)
      if (img.accumulation[k] < 1e-3f) depth[k] = hi;
    write_ppm(fs::path(a.out) / ("rgb_" + std::string(stem) + ".ppm"), img.rgb, img.width, img.height);
    write_ppm(fs::path(a.out) / ("depth_" + std::string(stem) + ".ppm"), grayscale(depth, lo, hi), img.width,
              img.height);
    write_ppm(fs::path(a.out) / ("acc_" + std::string(stem) + ".ppm"), grayscale(img.accumulation, 0.0f, 1.0f),
              img.width, img.height);
    std::ostringstream range;
    range << std::setprecision(9) << "depth_min " << lo << "\ndepth_max " << hi << "\n";
    write_text(fs::path(a.out) / ("depth_" + std::string(stem) + ".txt"), range.str());
  }
  std::cout << "rendered " << images.size() << " view(s) to " << fs::absolute(a.out).string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_verify(const std::vector<std::string>& requested) {
  std::vector<std::string> suites = requested.empty() ? verify_suite_names() : requested;
  for (const auto& s : suites) {
    const auto& known = verify_suite_names();
    if (std::find(known.begin(), known.end(), s) == known.end()) {
      std::string list;
      for (const auto& k : known) list += (list.empty() ? "" : ", ") + k;
      throw UsageError("unknown suite '" + s + "' (known: " + list + ")");
    }
  }
  bool ok = true;
  for (const auto& s : suites) {
    const SuiteReport r = run_verify_suite(s);
    print_suite_report(r, std::cout);
    std::cout.flush();
    ok &= r.passed();
  }
  std::cout << (ok ? "all suites passed" : "verification FAILED") << "\n";
  return ok ? kOk : kVerifyFailed;
}

int cmd_param_count(const Options& o) {
  KeyValueConfig kv = load_config(o);
  const ModelConfig c = resolve([&] {
    ModelConfig c = read_model_config(kv);
    kv.reject_unconsumed();
    return c;
  });
  const ParameterCounts n = count_parameters(c);
  std::cout << "feature tokens    " << feature_token_count(c.encoder) << "\n"
            << "output tokens     " << output_token_count(c.decoder) << "\n"
            << "head widths       " << matrix_head_width(c.decoder) << " / " << vector_head_width(c.decoder) << "\n"
            << "encoder params    " << n.encoder << "\n"
            << "decoder params    " << n.decoder << "\n"
            << "renderer params   " << n.renderer << "\n"
            << "total params      " << n.total() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-image novel view synthesis: data, training, rendering and verification"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "worker threads (default: NVIST_THREADS or all cores)");

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "generate the procedural multi-view dataset");
  c_gen->add_option("--out", gen.out, "output directory")->required();
  c_gen->add_option("--scenes", gen.scenes, "number of scenes");
  c_gen->add_option("--views", gen.views, "views per scene");
  c_gen->add_option("--size", gen.size, "image width and height");
  c_gen->add_option("--seed", gen.seed, "base seed");
  c_gen->add_option("--holdout-stride", gen.stride, "every n-th scene is held out for testing (0: none)");
  c_gen->add_option("--supersample", gen.supersample, "rays per pixel axis for the stored colors");

  auto common_run = [](CLI::App* cmd, RunArgs& r) {
    cmd->add_option("--config", r.opt.config, "key = value config file")->check(CLI::ExistingFile);
    override_flag<std::string>(cmd, r.opt, "--data", "data.dir", "dataset directory");
    override_flag<std::string>(cmd, r.opt, "--out", "run.dir", "run directory");
    override_flag<std::string>(cmd, r.opt, "--preset", "model.preset", "model preset: toy, paper or tiny");
    override_flag<std::string>(cmd, r.opt, "--model-seed", "model.seed", "initialization seed");
    cmd->add_option("--resume", r.resume, "checkpoint to continue from");
  };

  RunArgs train;
  auto* c_train = app.add_subcommand("train", "train the novel-view model");
  common_run(c_train, train);
  override_flag<double>(c_train, train.opt, "--steps", "train.steps", "total steps");
  override_flag<double>(c_train, train.opt, "--lr-encoder", "train.lr_encoder", "encoder learning rate");
  override_flag<double>(c_train, train.opt, "--lr-decoder", "train.lr_decoder", "decoder and renderer learning rate");
  override_flag<double>(c_train, train.opt, "--seed", "train.seed", "training seed");
  override_flag<double>(c_train, train.opt, "--pixels", "train.pixels_per_image", "target pixels per image");
  override_flag<double>(c_train, train.opt, "--images", "train.images_per_step", "image pairs per step");
  override_flag<double>(c_train, train.opt, "--checkpoint-every", "train.checkpoint_every", "checkpoint stride");
  override_flag<double>(c_train, train.opt, "--warmup", "train.warmup_steps", "linear learning-rate warmup steps");
  switch_flag(c_train, train.opt, "--freeze-encoder", "train.freeze_encoder", "keep the encoder fixed");
  switch_flag(c_train, train.opt, "--first-view-input", "train.first_view_input",
              "condition every pair on view 0 (overfitting runs)");
  c_train->add_option("--init-encoder", train.init_encoder, "pretraining checkpoint for the encoder weights");

  RunArgs pre;
  auto* c_pre = app.add_subcommand("pretrain-mae", "masked-patch pretraining of the encoder");
  common_run(c_pre, pre);
  override_flag<double>(c_pre, pre.opt, "--steps", "pretrain.steps", "total steps");
  override_flag<double>(c_pre, pre.opt, "--lr", "pretrain.lr", "learning rate");
  override_flag<double>(c_pre, pre.opt, "--seed", "pretrain.seed", "seed");
  override_flag<double>(c_pre, pre.opt, "--images", "pretrain.images_per_step", "images per step");
  override_flag<double>(c_pre, pre.opt, "--checkpoint-every", "pretrain.checkpoint_every", "checkpoint stride");

  RenderArgs render;
  auto* c_render = app.add_subcommand("render", "render novel views from one input image");
  c_render->add_option("--checkpoint", render.checkpoint, "trained checkpoint")->required();
  c_render->add_option("--input", render.input, "input image (PPM)");
  c_render->add_option("--focal", render.focal, "input focal length / image width");
  c_render->add_option("--distance", render.distance, "distance from the input camera to the scene center");
  c_render->add_option("--dataset", render.dataset, "take the input view from a dataset instead");
  c_render->add_option("--scene", render.scene, "scene id within --dataset");
  c_render->add_option("--view", render.view, "view index within --scene");
  c_render->add_option("--orbit", render.orbit, "n views on a circle through the input camera");
  c_render->add_option("--rotation", render.rotation, "relative camera rotation, 9 row-major values")->delimiter(',');
  c_render->add_option("--translation", render.translation, "relative camera center, 3 values")->delimiter(',');
  c_render->add_option("--samples", render.samples, "samples per ray (default: model config)");
  c_render->add_option("--out", render.out, "output directory")->required();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "score novel views against a dataset split");
  c_eval->add_option("--checkpoint", ev.checkpoint, "trained checkpoint")->required();
  c_eval->add_option("--data", ev.data, "dataset directory")->required();
  c_eval->add_option("--split", ev.split, "test or train");
  c_eval->add_option("--report", ev.report, "write a JSON report here");

  std::vector<std::string> suites;
  auto* c_verify = app.add_subcommand("verify", "run the property suites at 64-bit");
  c_verify->add_option("--suite", suites, "suite name (repeatable; default all)");

  Options count;
  auto* c_count = app.add_subcommand("param-count", "token and parameter arithmetic for a model config");
  c_count->add_option("--config", count.config, "key = value config file")->check(CLI::ExistingFile);
  override_flag<std::string>(c_count, count, "--preset", "model.preset", "model preset: toy, paper or tiny");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  if (threads > 0) setenv("NVIST_THREADS", std::to_string(threads).c_str(), 1);

  try {
    if (*c_gen) return cmd_gen_data(gen);
    if (*c_train) return cmd_train(train);
    if (*c_pre) return cmd_pretrain(pre);
    if (*c_render) return cmd_render(render);
    if (*c_eval) return cmd_eval(ev);
    if (*c_verify) return cmd_verify(suites);
    if (*c_count) return cmd_param_count(count);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const CheckpointShapeError& e) {
    std::cerr << "mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const CheckpointVersionError& e) {
    std::cerr << "mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const ConfigError& e) {
    std::cerr << "mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const ShapeError& e) {
    std::cerr << "mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const CheckpointError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const DataError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const EvaluationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVerifyFailed;
  }
  return kUsage;
}
