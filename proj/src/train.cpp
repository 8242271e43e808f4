#include "nvist/train.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "nvist/config.h"
#include "nvist/parallel.h"

namespace nvist {

namespace fs = std::filesystem;

double lr_schedule(std::size_t step, std::size_t total, double lr0) {
  if (total == 0 || step > total) throw ContractError("lr_schedule needs 0 <= step <= total and total > 0");
  if (step == total) return 0.0;
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

// ---------------------------------------------------------------------------

template <typename T>
Adam<T>::Adam(std::vector<NamedParameter<T>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.value.numel(), T(0));
    v_.emplace_back(p.value.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <typename T>
void Adam<T>::step(const std::array<double, 3>& lr) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T> p = params_[i].value;
    if (!p.requires_grad()) continue;
    const double rate = lr[static_cast<std::size_t>(params_[i].group)];
    auto g = p.grad();
    auto x = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
    const T step_size = static_cast<T>(rate / c1);
    const T inv_c2 = static_cast<T>(1.0 / std::sqrt(c2));
    const T eps = static_cast<T>(config_.eps);
    for (std::size_t k = 0; k < x.size(); ++k) {
      m[k] = tb1 * m[k] + (T(1) - tb1) * g[k];
      v[k] = tb2 * v[k] + (T(1) - tb2) * g[k] * g[k];
      x[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_c2 + eps);
    }
  }
}

template <typename T>
void Adam<T>::save(Checkpoint& ck, const std::string& prefix) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ck.put(prefix + "m/" + params_[i].name, params_[i].value.shape(), std::span<const T>(m_[i]));
    ck.put(prefix + "v/" + params_[i].name, params_[i].value.shape(), std::span<const T>(v_[i]));
  }
  ck.put_u64(prefix + "step", t_);
}

template <typename T>
void Adam<T>::load(const Checkpoint& ck, const std::string& prefix) {
  std::vector<std::vector<T>> m(params_.size()), v(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m[i].resize(params_[i].value.numel());
    v[i].resize(params_[i].value.numel());
    ck.get(prefix + "m/" + params_[i].name, params_[i].value.shape(), std::span<T>(m[i]));
    ck.get(prefix + "v/" + params_[i].name, params_[i].value.shape(), std::span<T>(v[i]));
  }
  const std::uint64_t t = ck.get_u64(prefix + "step");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

template <typename T>
void save_parameters(const std::vector<NamedParameter<T>>& params, Checkpoint& ck) {
  for (const auto& p : params) ck.put("param/" + p.name, p.value.shape(), p.value.data());
}

template <typename T>
void load_parameters(const std::vector<NamedParameter<T>>& params, const Checkpoint& ck, const std::string& name_prefix) {
  std::vector<std::vector<T>> staged;
  std::vector<std::size_t> which;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name.rfind(name_prefix, 0) != 0) continue;
    staged.emplace_back(params[i].value.numel());
    ck.get("param/" + params[i].name, params[i].value.shape(), std::span<T>(staged.back()));
    which.push_back(i);
  }
  for (std::size_t k = 0; k < which.size(); ++k) {
    Tensor<T> t = params[which[k]].value;
    std::copy(staged[k].begin(), staged[k].end(), t.data().begin());
  }
}

template class Adam<float>;
template class Adam<double>;
template void save_parameters(const std::vector<NamedParameter<float>>&, Checkpoint&);
template void save_parameters(const std::vector<NamedParameter<double>>&, Checkpoint&);
template void load_parameters(const std::vector<NamedParameter<float>>&, const Checkpoint&, const std::string&);
template void load_parameters(const std::vector<NamedParameter<double>>&, const Checkpoint&, const std::string&);

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr_encoder > 0.0) || !(lr_decoder > 0.0)) throw ConfigError("learning rates must be positive");
  if (steps == 0) throw ConfigError("total steps must be positive");
  if (images_per_step == 0 || pixels_per_image == 0) throw ConfigError("each step needs at least one image and pixel");
  if (loss.lambda_perceptual < 0.0 || loss.beta_distortion < 0.0) throw ConfigError("loss weights must be non-negative");
}

double warmup_factor(std::size_t step, std::size_t warmup) {
  if (warmup == 0) return 1.0;
  return std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup));
}

Eigen::Vector3d scene_background() { return Eigen::Vector3d::Ones(); }

ViewPair make_view_pair(const SceneRecord& scene, std::size_t input_view, std::size_t target_view) {
  const CameraPose in = scene.normalized_pose(input_view);
  const CameraPose target = scene.normalized_pose(target_view);
  const double z = in.center.norm();
  ViewPair pair;
  pair.image = image_tensor<float>(scene.views[input_view].rgb, static_cast<std::size_t>(in.height),
                                   static_cast<std::size_t>(in.width));
  pair.cond = encode_conditioning(in.focal, z);
  pair.target = relativize_pose(in, target, z);
  return pair;
}

namespace {

void check_dataset(const ModelConfig& config, const Dataset& data) {
  if (static_cast<std::size_t>(data.width) != config.encoder.image_width ||
      static_cast<std::size_t>(data.height) != config.encoder.image_height) {
    throw ConfigError("dataset images are " + std::to_string(data.width) + "x" + std::to_string(data.height) +
                      " but the model expects " + std::to_string(config.encoder.image_width) + "x" +
                      std::to_string(config.encoder.image_height));
  }
}

std::vector<std::size_t> training_scenes(const Dataset& data) {
  auto scenes = data.split(false);
  if (scenes.empty()) throw ConfigError("dataset has no training scenes");
  return scenes;
}

std::string model_config_text(const ModelConfig& c) {
  KeyValueConfig kv;
  write_model_config(c, kv);
  return kv.dump();
}

void check_model_config(const Checkpoint& ck, const ModelConfig& config) {
  if (!ck.contains("meta.model_config")) throw CheckpointShapeError("checkpoint carries no model configuration");
  if (ck.get_text("meta.model_config") != model_config_text(config)) {
    throw CheckpointShapeError("checkpoint was written for a different model configuration");
  }
}

std::size_t pick(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

}  // namespace

Trainer::Trainer(NvistModel<float>& model, const Dataset& data, const TrainConfig& config)
    : model_(model), data_(data), config_(config), adam_(model.parameters(), config.adam) {
  config_.validate();
  check_dataset(model.config(), data);
  scenes_ = training_scenes(data);
  for (const auto& p : model.parameters()) {
    Tensor<float> t = p.value;
    t.set_requires_grad(!(config_.freeze_encoder && p.group == ParamGroup::Encoder));
  }
}

StepMetrics Trainer::step() {
  const std::size_t s = step_;
  if (s >= config_.steps) throw ContractError("training already ran its " + std::to_string(config_.steps) + " steps");
  Rng rng(derive_seed(config_.seed, s, 0x7a11));
  const double ramp = warmup_factor(s, config_.warmup_steps);
  const double lr_dec = ramp * lr_schedule(s, config_.steps, config_.lr_decoder);
  const double lr_enc = config_.freeze_encoder ? 0.0 : ramp * lr_schedule(s, config_.steps, config_.lr_encoder);
  const std::size_t w = static_cast<std::size_t>(data_.width), h = static_cast<std::size_t>(data_.height);
  const std::size_t n_pixels = std::min(config_.pixels_per_image, w * h);

  RenderOptions opt;
  opt.samples = model_.config().renderer.samples;
  opt.stratified = true;
  opt.background = scene_background();

  adam_.zero_grad();
  Tensor<float> total, l2, dist;
  const float inv_batch = 1.0f / static_cast<float>(config_.images_per_step);
  std::vector<std::uint32_t> order(w * h);
  for (std::size_t b = 0; b < config_.images_per_step; ++b) {
    const SceneRecord& scene = data_.scenes[scenes_[pick(rng, scenes_.size())]];
    const std::size_t input = config_.first_view_input ? 0 : pick(rng, scene.views.size());
    std::size_t target = pick(rng, scene.views.size() - 1);
    if (target >= input) ++target;
    ViewPair pair = make_view_pair(scene, input, target);

    std::iota(order.begin(), order.end(), 0u);
    std::vector<Pixel> pixels(n_pixels);
    std::vector<float> colors(n_pixels * 3);
    const auto& rgb = scene.views[target].rgb;
    for (std::size_t i = 0; i < n_pixels; ++i) {
      std::swap(order[i], order[i + pick(rng, order.size() - i)]);
      const std::uint32_t k = order[i];
      pixels[i] = {static_cast<int>(k % w), static_cast<int>(k / w)};
      for (int c = 0; c < 3; ++c) colors[i * 3 + c] = rgb[k * 3 + c];
    }

    VMRepresentation<float> vm = model_.predict(pair.image, pair.cond);
    RayBatch<float> batch = render_rays(vm, model_.color_mlp(), generate_rays(pair.target, pixels), opt, rng);
    LossTerms<float> terms = total_loss(batch.rgb, Tensor<float>(Shape{n_pixels, 3}, std::move(colors)), batch.weights,
                                        normalize_intervals(batch.samples, opt.samples), config_.loss);
    Tensor<float> part = scale(terms.total, inv_batch);
    total = b == 0 ? part : add(total, part);
    const Tensor<float> l2_part = scale(terms.l2.detach(), inv_batch);
    const Tensor<float> dist_part = scale(terms.distortion.detach(), inv_batch);
    l2 = b == 0 ? l2_part : add(l2, l2_part);
    dist = b == 0 ? dist_part : add(dist, dist_part);
  }
  total.backward();
  adam_.step({lr_enc, lr_dec, 0.0});
  ++step_;

  StepMetrics m;
  m.step = step_;
  m.lr = lr_dec;
  m.loss = total.item();
  m.l2 = l2.item();
  m.dist = dist.item();
  m.psnr = psnr_from_mse(m.l2);
  return m;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.put_text("meta.kind", "nvist");
  ck.put_text("meta.model_config", model_config_text(model_.config()));
  ck.put_u64("train.step", step_);
  save_parameters(model_.parameters(), ck);
  adam_.save(ck);
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  if (!ck.contains("meta.kind") || ck.get_text("meta.kind") != "nvist") {
    throw CheckpointShapeError("not a novel-view training checkpoint");
  }
  check_model_config(ck, model_.config());
  const std::uint64_t s = ck.get_u64("train.step");
  Adam<float> staged = adam_;
  staged.load(ck);
  load_parameters(model_.parameters(), ck);
  adam_ = std::move(staged);
  step_ = s;
}

// ---------------------------------------------------------------------------

MaePretrainer::MaePretrainer(NvistModel<float>& model, const Dataset& data, const MaeTrainConfig& config)
    : model_(model), data_(data), config_(config) {
  if (!(config_.lr > 0.0) || config_.steps == 0 || config_.images_per_step == 0) {
    throw ConfigError("pretraining needs a positive learning rate, steps and images per step");
  }
  check_dataset(model.config(), data);
  scenes_ = training_scenes(data);
  Rng rng(derive_seed(config_.seed, 0x3ae));
  ParamBuilder<float> b(rng);
  {
    auto g = b.group(ParamGroup::Pretrain);
    head_ = MaeHead<float>(b, model.config().encoder, model.config().mae);
  }
  head_params_ = b.parameters();
  std::vector<NamedParameter<float>> params;
  for (const auto& p : model.parameters()) {
    if (p.group != ParamGroup::Encoder) continue;
    Tensor<float> t = p.value;
    t.set_requires_grad(true);
    params.push_back(p);
  }
  params.insert(params.end(), head_params_.begin(), head_params_.end());
  adam_.emplace(std::move(params), config_.adam);
}

StepMetrics MaePretrainer::step() {
  const std::size_t s = step_;
  if (s >= config_.steps) throw ContractError("pretraining already ran its " + std::to_string(config_.steps) + " steps");
  Rng rng(derive_seed(config_.seed, s, 0x3ae));
  const double lr = lr_schedule(s, config_.steps, config_.lr);
  const auto& enc = model_.config().encoder;
  const std::size_t tokens = feature_token_count(enc);

  adam_->zero_grad();
  Tensor<float> total;
  for (std::size_t b = 0; b < config_.images_per_step; ++b) {
    const SceneRecord& scene = data_.scenes[scenes_[pick(rng, scenes_.size())]];
    const auto& view = scene.views[pick(rng, scene.views.size())];
    Tensor<float> image = image_tensor<float>(view.rgb, enc.image_height, enc.image_width);
    PatchMask mask = random_patch_mask(tokens, model_.config().mae.mask_ratio, rng);
    Tensor<float> part = scale(head_.loss(model_.encoder(), image, mask), 1.0f / static_cast<float>(config_.images_per_step));
    total = b == 0 ? part : add(total, part);
  }
  total.backward();
  adam_->step({lr, 0.0, lr});
  ++step_;

  StepMetrics m;
  m.step = step_;
  m.lr = lr;
  m.loss = total.item();
  m.l2 = m.loss;
  m.psnr = psnr_from_mse(m.loss);
  return m;
}

Checkpoint MaePretrainer::checkpoint() const {
  Checkpoint ck;
  ck.put_text("meta.kind", "mae");
  ck.put_text("meta.model_config", model_config_text(model_.config()));
  ck.put_u64("train.step", step_);
  save_parameters(adam_->parameters(), ck);
  adam_->save(ck);
  return ck;
}

void MaePretrainer::restore(const Checkpoint& ck) {
  if (!ck.contains("meta.kind") || ck.get_text("meta.kind") != "mae") {
    throw CheckpointShapeError("not a pretraining checkpoint");
  }
  check_model_config(ck, model_.config());
  const std::uint64_t s = ck.get_u64("train.step");
  Adam<float> staged = *adam_;
  staged.load(ck);
  load_parameters(adam_->parameters(), ck);
  *adam_ = std::move(staged);
  step_ = s;
}

// ---------------------------------------------------------------------------

std::string metrics_header() { return "step,lr,loss,l2,dist,psnr"; }

std::string metrics_row(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.6f", m.step, m.lr, m.loss, m.l2, m.dist, m.psnr);
  return buf;
}

void run_steps(const std::function<StepMetrics()>& step, const std::function<Checkpoint()>& checkpoint,
               std::size_t first_step, std::size_t total, std::size_t every, const fs::path& run_dir,
               std::ostream* progress) {
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw DataError("cannot create run directory " + run_dir.string() + ": " + ec.message());
  const fs::path csv = run_dir / "metrics.csv";
  std::vector<std::string> kept;
  if (first_step > 0) {
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) <= first_step) kept.push_back(line);
    }
  }
  std::ofstream out(csv, std::ios::trunc);
  if (!out) throw DataError("cannot write " + csv.string());
  out << metrics_header() << '\n';
  for (const auto& line : kept) out << line << '\n';
  out.flush();

  const std::size_t report = std::max<std::size_t>(1, total / 100);
  for (std::size_t s = first_step; s < total; ++s) {
    const StepMetrics m = step();
    out << metrics_row(m) << '\n';
    out.flush();
    if (progress && (m.step % report == 0 || m.step == total)) {
      *progress << "step " << m.step << "/" << total << " loss " << m.loss << " psnr " << m.psnr << std::endl;
    }
    if (every > 0 && m.step % every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%06zu.nvst", m.step);
      checkpoint().save(run_dir / name);
    }
  }
  checkpoint().save(run_dir / "latest.nvst");
}

// ---------------------------------------------------------------------------

EvalReport evaluate_predictions(const Dataset& data, const std::vector<std::size_t>& scenes,
                                const ScenePredictor& predict) {
  if (scenes.empty()) throw EvaluationError("evaluation split is empty");
  EvalReport report;
  report.scenes.resize(scenes.size());
  const Eigen::Vector3d bg = scene_background();
  parallel_for(scenes.size(), [&](std::size_t i) {
    const SceneRecord& scene = data.scenes.at(scenes[i]);
    if (scene.views.size() < 2) throw EvaluationError("scene " + scene.id + " has no target views");
    const auto preds = predict(scene);
    if (preds.size() != scene.views.size() - 1) throw EvaluationError("predictor returned the wrong number of views");
    SceneScore& score = report.scenes[i];
    score.id = scene.id;
    score.views = preds.size();
    std::vector<float> baseline(scene.views[0].rgb.size());
    for (std::size_t k = 0; k < baseline.size(); ++k) baseline[k] = static_cast<float>(bg[static_cast<Eigen::Index>(k % 3)]);
    for (std::size_t t = 1; t < scene.views.size(); ++t) {
      const auto& gt = scene.views[t].rgb;
      const auto& pose = scene.views[t].pose;
      score.psnr += psnr(preds[t - 1], gt);
      score.ssim += ssim(preds[t - 1], gt, pose.height, pose.width);
      score.baseline_psnr += psnr(baseline, gt);
      score.baseline_ssim += ssim(baseline, gt, pose.height, pose.width);
    }
    const double n = static_cast<double>(score.views);
    score.psnr /= n;
    score.ssim /= n;
    score.baseline_psnr /= n;
    score.baseline_ssim /= n;
  });
  double views = 0.0;
  for (const auto& s : report.scenes) {
    const double n = static_cast<double>(s.views);
    report.psnr += s.psnr * n;
    report.ssim += s.ssim * n;
    report.baseline_psnr += s.baseline_psnr * n;
    report.baseline_ssim += s.baseline_ssim * n;
    views += n;
  }
  report.psnr /= views;
  report.ssim /= views;
  report.baseline_psnr /= views;
  report.baseline_ssim /= views;
  return report;
}

EvalReport evaluate(const NvistModel<float>& model, const Dataset& data, const std::vector<std::size_t>& scenes) {
  check_dataset(model.config(), data);
  RenderOptions opt;
  opt.samples = model.config().renderer.samples;
  opt.background = scene_background();
  return evaluate_predictions(data, scenes, [&](const SceneRecord& scene) {
    NoGradGuard no_grad;
    std::vector<std::vector<float>> out;
    VMRepresentation<float> vm;
    for (std::size_t t = 1; t < scene.views.size(); ++t) {
      ViewPair pair = make_view_pair(scene, 0, t);
      if (t == 1) vm = model.predict(pair.image, pair.cond);
      out.push_back(render_image(vm, model.color_mlp(), pair.target, opt).rgb);
    }
    return out;
  });
}

}  // namespace nvist
