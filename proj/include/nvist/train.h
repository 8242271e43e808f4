#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvist/checkpoint.h"
#include "nvist/losses.h"
#include "nvist/model.h"
#include "nvist/scene.h"

namespace nvist {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
};

/// Half-cycle cosine decay: 0.5 lr0 (1 + cos(pi step / total)).
double lr_schedule(std::size_t step, std::size_t total, double lr0);

/// min(1, (step + 1) / warmup); 1 when warmup is 0.
double warmup_factor(std::size_t step, std::size_t warmup);

/// Bias-corrected Adam with one learning rate per ParamGroup. Parameters that
/// do not require grad are left untouched.
template <typename T>
class Adam {
 public:
  Adam(std::vector<NamedParameter<T>> params, AdamConfig config = {});

  void zero_grad();
  /// lr indexed by ParamGroup.
  void step(const std::array<double, 3>& lr);
  std::uint64_t steps() const { return t_; }

  const std::vector<NamedParameter<T>>& parameters() const { return params_; }
  const std::vector<T>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<T>& second_moment(std::size_t i) const { return v_[i]; }

  /// Moments under "<prefix>m/<name>", "<prefix>v/<name>" and "<prefix>step".
  void save(Checkpoint& ck, const std::string& prefix = "adam.") const;
  /// Validates every entry before changing any state.
  void load(const Checkpoint& ck, const std::string& prefix = "adam.");

 private:
  std::vector<NamedParameter<T>> params_;
  AdamConfig config_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Parameters as "param/<name>".
template <typename T>
void save_parameters(const std::vector<NamedParameter<T>>& params, Checkpoint& ck);
/// Restores parameters whose name starts with `name_prefix`; every matching
/// entry is checked before any value is written.
template <typename T>
void load_parameters(const std::vector<NamedParameter<T>>& params, const Checkpoint& ck,
                     const std::string& name_prefix = "");

struct TrainConfig {
  double lr_encoder = 6e-5;
  double lr_decoder = 4e-4;  // decoder and renderer
  std::size_t steps = 20000;
  std::size_t images_per_step = 1;
  std::size_t pixels_per_image = 512;
  std::uint64_t seed = 0;
  LossWeights loss;
  std::size_t checkpoint_every = 1000;
  bool freeze_encoder = false;
  /// Linear ramp of both learning rates over the first steps, on top of the cosine decay.
  std::size_t warmup_steps = 0;
  /// Condition every pair on view 0, the input view used by evaluate().
  bool first_view_input = false;
  AdamConfig adam;

  void validate() const;
};

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double l2 = 0.0;
  double dist = 0.0;
  double psnr = 0.0;
};

/// One (input view, target view) pair in the input camera's relative frame.
struct ViewPair {
  Tensor<float> image;
  ConditioningVector cond{};
  CameraPose target;  // relative to the input camera
};

ViewPair make_view_pair(const SceneRecord& scene, std::size_t input_view, std::size_t target_view);

/// Background color used by the dataset generator and every render.
Eigen::Vector3d scene_background();

/// Novel-view training. Step s draws its scene, views and pixels from a
/// generator seeded by (seed, s), so a resumed run repeats the same stream.
class Trainer {
 public:
  /// Throws ConfigError when the dataset image size differs from the model's.
  Trainer(NvistModel<float>& model, const Dataset& data, const TrainConfig& config);

  StepMetrics step();
  std::size_t next_step() const { return step_; }
  const TrainConfig& config() const { return config_; }

  Checkpoint checkpoint() const;
  /// Parameters, optimizer moments and step counter.
  void restore(const Checkpoint& ck);

 private:
  NvistModel<float>& model_;
  const Dataset& data_;
  TrainConfig config_;
  Adam<float> adam_;
  std::vector<std::size_t> scenes_;
  std::size_t step_ = 0;
};

struct MaeTrainConfig {
  double lr = 1e-3;
  std::size_t steps = 2000;
  std::size_t images_per_step = 8;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 1000;
  AdamConfig adam;
};

/// Masked-patch pretraining of the encoder with its own lightweight decoder.
class MaePretrainer {
 public:
  MaePretrainer(NvistModel<float>& model, const Dataset& data, const MaeTrainConfig& config);

  StepMetrics step();
  std::size_t next_step() const { return step_; }
  const MaeHead<float>& head() const { return head_; }

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& ck);

 private:
  NvistModel<float>& model_;
  const Dataset& data_;
  MaeTrainConfig config_;
  MaeHead<float> head_;
  std::vector<NamedParameter<float>> head_params_;
  std::optional<Adam<float>> adam_;
  std::vector<std::size_t> scenes_;
  std::size_t step_ = 0;
};

/// Drives `step` until `total` steps are done: appends rows to
/// run_dir/metrics.csv (rows at or after the resume step are replaced),
/// writes checkpoint_<step>.nvst every `every` steps and latest.nvst at the end.
void run_steps(const std::function<StepMetrics()>& step, const std::function<Checkpoint()>& checkpoint,
               std::size_t first_step, std::size_t total, std::size_t every, const std::filesystem::path& run_dir,
               std::ostream* progress = nullptr);

std::string metrics_header();
std::string metrics_row(const StepMetrics& m);

struct SceneScore {
  std::string id;
  std::size_t views = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double baseline_psnr = 0.0;
  double baseline_ssim = 0.0;
};

struct EvalReport {
  std::vector<SceneScore> scenes;
  double psnr = 0.0;
  double ssim = 0.0;
  double baseline_psnr = 0.0;
  double baseline_ssim = 0.0;
};

/// Predicted images [H, W, 3] for views 1..V-1 of a scene, given view 0 as input.
using ScenePredictor = std::function<std::vector<std::vector<float>>(const SceneRecord&)>;

/// Scores predictions against the stored views, alongside a constant
/// background-color image. Throws EvaluationError on an empty scene list.
EvalReport evaluate_predictions(const Dataset& data, const std::vector<std::size_t>& scenes,
                                const ScenePredictor& predict);

/// Renders every non-input view of each listed scene from view 0.
EvalReport evaluate(const NvistModel<float>& model, const Dataset& data, const std::vector<std::size_t>& scenes);

}  // namespace nvist
