#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nvist/attention.h"
#include "nvist/camera.h"
#include "nvist/params.h"
#include "nvist/renderer.h"
#include "nvist/tensor.h"

namespace nvist {

struct EncoderConfig {
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  std::size_t patch = 4;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t width = 128;
};

struct DecoderConfig {
  std::size_t vm_resolution = 24;
  std::size_t vm_channels = 16;
  std::size_t patch = 3;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t width = 128;
  std::size_t adaln_hidden = 128;
  /// Initial residual gate emitted by the conditioning MLP.
  double gate_init = 0.0;
  /// Std of the VM head weights, in units of 1/sqrt(width).
  double head_scale = 0.1;
  /// Initial bias of the VM heads (all entries).
  double head_bias = 0.0;
};

struct RendererConfig {
  std::size_t hidden = 128;
  std::size_t samples = 48;
};

/// Lightweight decoder used only for masked-patch pretraining.
struct MaeConfig {
  double mask_ratio = 0.75;
  std::size_t width = 64;
  std::size_t depth = 2;
  std::size_t heads = 4;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  RendererConfig renderer;
  MaeConfig mae;

  /// Desk-scale default.
  static ModelConfig toy();
  /// Full-size configuration (160x90 input, ViT-B encoder, R=48 VM).
  static ModelConfig paper();
  /// Smallest configuration exercising every component; used by gradchecks.
  static ModelConfig tiny();

  /// Throws ConfigError on any inconsistency.
  void validate() const;
};

std::size_t feature_token_count(const EncoderConfig& c);
/// 3 (R/q)^2 matrix tokens followed by 3 (R/q) vector tokens.
std::size_t output_token_count(const DecoderConfig& c);
std::size_t matrix_head_width(const DecoderConfig& c);
std::size_t vector_head_width(const DecoderConfig& c);

struct ParameterCounts {
  std::size_t encoder = 0;
  std::size_t decoder = 0;
  std::size_t renderer = 0;
  std::size_t total() const { return encoder + decoder + renderer; }
};

/// Counts declared parameters without allocating them.
ParameterCounts count_parameters(const ModelConfig& config);

template <typename T>
struct EncoderOutput {
  Tensor<T> features;  // [N, e]
  Tensor<T> cls;       // [1, e]
};

template <typename T>
struct Encoder {
  EncoderConfig config;
  PatchEmbed<T> patch_embed;
  Tensor<T> cls_token;
  Tensor<T> position;  // fixed, [N, e]
  std::vector<TransformerBlock<T>> blocks;
  LayerNorm<T> norm;

  Encoder() = default;
  Encoder(ParamBuilder<T>& b, const EncoderConfig& config);

  /// image [H, W, 3] -> features and class token.
  EncoderOutput<T> operator()(const Tensor<T>& image) const;
  /// Class token followed by the given patch tokens, after the final norm: [1 + |visible|, e].
  Tensor<T> encode_visible(const Tensor<T>& image, const std::vector<std::size_t>& visible) const;
};

struct PatchMask {
  std::vector<std::size_t> visible;
  std::vector<std::size_t> masked;
};

/// ceil(ratio * n) masked patch indices chosen uniformly; the rest visible.
PatchMask random_patch_mask(std::size_t n, double ratio, Rng& rng);

/// Mask-token decoder that reconstructs pixels from visible-patch encodings.
template <typename T>
struct MaeHead {
  EncoderConfig encoder_config;
  MaeConfig config;
  Linear<T> embed;
  Tensor<T> mask_token;
  Tensor<T> position;  // fixed
  std::vector<TransformerBlock<T>> blocks;
  LayerNorm<T> norm;
  Linear<T> predict;

  MaeHead() = default;
  MaeHead(ParamBuilder<T>& b, const EncoderConfig& encoder, const MaeConfig& config);

  /// Mean squared pixel error over masked patches; exactly 0 with no masked patch.
  Tensor<T> loss(const Encoder<T>& encoder, const Tensor<T>& image, const PatchMask& mask) const;
};

template <typename T>
struct DecoderBlock {
  MultiHeadAttention<T> self_attn;
  MultiHeadAttention<T> cross_attn;
  LayerNorm<T> norm_ctx;
  Mlp<T> mlp;

  static constexpr std::size_t kSites = 3;

  DecoderBlock() = default;
  DecoderBlock(ParamBuilder<T>& b, const std::string& name, std::size_t width, std::size_t heads);

  /// sites: self-attention, cross-attention and MLP AdaLN parameters.
  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& context, const AdaLNParams<T>* sites) const;
};

/// Token layout to VM factors. Matrix tokens are ordered Myz, Mzx, Mxy, each
/// row-major over its (R/q)^2 patches; vector tokens Vx, Vy, Vz follow.
template <typename T>
VMRepresentation<T> unpatchify_vm(const Tensor<T>& matrix_rows, const Tensor<T>& vector_rows, std::size_t resolution,
                                  std::size_t patch, std::size_t channels);
/// Inverse of unpatchify_vm: returns (matrix_rows, vector_rows).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> patchify_vm(const VMRepresentation<T>& vm, std::size_t patch);

template <typename T>
struct Decoder {
  DecoderConfig config;
  Tensor<T> output_tokens;  // [tokens, e]
  Tensor<T> position;       // [tokens + 1, e]
  AdaLNMlp<T> conditioning;
  std::vector<DecoderBlock<T>> blocks;
  LayerNorm<T> norm;
  Linear<T> matrix_head;
  Linear<T> vector_head;

  Decoder() = default;
  Decoder(ParamBuilder<T>& b, const DecoderConfig& config);

  /// Final output tokens with the class slot dropped: [tokens, e].
  Tensor<T> tokens(const Tensor<T>& features, const Tensor<T>& cls, const Tensor<T>& cond) const;
  VMRepresentation<T> reshape_to_vm(const Tensor<T>& tokens) const;
  VMRepresentation<T> operator()(const Tensor<T>& features, const Tensor<T>& cls, const Tensor<T>& cond) const;
};

template <typename T>
Tensor<T> conditioning_tensor(const ConditioningVector& c);

/// Image in [0, 1] as a [H, W, 3] constant tensor.
template <typename T>
Tensor<T> image_tensor(const std::vector<float>& rgb, std::size_t height, std::size_t width);

template <typename T>
class NvistModel {
 public:
  NvistModel(const ModelConfig& config, std::uint64_t seed);
  NvistModel(const NvistModel&) = delete;
  NvistModel& operator=(const NvistModel&) = delete;

  const ModelConfig& config() const { return config_; }
  const Encoder<T>& encoder() const { return encoder_; }
  const Decoder<T>& decoder() const { return decoder_; }
  const ColorMlp<T>& color_mlp() const { return color_mlp_; }

  VMRepresentation<T> predict(const Tensor<T>& image, const ConditioningVector& cond) const;

  const std::vector<NamedParameter<T>>& parameters() const { return params_; }

 private:
  ModelConfig config_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
  ColorMlp<T> color_mlp_;
  std::vector<NamedParameter<T>> params_;
};

/// Declares (or builds) every model component under the fixed prefixes
/// "encoder.", "decoder." and "renderer.".
template <typename T>
void build_model(ParamBuilder<T>& b, const ModelConfig& config, Encoder<T>& encoder, Decoder<T>& decoder,
                 ColorMlp<T>& color_mlp);

}  // namespace nvist
