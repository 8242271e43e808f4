#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvist/params.h"
#include "nvist/tensor.h"

namespace nvist {

/// Inconsistent model or run configuration (indivisible sizes, width mismatch, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// y = x W + b with W [in, out]. Accepts [n, in].
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined when built without bias
  std::size_t in = 0;
  std::size_t out = 0;

  Linear() = default;
  Linear(ParamBuilder<T>& b, const std::string& name, std::size_t in, std::size_t out);
  Linear(ParamBuilder<T>& b, const std::string& name, std::size_t in, std::size_t out, const Init& weight_init,
         const Init& bias_init, bool with_bias = true);

  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Standard layer normalization with learned per-channel scale and shift.
template <typename T>
struct LayerNorm {
  Tensor<T> weight;
  Tensor<T> bias;

  LayerNorm() = default;
  LayerNorm(ParamBuilder<T>& b, const std::string& name, std::size_t width);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Scale, shift and residual gate for one normalization site, each [e].
template <typename T>
struct AdaLNParams {
  Tensor<T> alpha;
  Tensor<T> delta;
  Tensor<T> gamma;
};

/// delta + alpha * norm(x), norm parameter-free over the last axis.
template <typename T>
Tensor<T> adaptive_layer_norm(const Tensor<T>& x, const AdaLNParams<T>& p);

/// Conditioning MLP: cond (18) -> hidden -> 3 * width per site, emitting
/// (alpha, delta, gamma) for every normalization site. The final layer
/// starts at zero weights with bias alpha = 1, delta = 0, gamma = gate_init.
template <typename T>
struct AdaLNMlp {
  Linear<T> fc1;
  Linear<T> fc2;
  std::size_t sites = 0;
  std::size_t width = 0;

  AdaLNMlp() = default;
  AdaLNMlp(ParamBuilder<T>& b, const std::string& name, std::size_t cond_size, std::size_t hidden, std::size_t width,
           std::size_t sites, double gate_init = 0.0);

  std::size_t output_size() const { return 3 * width * sites; }
  /// cond: [cond_size]. One triple per site, in site order.
  std::vector<AdaLNParams<T>> operator()(const Tensor<T>& cond) const;
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;
  std::size_t width = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamBuilder<T>& b, const std::string& name, std::size_t width, std::size_t heads);

  /// queries [n, e], keys_values [m, e] -> [n, e]. If `weights` is given it
  /// receives the softmax attention matrix [heads, n, m].
  Tensor<T> operator()(const Tensor<T>& queries, const Tensor<T>& keys_values, Tensor<T>* weights = nullptr) const;
};

/// e -> ratio*e -> e with GELU.
template <typename T>
struct Mlp {
  Linear<T> fc1;
  Linear<T> fc2;

  Mlp() = default;
  Mlp(ParamBuilder<T>& b, const std::string& name, std::size_t width, std::size_t ratio = 4);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Pre-norm block: x += g1 * attn(norm1(x), ctx_norm(context) or norm1(x));
/// x += g2 * mlp(norm2(x)). In adaptive mode the norms and gates come from
/// AdaLN parameters supplied per call and no affine LN is declared for them.
template <typename T>
struct TransformerBlock {
  bool adaptive = false;
  bool cross = false;
  LayerNorm<T> norm1, norm2, norm_ctx;
  MultiHeadAttention<T> attn;
  Mlp<T> mlp;

  TransformerBlock() = default;
  TransformerBlock(ParamBuilder<T>& b, const std::string& name, std::size_t width, std::size_t heads, bool adaptive,
                   bool cross, std::size_t mlp_ratio = 4);

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>* context = nullptr,
                       const AdaLNParams<T>* site1 = nullptr, const AdaLNParams<T>* site2 = nullptr) const;
};

/// Raw patches of an [H, W, 3] image: [(H/p)(W/p), p*p*3], row-major over
/// patches, each patch flattened as (row, col, channel).
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch);
/// Inverse of patchify.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t height, std::size_t width, std::size_t patch);

template <typename T>
struct PatchEmbed {
  Linear<T> proj;
  std::size_t patch = 1;

  PatchEmbed() = default;
  PatchEmbed(ParamBuilder<T>& b, const std::string& name, std::size_t patch, std::size_t width);
  /// image [H, W, 3] -> tokens [(H/p)(W/p), e].
  Tensor<T> operator()(const Tensor<T>& image) const;
};

/// Fixed 2-D sine-cosine embedding [rows*cols, width]: the first half of the
/// channels encodes the column index, the second half the row index.
std::vector<double> sincos_position_embedding(std::size_t rows, std::size_t cols, std::size_t width);

}  // namespace nvist
