#include "nvist/attention.h"

#include <cmath>

namespace nvist {

template <typename T>
Linear<T>::Linear(ParamBuilder<T>& b, const std::string& name, std::size_t in_, std::size_t out_)
    : Linear(b, name, in_, out_, Init::xavier(in_, out_), Init::zeros()) {}

template <typename T>
Linear<T>::Linear(ParamBuilder<T>& b, const std::string& name, std::size_t in_, std::size_t out_,
                  const Init& weight_init, const Init& bias_init, bool with_bias)
    : in(in_), out(out_) {
  auto s = b.scope(name);
  weight = b.make("weight", {in, out}, weight_init);
  if (with_bias) bias = b.make("bias", {out}, bias_init);
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() != 2 || x.size(1) != in) {
    throw ShapeError("linear layer expects [n, " + std::to_string(in) + "], got " + shape_str(x.shape()));
  }
  Tensor<T> y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamBuilder<T>& b, const std::string& name, std::size_t width) {
  auto s = b.scope(name);
  weight = b.make("weight", {width}, Init::ones());
  bias = b.make("bias", {width}, Init::zeros());
}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
  return add(mul(layer_norm(x), weight), bias);
}

template <typename T>
Tensor<T> adaptive_layer_norm(const Tensor<T>& x, const AdaLNParams<T>& p) {
  const std::size_t e = x.shape().back();
  if (p.alpha.numel() != e || p.delta.numel() != e) {
    throw ShapeError("AdaLN parameters of width " + std::to_string(p.alpha.numel()) + " for tokens of width " +
                     std::to_string(e));
  }
  return add(p.delta, mul(p.alpha, layer_norm(x)));
}

template <typename T>
AdaLNMlp<T>::AdaLNMlp(ParamBuilder<T>& b, const std::string& name, std::size_t cond_size, std::size_t hidden,
                      std::size_t width_, std::size_t sites_, double gate_init)
    : sites(sites_), width(width_) {
  auto s = b.scope(name);
  fc1 = Linear<T>(b, "fc1", cond_size, hidden);
  std::vector<double> bias(3 * width * sites, 0.0);
  for (std::size_t site = 0; site < sites; ++site) {
    const std::size_t base = 3 * width * site;
    std::fill(bias.begin() + base, bias.begin() + base + width, 1.0);
    std::fill(bias.begin() + base + 2 * width, bias.begin() + base + 3 * width, gate_init);
  }
  fc2 = Linear<T>(b, "fc2", hidden, 3 * width * sites, Init::zeros(),
                  b.allocating() ? Init::from(std::move(bias)) : Init::zeros());
}

template <typename T>
std::vector<AdaLNParams<T>> AdaLNMlp<T>::operator()(const Tensor<T>& cond) const {
  if (cond.numel() != fc1.in) {
    throw ShapeError("conditioning vector has " + std::to_string(cond.numel()) + " entries, expected " +
                     std::to_string(fc1.in));
  }
  Tensor<T> h = gelu(fc1(reshape(cond, {1, fc1.in})));
  Tensor<T> all = reshape(fc2(h), {3 * sites, width});
  std::vector<AdaLNParams<T>> out(sites);
  for (std::size_t s = 0; s < sites; ++s) {
    out[s].alpha = reshape(slice(all, 0, 3 * s, 3 * s + 1), {width});
    out[s].delta = reshape(slice(all, 0, 3 * s + 1, 3 * s + 2), {width});
    out[s].gamma = reshape(slice(all, 0, 3 * s + 2, 3 * s + 3), {width});
  }
  return out;
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParamBuilder<T>& b, const std::string& name, std::size_t width_,
                                          std::size_t heads_)
    : heads(heads_), width(width_) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("embedding width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  auto s = b.scope(name);
  q = Linear<T>(b, "q", width, width);
  // A key bias adds the same constant to every score of a query row, which
  // softmax cancels; it would be a parameter with identically zero gradient.
  k = Linear<T>(b, "k", width, width, Init::xavier(width, width), Init::zeros(), false);
  v = Linear<T>(b, "v", width, width);
  o = Linear<T>(b, "o", width, width);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& queries, const Tensor<T>& keys_values,
                                            Tensor<T>* weights) const {
  const std::size_t n = queries.size(0);
  const std::size_t m = keys_values.size(0);
  const std::size_t d = width / heads;
  Tensor<T> qh = permute(reshape(q(queries), {n, heads, d}), {1, 0, 2});     // [h, n, d]
  Tensor<T> kh = permute(reshape(k(keys_values), {m, heads, d}), {1, 2, 0});  // [h, d, m]
  Tensor<T> vh = permute(reshape(v(keys_values), {m, heads, d}), {1, 0, 2});  // [h, m, d]
  Tensor<T> attn = softmax(scale(matmul(qh, kh), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)))), 2);
  if (weights) *weights = attn;
  Tensor<T> mixed = reshape(permute(matmul(attn, vh), {1, 0, 2}), {n, width});
  return o(mixed);
}

template <typename T>
Mlp<T>::Mlp(ParamBuilder<T>& b, const std::string& name, std::size_t width, std::size_t ratio) {
  auto s = b.scope(name);
  fc1 = Linear<T>(b, "fc1", width, ratio * width);
  fc2 = Linear<T>(b, "fc2", ratio * width, width);
}

template <typename T>
Tensor<T> Mlp<T>::operator()(const Tensor<T>& x) const {
  return fc2(gelu(fc1(x)));
}

template <typename T>
TransformerBlock<T>::TransformerBlock(ParamBuilder<T>& b, const std::string& name, std::size_t width,
                                      std::size_t heads, bool adaptive_, bool cross_, std::size_t mlp_ratio)
    : adaptive(adaptive_), cross(cross_) {
  auto s = b.scope(name);
  if (!adaptive) norm1 = LayerNorm<T>(b, "norm1", width);
  if (cross) norm_ctx = LayerNorm<T>(b, "norm_ctx", width);
  attn = MultiHeadAttention<T>(b, "attn", width, heads);
  if (!adaptive) norm2 = LayerNorm<T>(b, "norm2", width);
  mlp = Mlp<T>(b, "mlp", width, mlp_ratio);
}

template <typename T>
Tensor<T> TransformerBlock<T>::operator()(const Tensor<T>& x, const Tensor<T>* context, const AdaLNParams<T>* site1,
                                          const AdaLNParams<T>* site2) const {
  if (adaptive && (!site1 || !site2)) throw ContractError("adaptive block called without AdaLN parameters");
  if (cross != (context != nullptr)) throw ContractError("cross-attention block needs exactly one context");

  Tensor<T> h = adaptive ? adaptive_layer_norm(x, *site1) : norm1(x);
  Tensor<T> a = cross ? attn(h, norm_ctx(*context)) : attn(h, h);
  Tensor<T> y = add(x, adaptive ? mul(site1->gamma, a) : a);

  Tensor<T> h2 = adaptive ? adaptive_layer_norm(y, *site2) : norm2(y);
  Tensor<T> f = mlp(h2);
  return add(y, adaptive ? mul(site2->gamma, f) : f);
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t p) {
  if (image.rank() != 3 || image.size(2) != 3) throw ShapeError("patchify expects [H, W, 3], got " + shape_str(image.shape()));
  const std::size_t h = image.size(0), w = image.size(1);
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw ConfigError("patch size " + std::to_string(p) + " does not divide image size " + std::to_string(h) + "x" +
                      std::to_string(w));
  }
  Tensor<T> t = reshape(image, {h / p, p, w / p, p, 3});
  return reshape(permute(t, {0, 2, 1, 3, 4}), {(h / p) * (w / p), p * p * 3});
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t h, std::size_t w, std::size_t p) {
  if (p == 0 || h % p != 0 || w % p != 0) throw ConfigError("patch size does not divide image size");
  if (patches.rank() != 2 || patches.size(0) != (h / p) * (w / p) || patches.size(1) != p * p * 3) {
    throw ShapeError("unpatchify got " + shape_str(patches.shape()));
  }
  Tensor<T> t = reshape(patches, {h / p, w / p, p, p, 3});
  return reshape(permute(t, {0, 2, 1, 3, 4}), {h, w, 3});
}

template <typename T>
PatchEmbed<T>::PatchEmbed(ParamBuilder<T>& b, const std::string& name, std::size_t patch_, std::size_t width)
    : patch(patch_) {
  auto s = b.scope(name);
  proj = Linear<T>(b, "proj", patch * patch * 3, width);
}

template <typename T>
Tensor<T> PatchEmbed<T>::operator()(const Tensor<T>& image) const {
  return proj(patchify(image, patch));
}

std::vector<double> sincos_position_embedding(std::size_t rows, std::size_t cols, std::size_t width) {
  if (width % 4 != 0) throw ConfigError("sine-cosine position embedding needs a width divisible by 4");
  const std::size_t quarter = width / 4;
  std::vector<double> out(rows * cols * width);
  auto fill = [&](double pos, double* dst) {
    for (std::size_t i = 0; i < quarter; ++i) {
      const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
      dst[i] = std::sin(pos * omega);
      dst[quarter + i] = std::cos(pos * omega);
    }
  };
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double* row = out.data() + (r * cols + c) * width;
      fill(static_cast<double>(c), row);
      fill(static_cast<double>(r), row + 2 * quarter);
    }
  }
  return out;
}

#define NVIST_INSTANTIATE_ATTENTION(T)                                                            \
  template struct Linear<T>;                                                                      \
  template struct LayerNorm<T>;                                                                   \
  template struct AdaLNMlp<T>;                                                                    \
  template struct MultiHeadAttention<T>;                                                          \
  template struct Mlp<T>;                                                                         \
  template struct TransformerBlock<T>;                                                            \
  template struct PatchEmbed<T>;                                                                  \
  template Tensor<T> adaptive_layer_norm(const Tensor<T>&, const AdaLNParams<T>&);                \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> unpatchify(const Tensor<T>&, std::size_t, std::size_t, std::size_t);

NVIST_INSTANTIATE_ATTENTION(float)
NVIST_INSTANTIATE_ATTENTION(double)

}  // namespace nvist
