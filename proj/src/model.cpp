#include "nvist/model.h"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nvist {

ModelConfig ModelConfig::toy() { return {}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.encoder = {90, 160, 5, 12, 12, 768};
  c.decoder.vm_resolution = 48;
  c.decoder.vm_channels = 32;
  c.decoder.patch = 3;
  c.decoder.depth = 12;
  c.decoder.heads = 16;
  c.decoder.width = 768;
  c.decoder.adaln_hidden = 256;
  c.renderer.hidden = 180;
  c.mae = {0.75, 512, 8, 16};
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.encoder = {8, 8, 4, 2, 2, 16};
  c.decoder.vm_resolution = 6;
  c.decoder.vm_channels = 2;
  c.decoder.patch = 3;
  c.decoder.depth = 2;
  c.decoder.heads = 2;
  c.decoder.width = 16;
  c.decoder.adaln_hidden = 8;
  c.renderer.hidden = 8;
  c.renderer.samples = 8;
  c.mae = {0.75, 8, 1, 2};
  return c;
}

void ModelConfig::validate() const {
  const auto& e = encoder;
  const auto& d = decoder;
  if (e.patch == 0 || e.image_height % e.patch != 0 || e.image_width % e.patch != 0) {
    throw ConfigError("encoder patch size " + std::to_string(e.patch) + " does not divide the image size " +
                      std::to_string(e.image_height) + "x" + std::to_string(e.image_width));
  }
  if (e.heads == 0 || e.width % e.heads != 0) throw ConfigError("encoder width not divisible by heads");
  if (e.width % 4 != 0) throw ConfigError("encoder width must be a multiple of 4");
  if (d.patch == 0 || d.vm_resolution % d.patch != 0) {
    throw ConfigError("decoder patch size " + std::to_string(d.patch) + " does not divide VM resolution " +
                      std::to_string(d.vm_resolution));
  }
  if (d.vm_resolution < 2) throw ConfigError("VM resolution must be at least 2");
  if (d.heads == 0 || d.width % d.heads != 0) throw ConfigError("decoder width not divisible by heads");
  if (d.width != e.width) {
    throw ConfigError("encoder width " + std::to_string(e.width) + " differs from decoder width " +
                      std::to_string(d.width));
  }
  if (d.vm_channels == 0 || d.depth == 0 || d.adaln_hidden == 0) throw ConfigError("decoder sizes must be positive");
  if (renderer.hidden == 0 || renderer.samples == 0) throw ConfigError("renderer sizes must be positive");
  if (!(mae.mask_ratio >= 0.0 && mae.mask_ratio < 1.0)) throw ConfigError("mask ratio must be in [0, 1)");
  if (mae.heads == 0 || mae.width % mae.heads != 0 || mae.width % 4 != 0) {
    throw ConfigError("pretraining decoder width must be a multiple of 4 and of its head count");
  }
}

std::size_t feature_token_count(const EncoderConfig& c) {
  return (c.image_height / c.patch) * (c.image_width / c.patch);
}

std::size_t output_token_count(const DecoderConfig& c) {
  const std::size_t g = c.vm_resolution / c.patch;
  return 3 * g * g + 3 * g;
}

std::size_t matrix_head_width(const DecoderConfig& c) { return c.patch * c.patch * c.vm_channels; }
std::size_t vector_head_width(const DecoderConfig& c) { return c.patch * c.vm_channels; }

// ---------------------------------------------------------------------------

template <typename T>
Encoder<T>::Encoder(ParamBuilder<T>& b, const EncoderConfig& c) : config(c) {
  patch_embed = PatchEmbed<T>(b, "patch_embed", c.patch, c.width);
  cls_token = b.make("cls_token", {1, c.width}, Init::normal(0.02));
  const std::size_t rows = c.image_height / c.patch, cols = c.image_width / c.patch;
  if (b.allocating()) {
    const auto pe = sincos_position_embedding(rows, cols, c.width);
    position = Tensor<T>(Shape{rows * cols, c.width}, std::vector<T>(pe.begin(), pe.end()));
  }
  for (std::size_t i = 0; i < c.depth; ++i) {
    blocks.emplace_back(b, "blocks." + std::to_string(i), c.width, c.heads, false, false);
  }
  norm = LayerNorm<T>(b, "norm", c.width);
}

template <typename T>
EncoderOutput<T> Encoder<T>::operator()(const Tensor<T>& image) const {
  if (image.shape() != Shape{config.image_height, config.image_width, 3}) {
    throw ConfigError("encoder expects a " + std::to_string(config.image_height) + "x" +
                      std::to_string(config.image_width) + " image, got " + shape_str(image.shape()));
  }
  Tensor<T> x = concat(std::vector<Tensor<T>>{cls_token, add(patch_embed(image), position)}, 0);
  for (const auto& blk : blocks) x = blk(x);
  x = norm(x);
  const std::size_t n = x.size(0);
  return {slice(x, 0, 1, n), slice(x, 0, 0, 1)};
}

template <typename T>
Tensor<T> Encoder<T>::encode_visible(const Tensor<T>& image, const std::vector<std::size_t>& visible) const {
  if (image.shape() != Shape{config.image_height, config.image_width, 3}) {
    throw ConfigError("encoder got an image of shape " + shape_str(image.shape()));
  }
  Tensor<T> tokens = index_select(add(patch_embed(image), position), visible);
  Tensor<T> x = concat(std::vector<Tensor<T>>{cls_token, tokens}, 0);
  for (const auto& blk : blocks) x = blk(x);
  return norm(x);
}

PatchMask random_patch_mask(std::size_t n, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ContractError("mask ratio must be in [0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Fisher-Yates with an explicit draw so the result does not depend on the
  // standard library's shuffle.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  const auto masked = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  PatchMask m;
  m.masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(masked));
  m.visible.assign(order.begin() + static_cast<std::ptrdiff_t>(masked), order.end());
  std::sort(m.masked.begin(), m.masked.end());
  std::sort(m.visible.begin(), m.visible.end());
  return m;
}

template <typename T>
MaeHead<T>::MaeHead(ParamBuilder<T>& b, const EncoderConfig& enc, const MaeConfig& c) : encoder_config(enc), config(c) {
  auto s = b.scope("mae");
  embed = Linear<T>(b, "embed", enc.width, c.width);
  mask_token = b.make("mask_token", {1, c.width}, Init::normal(0.02));
  const std::size_t rows = enc.image_height / enc.patch, cols = enc.image_width / enc.patch;
  if (b.allocating()) {
    const auto pe = sincos_position_embedding(rows, cols, c.width);
    position = Tensor<T>(Shape{rows * cols, c.width}, std::vector<T>(pe.begin(), pe.end()));
  }
  for (std::size_t i = 0; i < c.depth; ++i) {
    blocks.emplace_back(b, "blocks." + std::to_string(i), c.width, c.heads, false, false);
  }
  norm = LayerNorm<T>(b, "norm", c.width);
  predict = Linear<T>(b, "predict", c.width, enc.patch * enc.patch * 3);
}

template <typename T>
Tensor<T> MaeHead<T>::loss(const Encoder<T>& encoder, const Tensor<T>& image, const PatchMask& mask) const {
  if (mask.masked.empty()) return Tensor<T>::scalar(T(0));
  const std::size_t n = mask.visible.size() + mask.masked.size();
  Tensor<T> x = embed(encoder.encode_visible(image, mask.visible));
  Tensor<T> cls = slice(x, 0, 0, 1);
  Tensor<T> vis = slice(x, 0, 1, x.size(0));
  Tensor<T> fill = index_select(mask_token, std::vector<std::size_t>(mask.masked.size(), 0));
  std::vector<std::size_t> restore(n);
  for (std::size_t j = 0; j < mask.visible.size(); ++j) restore[mask.visible[j]] = j;
  for (std::size_t j = 0; j < mask.masked.size(); ++j) restore[mask.masked[j]] = mask.visible.size() + j;
  Tensor<T> tokens = add(index_select(concat(std::vector<Tensor<T>>{vis, fill}, 0), restore), position);
  Tensor<T> seq = concat(std::vector<Tensor<T>>{cls, tokens}, 0);
  for (const auto& blk : blocks) seq = blk(seq);
  Tensor<T> pred = index_select(predict(slice(norm(seq), 0, 1, n + 1)), mask.masked);
  Tensor<T> target = index_select(patchify(image, encoder_config.patch), mask.masked);
  Tensor<T> diff = sub(pred, target.detach());
  return mean(mul(diff, diff));
}

// ---------------------------------------------------------------------------

template <typename T>
DecoderBlock<T>::DecoderBlock(ParamBuilder<T>& b, const std::string& name, std::size_t width, std::size_t heads) {
  auto s = b.scope(name);
  self_attn = MultiHeadAttention<T>(b, "self_attn", width, heads);
  norm_ctx = LayerNorm<T>(b, "norm_ctx", width);
  cross_attn = MultiHeadAttention<T>(b, "cross_attn", width, heads);
  mlp = Mlp<T>(b, "mlp", width);
}

template <typename T>
Tensor<T> DecoderBlock<T>::operator()(const Tensor<T>& x, const Tensor<T>& context, const AdaLNParams<T>* sites) const {
  Tensor<T> h = adaptive_layer_norm(x, sites[0]);
  Tensor<T> y = add(x, mul(sites[0].gamma, self_attn(h, h)));
  h = adaptive_layer_norm(y, sites[1]);
  y = add(y, mul(sites[1].gamma, cross_attn(h, norm_ctx(context))));
  h = adaptive_layer_norm(y, sites[2]);
  return add(y, mul(sites[2].gamma, mlp(h)));
}

template <typename T>
VMRepresentation<T> unpatchify_vm(const Tensor<T>& matrix_rows, const Tensor<T>& vector_rows, std::size_t r,
                                  std::size_t q, std::size_t k) {
  const std::size_t g = r / q;
  if (matrix_rows.shape() != Shape{3 * g * g, q * q * k} || vector_rows.shape() != Shape{3 * g, q * k}) {
    throw ContractError("VM token rows " + shape_str(matrix_rows.shape()) + " / " + shape_str(vector_rows.shape()) +
                        " do not match R=" + std::to_string(r) + ", q=" + std::to_string(q) + ", k=" + std::to_string(k));
  }
  Tensor<T> planes = reshape(permute(reshape(matrix_rows, {3, g, g, q, q, k}), {0, 1, 3, 2, 4, 5}), {3, r, r, k});
  Tensor<T> lines = reshape(vector_rows, {3, r, k});
  VMRepresentation<T> vm;
  vm.myz = reshape(slice(planes, 0, 0, 1), {r, r, k});
  vm.mzx = reshape(slice(planes, 0, 1, 2), {r, r, k});
  vm.mxy = reshape(slice(planes, 0, 2, 3), {r, r, k});
  vm.vx = reshape(slice(lines, 0, 0, 1), {r, k});
  vm.vy = reshape(slice(lines, 0, 1, 2), {r, k});
  vm.vz = reshape(slice(lines, 0, 2, 3), {r, k});
  return vm;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> patchify_vm(const VMRepresentation<T>& vm, std::size_t q) {
  vm.validate();
  const std::size_t r = vm.resolution(), k = vm.channels();
  if (q == 0 || r % q != 0) throw ConfigError("patch size does not divide VM resolution");
  const std::size_t g = r / q;
  Tensor<T> planes = concat(std::vector<Tensor<T>>{reshape(vm.myz, {1, r, r, k}), reshape(vm.mzx, {1, r, r, k}),
                                                   reshape(vm.mxy, {1, r, r, k})},
                            0);
  Tensor<T> m = reshape(permute(reshape(planes, {3, g, q, g, q, k}), {0, 1, 3, 2, 4, 5}), {3 * g * g, q * q * k});
  Tensor<T> v = reshape(concat(std::vector<Tensor<T>>{vm.vx, vm.vy, vm.vz}, 0), {3 * g, q * k});
  return {m, v};
}

template <typename T>
Decoder<T>::Decoder(ParamBuilder<T>& b, const DecoderConfig& c) : config(c) {
  const std::size_t n = output_token_count(c);
  output_tokens = b.make("output_tokens", {n, c.width}, Init::normal(0.02));
  position = b.make("position", {n + 1, c.width}, Init::normal(0.02));
  conditioning =
      AdaLNMlp<T>(b, "conditioning", kConditioningSize, c.adaln_hidden, c.width, DecoderBlock<T>::kSites * c.depth,
                  c.gate_init);
  for (std::size_t i = 0; i < c.depth; ++i) blocks.emplace_back(b, "blocks." + std::to_string(i), c.width, c.heads);
  norm = LayerNorm<T>(b, "norm", c.width);
  const double std_w = c.head_scale / std::sqrt(static_cast<double>(c.width));
  matrix_head = Linear<T>(b, "matrix_head", c.width, matrix_head_width(c), Init::normal(std_w), Init::constant(c.head_bias));
  vector_head = Linear<T>(b, "vector_head", c.width, vector_head_width(c), Init::normal(std_w), Init::constant(c.head_bias));
}

template <typename T>
Tensor<T> Decoder<T>::tokens(const Tensor<T>& features, const Tensor<T>& cls, const Tensor<T>& cond) const {
  if (features.rank() != 2 || features.size(1) != config.width || cls.shape() != Shape{1, config.width}) {
    throw ConfigError("decoder of width " + std::to_string(config.width) + " got features " +
                      shape_str(features.shape()) + " and class token " + shape_str(cls.shape()));
  }
  const std::size_t n = output_tokens.size(0);
  Tensor<T> x = add(concat(std::vector<Tensor<T>>{output_tokens, cls}, 0), position);
  const auto sites = conditioning(cond);
  for (std::size_t i = 0; i < blocks.size(); ++i) x = blocks[i](x, features, sites.data() + DecoderBlock<T>::kSites * i);
  return slice(norm(x), 0, 0, n);
}

template <typename T>
VMRepresentation<T> Decoder<T>::reshape_to_vm(const Tensor<T>& tok) const {
  const std::size_t g = config.vm_resolution / config.patch;
  const std::size_t n = output_token_count(config);
  if (tok.rank() != 2 || tok.size(0) != n) {
    throw ContractError("reshape_to_vm expects " + std::to_string(n) + " tokens, got " + shape_str(tok.shape()));
  }
  Tensor<T> m = matrix_head(slice(tok, 0, 0, 3 * g * g));
  Tensor<T> v = vector_head(slice(tok, 0, 3 * g * g, n));
  return unpatchify_vm(m, v, config.vm_resolution, config.patch, config.vm_channels);
}

template <typename T>
VMRepresentation<T> Decoder<T>::operator()(const Tensor<T>& features, const Tensor<T>& cls,
                                           const Tensor<T>& cond) const {
  return reshape_to_vm(tokens(features, cls, cond));
}

template <typename T>
Tensor<T> conditioning_tensor(const ConditioningVector& c) {
  return Tensor<T>(Shape{c.size()}, std::vector<T>(c.begin(), c.end()));
}

template <typename T>
Tensor<T> image_tensor(const std::vector<float>& rgb, std::size_t height, std::size_t width) {
  if (rgb.size() != height * width * 3) throw ShapeError("image buffer does not match its size");
  return Tensor<T>(Shape{height, width, 3}, std::vector<T>(rgb.begin(), rgb.end()));
}

template <typename T>
void build_model(ParamBuilder<T>& b, const ModelConfig& config, Encoder<T>& encoder, Decoder<T>& decoder,
                 ColorMlp<T>& color_mlp) {
  config.validate();
  {
    auto g = b.group(ParamGroup::Encoder);
    auto s = b.scope("encoder");
    encoder = Encoder<T>(b, config.encoder);
  }
  {
    auto g = b.group(ParamGroup::DecoderRenderer);
    auto s = b.scope("decoder");
    decoder = Decoder<T>(b, config.decoder);
  }
  {
    auto g = b.group(ParamGroup::DecoderRenderer);
    color_mlp = ColorMlp<T>(b, "renderer", config.decoder.vm_channels, config.renderer.hidden);
  }
}

template <typename T>
NvistModel<T>::NvistModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng(seed);
  ParamBuilder<T> b(rng);
  build_model(b, config_, encoder_, decoder_, color_mlp_);
  params_ = b.parameters();
}

template <typename T>
VMRepresentation<T> NvistModel<T>::predict(const Tensor<T>& image, const ConditioningVector& cond) const {
  EncoderOutput<T> enc = encoder_(image);
  return decoder_(enc.features, enc.cls, conditioning_tensor<T>(cond));
}

ParameterCounts count_parameters(const ModelConfig& config) {
  ParamBuilder<float> b;
  Encoder<float> enc;
  Decoder<float> dec;
  ColorMlp<float> mlp;
  build_model(b, config, enc, dec, mlp);
  ParameterCounts c;
  for (const auto& s : b.specs()) {
    const std::size_t n = shape_numel(s.shape);
    if (s.name.rfind("encoder.", 0) == 0) {
      c.encoder += n;
    } else if (s.name.rfind("decoder.", 0) == 0) {
      c.decoder += n;
    } else {
      c.renderer += n;
    }
  }
  return c;
}

#define NVIST_INSTANTIATE_MODEL(T)                                                                              \
  template struct Encoder<T>;                                                                                   \
  template struct MaeHead<T>;                                                                                   \
  template struct DecoderBlock<T>;                                                                              \
  template struct Decoder<T>;                                                                                   \
  template class NvistModel<T>;                                                                                 \
  template VMRepresentation<T> unpatchify_vm(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t,      \
                                             std::size_t);                                                      \
  template std::pair<Tensor<T>, Tensor<T>> patchify_vm(const VMRepresentation<T>&, std::size_t);                \
  template Tensor<T> conditioning_tensor(const ConditioningVector&);                                            \
  template Tensor<T> image_tensor(const std::vector<float>&, std::size_t, std::size_t);                         \
  template void build_model(ParamBuilder<T>&, const ModelConfig&, Encoder<T>&, Decoder<T>&, ColorMlp<T>&);

NVIST_INSTANTIATE_MODEL(float)
NVIST_INSTANTIATE_MODEL(double)

}  // namespace nvist
