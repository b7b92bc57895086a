#include "patchgen/model.hpp"

#include <bit>
#include <sstream>

namespace patchgen {

using nn::Activate;
using nn::Activation;
using nn::BatchNorm;
using nn::Conv2d;
using nn::ConvTranspose2d;
using nn::Dense;
using nn::Sequential;

constexpr int kKernel = 5;
constexpr double kInitStd = 0.02;
constexpr double kLeakySlope = 0.2;

int ModelConfig::levels() const {
  return std::countr_zero(static_cast<unsigned>(image_size / 4));
}

void ModelConfig::validate() const {
  const bool standard = image_size == 64 || image_size == 128;
  const bool reduced = allow_any_size && image_size >= 8 && std::has_single_bit(static_cast<unsigned>(image_size));
  if (!standard && !reduced)
    fail(ErrorCategory::kConfig, "unsupported image size " + std::to_string(image_size) + " (expected 64 or 128)");
  if (base_channels < 1) fail(ErrorCategory::kConfig, "base_channels must be >= 1");
  if (n_patches < 1) fail(ErrorCategory::kConfig, "n_patches must be >= 1");
  if (embed_dim < 1 || noise_dim < 1) fail(ErrorCategory::kConfig, "embedding and noise sizes must be >= 1");
}

std::uint64_t ModelConfig::hash() const {
  std::ostringstream key;
  key << "image_size=" << image_size << ";base_channels=" << base_channels << ";n_patches=" << n_patches
      << ";embed_dim=" << embed_dim << ";noise_dim=" << noise_dim << ";skips=" << skips
      << ";encoder=" << static_cast<int>(encoder);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : key.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

template <typename T>
Sequential<T> down_block(const std::string& prefix, int index, int in, int out, bool norm) {
  Sequential<T> block;
  const std::string id = std::to_string(index + 1);
  block.template add<Conv2d<T>>(prefix + ".conv" + id, in, out, kKernel, 2, kKernel / 2, !norm);
  if (norm) block.template add<BatchNorm<T>>(prefix + ".bn" + id, out);
  block.template add<Activate<T>>(Activation::kLeakyRelu, T(kLeakySlope));
  return block;
}

template <typename T>
Sequential<T> up_block(const std::string& prefix, int index, int in, int out, bool final,
                       Activation final_activation) {
  Sequential<T> block;
  const std::string id = std::to_string(index + 2);
  block.template add<ConvTranspose2d<T>>(prefix + ".fconv" + id, in, out, kKernel, 2, final);
  if (final) {
    block.template add<Activate<T>>(final_activation);
  } else {
    block.template add<BatchNorm<T>>(prefix + ".bn" + id, out);
    block.template add<Activate<T>>(Activation::kRelu);
  }
  return block;
}

template <typename T>
Sequential<T> projection(const std::string& prefix, int in, int channels) {
  Sequential<T> block;
  block.template add<Dense<T>>(prefix + ".project", in, Shape{1, channels, 4, 4}, false);
  block.template add<BatchNorm<T>>(prefix + ".project_bn", channels);
  block.template add<Activate<T>>(Activation::kRelu);
  return block;
}

template <typename T>
void add_or_assign(Tensor<T>& acc, const Tensor<T>& term) {
  if (term.empty()) return;
  if (acc.empty()) {
    acc = term;
  } else {
    add_into(acc, term);
  }
}

}  // namespace

// --- PartEncoder -----------------------------------------------------------

template <typename T>
PartEncoder<T>::PartEncoder(const ModelConfig& config) : config_(config) {
  config_.validate();
  const int levels = config_.levels();
  int in = config_.encoder == EncoderKind::kSiameseSum ? 3 : 3 * config_.n_patches;
  for (int i = 0; i < levels; ++i) {
    levels_.push_back(down_block<T>("encoder", i, in, config_.channels(i), i > 0));
    in = config_.channels(i);
  }
  head_.template add<Dense<T>>("encoder.embed", in * 16, Shape{1, config_.embed_dim, 1, 1}, false);
  head_.template add<BatchNorm<T>>("encoder.embed_bn", config_.embed_dim);
}

template <typename T>
Tensor<T> PartEncoder<T>::sum_patches(const Tensor<T>& per_patch) const {
  const int g = group();
  if (g == 1) return per_patch;
  const Shape& s = per_patch.shape();
  Tensor<T> out(s.n / g, s.c, s.h, s.w);
  const std::size_t item = s.per_item();
  for (int b = 0; b < out.n(); ++b) {
    T* dst = out.item(b).data();
    for (int j = 0; j < g; ++j) {
      const T* src = per_patch.item(b * g + j).data();
      for (std::size_t i = 0; i < item; ++i) dst[i] += src[i];
    }
  }
  return out;
}

template <typename T>
Tensor<T> PartEncoder<T>::spread_patches(const Tensor<T>& per_sample) const {
  const int g = group();
  if (g == 1) return per_sample;
  const Shape& s = per_sample.shape();
  Tensor<T> out(s.n * g, s.c, s.h, s.w);
  for (int b = 0; b < s.n; ++b)
    for (int j = 0; j < g; ++j) std::copy_n(per_sample.item(b).data(), s.per_item(), out.item(b * g + j).data());
  return out;
}

template <typename T>
EncoderOutput<T> PartEncoder<T>::forward(const Tensor<T>& patches, Mode mode) {
  const Shape& s = patches.shape();
  const int n = config_.n_patches;
  if (s.c != 3 || s.h != config_.image_size || s.w != config_.image_size || s.n % n != 0) {
    fail(ErrorCategory::kShape, "part encoder expects (B*" + std::to_string(n) + ") x 3 x " +
                                    std::to_string(config_.image_size) + "^2 patches, got " + to_string(s));
  }
  Tensor<T> h = config_.encoder == EncoderKind::kSiameseSum
                    ? patches
                    : patches.reshaped({s.n / n, 3 * n, s.h, s.w});
  EncoderOutput<T> out;
  for (auto& level : levels_) {
    h = level.forward(h, mode);
    out.pyramid.push_back(sum_patches(h));
  }
  out.embedding = sum_patches(head_.forward(h, mode));
  return out;
}

template <typename T>
void PartEncoder<T>::backward(const EncoderOutput<T>& grad) {
  Tensor<T> g;
  if (!grad.embedding.empty()) g = head_.backward(spread_patches(grad.embedding), true);
  for (std::size_t i = levels_.size(); i-- > 0;) {
    if (i < grad.pyramid.size()) add_or_assign(g, spread_patches(grad.pyramid[i]) );
    if (g.empty()) continue;
    g = levels_[i].backward(g, i > 0);
  }
}

template <typename T>
void PartEncoder<T>::collect_parameters(std::vector<nn::Parameter<T>*>& out) {
  for (auto& level : levels_) level.collect_parameters(out);
  head_.collect_parameters(out);
}

template <typename T>
void PartEncoder<T>::collect_buffers(std::vector<nn::Buffer<T>>& out) {
  for (auto& level : levels_) level.collect_buffers(out);
  head_.collect_buffers(out);
}

// --- MaskDecoder -----------------------------------------------------------

template <typename T>
MaskDecoder<T>::MaskDecoder(const ModelConfig& config)
    : config_(config), project_(projection<T>("mask", config.embed_dim, config.top_channels())) {
  const int levels = config_.levels();
  for (int j = 0; j < levels; ++j) {
    const int own = config_.top_channels() >> j;
    const int skip = config_.skips ? config_.channels(levels - 1 - j) : 0;
    const bool final = j == levels - 1;
    const int out = final ? 1 : config_.top_channels() >> (j + 1);
    stages_.push_back(up_block<T>("mask", j, own + skip, out, final, Activation::kSigmoid));
    own_channels_.push_back(own);
    skip_channels_.push_back(skip);
  }
}

template <typename T>
MaskOutput<T> MaskDecoder<T>::forward(const EncoderOutput<T>& enc, Mode mode) {
  const int levels = config_.levels();
  if (config_.skips && static_cast<int>(enc.pyramid.size()) != levels)
    fail(ErrorCategory::kShape, "mask decoder needs the full encoder pyramid");
  MaskOutput<T> out;
  Tensor<T> h = project_.forward(enc.embedding, mode);
  for (int j = 0; j < levels; ++j) {
    out.pyramid.push_back(h);
    if (config_.skips) {
      const Tensor<T>* parts[] = {&h, &enc.pyramid[levels - 1 - j]};
      h = stages_[j].forward(concat_channels<T>(parts), mode);
    } else {
      h = stages_[j].forward(h, mode);
    }
  }
  out.mask = std::move(h);
  return out;
}

template <typename T>
EncoderOutput<T> MaskDecoder<T>::backward(const Tensor<T>& grad_mask,
                                          const std::vector<Tensor<T>>& grad_pyramid) {
  const int levels = config_.levels();
  EncoderOutput<T> grads;
  grads.pyramid.resize(levels);
  Tensor<T> g = grad_mask;
  for (int j = levels - 1; j >= 0; --j) {
    Tensor<T> g_in = stages_[j].backward(g, true);
    if (config_.skips) {
      const int split[] = {own_channels_[j], skip_channels_[j]};
      std::vector<Tensor<T>> pieces = split_channels(g_in, split);
      g = std::move(pieces[0]);
      grads.pyramid[levels - 1 - j] = std::move(pieces[1]);
    } else {
      g = std::move(g_in);
    }
    if (j < static_cast<int>(grad_pyramid.size())) add_or_assign(g, grad_pyramid[j]);
  }
  grads.embedding = project_.backward(g, true);
  return grads;
}

template <typename T>
void MaskDecoder<T>::collect_parameters(std::vector<nn::Parameter<T>*>& out) {
  project_.collect_parameters(out);
  for (auto& stage : stages_) stage.collect_parameters(out);
}

template <typename T>
void MaskDecoder<T>::collect_buffers(std::vector<nn::Buffer<T>>& out) {
  project_.collect_buffers(out);
  for (auto& stage : stages_) stage.collect_buffers(out);
}

// --- ImageDecoder ----------------------------------------------------------

template <typename T>
ImageDecoder<T>::ImageDecoder(const ModelConfig& config)
    : config_(config),
      project_(projection<T>("image", config.embed_dim + config.noise_dim, config.top_channels())) {
  const int levels = config_.levels();
  for (int j = 0; j < levels; ++j) {
    const int own = config_.top_channels() >> j;
    const int skip = config_.skips ? config_.channels(levels - 1 - j) : 0;
    const bool final = j == levels - 1;
    const int out = final ? 3 : config_.top_channels() >> (j + 1);
    // Mask decoder features at this level have `own` channels.
    stages_.push_back(up_block<T>("image", j, own + (config_.skips ? skip + own : 0), out, final,
                                  Activation::kTanh));
    own_channels_.push_back(own);
    skip_channels_.push_back(skip);
  }
}

template <typename T>
Tensor<T> ImageDecoder<T>::forward(const EncoderOutput<T>& enc, const Tensor<T>& noise,
                                   const std::vector<Tensor<T>>& mask_pyramid, Mode mode) {
  const int levels = config_.levels();
  require_shape(noise.shape(), {enc.embedding.n(), config_.noise_dim, 1, 1}, "image decoder noise");
  if (config_.skips && (static_cast<int>(enc.pyramid.size()) != levels ||
                        static_cast<int>(mask_pyramid.size()) != levels))
    fail(ErrorCategory::kShape, "image decoder needs full encoder and mask pyramids");
  const Tensor<T>* code[] = {&enc.embedding, &noise};
  Tensor<T> h = project_.forward(concat_channels<T>(code), mode);
  for (int j = 0; j < levels; ++j) {
    if (config_.skips) {
      const Tensor<T>* parts[] = {&h, &enc.pyramid[levels - 1 - j], &mask_pyramid[j]};
      h = stages_[j].forward(concat_channels<T>(parts), mode);
    } else {
      h = stages_[j].forward(h, mode);
    }
  }
  return h;
}

template <typename T>
ImageDecoderGrads<T> ImageDecoder<T>::backward(const Tensor<T>& grad_image) {
  const int levels = config_.levels();
  ImageDecoderGrads<T> grads;
  grads.encoding.pyramid.resize(levels);
  grads.mask_pyramid.resize(levels);
  Tensor<T> g = grad_image;
  for (int j = levels - 1; j >= 0; --j) {
    Tensor<T> g_in = stages_[j].backward(g, true);
    if (config_.skips) {
      const int split[] = {own_channels_[j], skip_channels_[j], own_channels_[j]};
      std::vector<Tensor<T>> pieces = split_channels(g_in, split);
      g = std::move(pieces[0]);
      grads.encoding.pyramid[levels - 1 - j] = std::move(pieces[1]);
      grads.mask_pyramid[j] = std::move(pieces[2]);
    } else {
      g = std::move(g_in);
    }
  }
  Tensor<T> g_code = project_.backward(g, true);
  const int split[] = {config_.embed_dim, config_.noise_dim};
  std::vector<Tensor<T>> pieces = split_channels(g_code, split);
  grads.encoding.embedding = std::move(pieces[0]);
  grads.noise = std::move(pieces[1]);
  return grads;
}

template <typename T>
void ImageDecoder<T>::collect_parameters(std::vector<nn::Parameter<T>*>& out) {
  project_.collect_parameters(out);
  for (auto& stage : stages_) stage.collect_parameters(out);
}

template <typename T>
void ImageDecoder<T>::collect_buffers(std::vector<nn::Buffer<T>>& out) {
  project_.collect_buffers(out);
  for (auto& stage : stages_) stage.collect_buffers(out);
}

// --- Discriminator ---------------------------------------------------------

template <typename T>
Discriminator<T>::Discriminator(const ModelConfig& config) {
  int in = 3;
  for (int i = 0; i < config.levels(); ++i) {
    const std::string id = std::to_string(i + 1);
    body_.template add<Conv2d<T>>("disc.conv" + id, in, config.channels(i), kKernel, 2, kKernel / 2, i == 0);
    if (i > 0) body_.template add<BatchNorm<T>>("disc.bn" + id, config.channels(i));
    body_.template add<Activate<T>>(Activation::kLeakyRelu, T(kLeakySlope));
    in = config.channels(i);
  }
  body_.template add<Dense<T>>("disc.score", in * 16, Shape{1, 1, 1, 1}, true);
  body_.template add<Activate<T>>(Activation::kSigmoid);
}

template <typename T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& images, Mode mode) {
  return body_.forward(images, mode);
}

template <typename T>
Tensor<T> Discriminator<T>::backward(const Tensor<T>& grad_probs, bool need_input_grad) {
  return body_.backward(grad_probs, need_input_grad);
}

template <typename T>
void Discriminator<T>::collect_parameters(std::vector<nn::Parameter<T>*>& out) {
  body_.collect_parameters(out);
}

template <typename T>
void Discriminator<T>::collect_buffers(std::vector<nn::Buffer<T>>& out) {
  body_.collect_buffers(out);
}

// --- Model -----------------------------------------------------------------

template <typename T>
Model<T>::Model(const ModelConfig& config)
    : config_(config), encoder_(config), mask_decoder_(config), image_decoder_(config),
      discriminator_(config) {}

template <typename T>
void Model<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  nn::init_normal(encoder_parameters(), rng, kInitStd);
  nn::init_normal(mask_decoder_parameters(), rng, kInitStd);
  nn::init_normal(image_decoder_parameters(), rng, kInitStd);
  nn::init_normal(discriminator_parameters(), rng, kInitStd);
}

template <typename T>
EncoderOutput<T> Model<T>::encode_parts(const Tensor<T>& patches, Mode mode) {
  return encoder_.forward(patches, mode);
}

template <typename T>
MaskOutput<T> Model<T>::predict_mask(const EncoderOutput<T>& enc, Mode mode) {
  return mask_decoder_.forward(enc, mode);
}

template <typename T>
Tensor<T> Model<T>::generate_image(const EncoderOutput<T>& enc, const Tensor<T>& noise,
                                   const std::vector<Tensor<T>>& mask_pyramid, Mode mode) {
  return image_decoder_.forward(enc, noise, mask_pyramid, mode);
}

template <typename T>
Tensor<T> Model<T>::discriminate(const Tensor<T>& images, Mode mode) {
  const Shape& s = images.shape();
  if (s.c != 3 || s.h != config_.image_size || s.w != config_.image_size)
    fail(ErrorCategory::kShape, "discriminator expects B x 3 x S x S, got " + to_string(s));
  return discriminator_.forward(images, mode);
}

template <typename T>
GeneratorOutput<T> Model<T>::generate(const Tensor<T>& patches, const Tensor<T>& noise, Mode mode) {
  GeneratorOutput<T> out;
  out.encoding = encode_parts(patches, mode);
  out.mask = predict_mask(out.encoding, mode);
  out.image = generate_image(out.encoding, noise, out.mask.pyramid, mode);
  return out;
}

template <typename T>
void Model<T>::backward_generator(const Tensor<T>& grad_mask, const Tensor<T>& grad_image) {
  ImageDecoderGrads<T> image_grads;
  if (!grad_image.empty()) image_grads = image_decoder_.backward(grad_image);

  Tensor<T> mask_grad = grad_mask;
  if (mask_grad.empty()) {
    const int batch = grad_image.empty() ? 0 : grad_image.n();
    if (batch == 0) return;
    mask_grad = Tensor<T>(batch, 1, config_.image_size, config_.image_size);
  }
  EncoderOutput<T> total = mask_decoder_.backward(mask_grad, image_grads.mask_pyramid);
  add_or_assign(total.embedding, image_grads.encoding.embedding);
  for (std::size_t i = 0; i < image_grads.encoding.pyramid.size(); ++i) {
    if (i >= total.pyramid.size()) total.pyramid.resize(i + 1);
    add_or_assign(total.pyramid[i], image_grads.encoding.pyramid[i]);
  }
  encoder_.backward(total);
}

template <typename T>
Tensor<T> Model<T>::backward_discriminator(const Tensor<T>& grad_probs, bool need_input_grad) {
  return discriminator_.backward(grad_probs, need_input_grad);
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::encoder_parameters() {
  std::vector<nn::Parameter<T>*> out;
  encoder_.collect_parameters(out);
  return out;
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::mask_decoder_parameters() {
  std::vector<nn::Parameter<T>*> out;
  mask_decoder_.collect_parameters(out);
  return out;
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::image_decoder_parameters() {
  std::vector<nn::Parameter<T>*> out;
  image_decoder_.collect_parameters(out);
  return out;
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::generator_parameters() {
  std::vector<nn::Parameter<T>*> out;
  encoder_.collect_parameters(out);
  mask_decoder_.collect_parameters(out);
  image_decoder_.collect_parameters(out);
  return out;
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::discriminator_parameters() {
  std::vector<nn::Parameter<T>*> out;
  discriminator_.collect_parameters(out);
  return out;
}

template <typename T>
std::vector<nn::Buffer<T>> Model<T>::buffers() {
  std::vector<nn::Buffer<T>> out;
  encoder_.collect_buffers(out);
  mask_decoder_.collect_buffers(out);
  image_decoder_.collect_buffers(out);
  discriminator_.collect_buffers(out);
  return out;
}

template <typename T>
void zero_grads(const std::vector<nn::Parameter<T>*>& params) {
  for (nn::Parameter<T>* p : params) p->grad.fill(T(0));
}

template <typename T>
void Model<T>::zero_generator_grads() {
  zero_grads(generator_parameters());
}

template <typename T>
void Model<T>::zero_discriminator_grads() {
  zero_grads(discriminator_parameters());
}

template <typename T>
void Model<T>::copy_from(Model& other) {
  if (other.config().hash() != config_.hash())
    fail(ErrorCategory::kConfig, "copy_from: model configurations differ");
  auto mine = generator_parameters();
  auto theirs = other.generator_parameters();
  auto mine_d = discriminator_parameters();
  auto theirs_d = other.discriminator_parameters();
  mine.insert(mine.end(), mine_d.begin(), mine_d.end());
  theirs.insert(theirs.end(), theirs_d.begin(), theirs_d.end());
  for (std::size_t i = 0; i < mine.size(); ++i) mine[i]->value = theirs[i]->value;
  auto buffers_mine = buffers();
  auto buffers_theirs = other.buffers();
  for (std::size_t i = 0; i < buffers_mine.size(); ++i) *buffers_mine[i].value = *buffers_theirs[i].value;
}

template <typename T>
Tensor<T> sample_noise(int batch, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<T> z(batch, dim, 1, 1);
  for (T& v : z.values()) v = static_cast<T>(normal(rng));
  return z;
}

#define PATCHGEN_INSTANTIATE_MODEL(T)                                          \
  template class PartEncoder<T>;                                               \
  template class MaskDecoder<T>;                                               \
  template class ImageDecoder<T>;                                              \
  template class Discriminator<T>;                                             \
  template class Model<T>;                                                     \
  template Tensor<T> sample_noise<T>(int, int, std::mt19937_64&);              \
  template void zero_grads<T>(const std::vector<nn::Parameter<T>*>&);
PATCHGEN_INSTANTIATE_MODEL(float)
PATCHGEN_INSTANTIATE_MODEL(double)
#undef PATCHGEN_INSTANTIATE_MODEL

}  // namespace patchgen
