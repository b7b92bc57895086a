#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "patchgen/nn/layers.hpp"
#include "patchgen/tensor.hpp"

namespace patchgen {

using nn::Mode;

enum class EncoderKind {
  kSiameseSum,  // shared branch per patch, outputs summed
  kConcat,      // patches stacked along depth into one branch (order dependent)
};

struct ModelConfig {
  int image_size = 64;
  int base_channels = 64;  // channels of the first encoder level; doubles per level
  int n_patches = 3;
  int embed_dim = 100;
  int noise_dim = 100;
  bool skips = true;
  EncoderKind encoder = EncoderKind::kSiameseSum;
  // Lifts the {64, 128} restriction for reduced test geometries (e.g. 16).
  bool allow_any_size = false;

  /// Number of stride-2 stages: the deepest map is always 4x4.
  int levels() const;
  int channels(int level) const { return base_channels << level; }
  int top_channels() const { return channels(levels() - 1); }
  void validate() const;
  /// Hash over every field that changes tensor shapes or wiring.
  std::uint64_t hash() const;
};

template <typename T>
struct EncoderOutput {
  Tensor<T> embedding;              // B x embed x 1 x 1
  std::vector<Tensor<T>> pyramid;   // level i: B x channels(i) x S/2^(i+1) x S/2^(i+1)
};

template <typename T>
struct MaskOutput {
  Tensor<T> mask;                   // B x 1 x S x S, in (0,1)
  std::vector<Tensor<T>> pyramid;   // decoder level j at 4 * 2^j, post-activation
};

template <typename T>
struct GeneratorOutput {
  EncoderOutput<T> encoding;
  MaskOutput<T> mask;
  Tensor<T> image;                  // B x 3 x S x S, in (-1,1)
};

template <typename T>
class PartEncoder {
 public:
  explicit PartEncoder(const ModelConfig& config);
  /// patches: (B*N) x 3 x S x S, sample-major.
  EncoderOutput<T> forward(const Tensor<T>& patches, Mode mode);
  /// Gradients w.r.t. the forward outputs; empty pyramid entries are skipped.
  void backward(const EncoderOutput<T>& grad);
  void collect_parameters(std::vector<nn::Parameter<T>*>& out);
  void collect_buffers(std::vector<nn::Buffer<T>>& out);

 private:
  Tensor<T> sum_patches(const Tensor<T>& per_patch) const;
  Tensor<T> spread_patches(const Tensor<T>& per_sample) const;
  int group() const { return config_.encoder == EncoderKind::kSiameseSum ? config_.n_patches : 1; }

  ModelConfig config_;
  std::vector<nn::Sequential<T>> levels_;
  nn::Sequential<T> head_;
};

template <typename T>
class MaskDecoder {
 public:
  explicit MaskDecoder(const ModelConfig& config);
  MaskOutput<T> forward(const EncoderOutput<T>& enc, Mode mode);
  /// Returns gradients w.r.t. the encoder outputs it consumed.
  EncoderOutput<T> backward(const Tensor<T>& grad_mask, const std::vector<Tensor<T>>& grad_pyramid);
  void collect_parameters(std::vector<nn::Parameter<T>*>& out);
  void collect_buffers(std::vector<nn::Buffer<T>>& out);

 private:
  ModelConfig config_;
  nn::Sequential<T> project_;
  std::vector<nn::Sequential<T>> stages_;
  std::vector<int> own_channels_;
  std::vector<int> skip_channels_;
};

template <typename T>
struct ImageDecoderGrads {
  EncoderOutput<T> encoding;
  Tensor<T> noise;
  std::vector<Tensor<T>> mask_pyramid;
};

/// Image decoder of the double U-net: each level sees its own features, the
/// encoder pyramid and the mask decoder pyramid at the same resolution.
template <typename T>
class ImageDecoder {
 public:
  explicit ImageDecoder(const ModelConfig& config);
  Tensor<T> forward(const EncoderOutput<T>& enc, const Tensor<T>& noise,
                    const std::vector<Tensor<T>>& mask_pyramid, Mode mode);
  ImageDecoderGrads<T> backward(const Tensor<T>& grad_image);
  void collect_parameters(std::vector<nn::Parameter<T>*>& out);
  void collect_buffers(std::vector<nn::Buffer<T>>& out);

 private:
  ModelConfig config_;
  nn::Sequential<T> project_;
  std::vector<nn::Sequential<T>> stages_;
  std::vector<int> own_channels_;
  std::vector<int> skip_channels_;
};

template <typename T>
class Discriminator {
 public:
  explicit Discriminator(const ModelConfig& config);
  /// Probabilities, B x 1 x 1 x 1.
  Tensor<T> forward(const Tensor<T>& images, Mode mode);
  Tensor<T> backward(const Tensor<T>& grad_probs, bool need_input_grad);
  void collect_parameters(std::vector<nn::Parameter<T>*>& out);
  void collect_buffers(std::vector<nn::Buffer<T>>& out);

 private:
  nn::Sequential<T> body_;
};

template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& config);

  /// Weights ~ N(0, 0.02) from the seeded stream; biases 0; batch norm (1, 0).
  void init(std::uint64_t seed);
  const ModelConfig& config() const { return config_; }

  EncoderOutput<T> encode_parts(const Tensor<T>& patches, Mode mode);
  MaskOutput<T> predict_mask(const EncoderOutput<T>& enc, Mode mode);
  Tensor<T> generate_image(const EncoderOutput<T>& enc, const Tensor<T>& noise,
                           const std::vector<Tensor<T>>& mask_pyramid, Mode mode);
  Tensor<T> discriminate(const Tensor<T>& images, Mode mode);

  GeneratorOutput<T> generate(const Tensor<T>& patches, const Tensor<T>& noise, Mode mode);

  /// Back-propagates through image decoder, mask decoder and encoder of the
  /// last generate() call. Either gradient may be empty.
  void backward_generator(const Tensor<T>& grad_mask, const Tensor<T>& grad_image);
  Tensor<T> backward_discriminator(const Tensor<T>& grad_probs, bool need_input_grad);

  std::vector<nn::Parameter<T>*> encoder_parameters();
  std::vector<nn::Parameter<T>*> mask_decoder_parameters();
  std::vector<nn::Parameter<T>*> image_decoder_parameters();
  std::vector<nn::Parameter<T>*> generator_parameters();
  std::vector<nn::Parameter<T>*> discriminator_parameters();
  std::vector<nn::Buffer<T>> buffers();

  void zero_generator_grads();
  void zero_discriminator_grads();

  /// Copies parameters and buffers from a model with the same config.
  void copy_from(Model& other);

 private:
  ModelConfig config_;
  PartEncoder<T> encoder_;
  MaskDecoder<T> mask_decoder_;
  ImageDecoder<T> image_decoder_;
  Discriminator<T> discriminator_;
};

template <typename T>
Tensor<T> sample_noise(int batch, int dim, std::mt19937_64& rng);

template <typename T>
void zero_grads(const std::vector<nn::Parameter<T>*>& params);

}  // namespace patchgen
