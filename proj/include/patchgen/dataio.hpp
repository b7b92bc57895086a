#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "patchgen/proposals.hpp"
#include "patchgen/raster.hpp"
#include "patchgen/tensor.hpp"

namespace patchgen {

template <typename R>
R resize_bilinear(const R& image, int height, int width);

template <typename R>
R crop(const R& image, const BoundingBox& box);

template <typename R>
R mirror(const R& image);

struct BoxedImage {
  RgbImage image;
  std::vector<ScoredBox> boxes;
};

/// Aspect-preserving resize so that min(H, W) == target; boxes follow.
BoxedImage resize_min_side(const BoxedImage& input, int target = 128);

/// Centered side x side crop. Boxes are clipped and dropped when less than a
/// quarter of their area survives. Throws kDegenerateInput if side is too big.
BoxedImage center_square_crop(const BoxedImage& input, int side);

/// A training triple. `image` and `patches` are in the network domain.
struct Sample {
  RgbImage image;
  Mask mask;
  std::vector<RgbImage> patches;
  std::vector<BoundingBox> boxes;  // in image (S x S) coordinates

  int side() const { return image.height(); }
  int n_patches() const { return static_cast<int>(patches.size()); }
  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Crops patches from a square data-domain image at `boxes`, resizes image and
/// patches to side x side and rasterizes the scaled boxes into the mask.
Sample build_sample(const RgbImage& square_image, std::span<const BoundingBox> boxes, int side);

Sample flip_horizontal(const Sample& sample);

/// Network-ready tensors for one mini-batch.
template <typename T>
struct Batch {
  Tensor<T> images;    // B x 3 x S x S
  Tensor<T> masks;     // B x 1 x S x S
  Tensor<T> patches;   // (B*N) x 3 x S x S, sample-major
  Tensor<T> partners;  // B x 3 x S x S, drawn from outside the batch
  std::vector<int> indices;
  std::vector<int> partner_indices;
  int n_patches = 0;

  int size() const { return images.n(); }
};

template <typename T>
Tensor<T> images_to_tensor(std::span<const RgbImage> images);
template <typename T>
Tensor<T> masks_to_tensor(std::span<const Mask> masks);
template <typename T>
Tensor<T> patches_to_tensor(std::span<const Sample* const> samples);
template <typename T>
RgbImage tensor_to_image(const Tensor<T>& tensor, int index);
template <typename T>
Mask tensor_to_mask(const Tensor<T>& tensor, int index);

template <typename T>
Batch<T> collate(std::span<const Sample> samples, std::span<const int> indices,
                 std::span<const int> partner_indices, std::span<const std::uint8_t> flips);

/// Seeded epoch stream. Every epoch is a fresh permutation; every sample is
/// flipped with probability 1/2; each batch member gets a partner image drawn
/// uniformly from outside the batch. All randomness is derived from
/// (seed, epoch, batch index), so the position alone is the resumable state.
class BatchStream {
 public:
  BatchStream(std::span<const Sample> samples, int batch_size, std::uint64_t seed);

  int batches_per_epoch() const;
  void seek(int epoch, int batch);
  int epoch() const { return epoch_; }
  int cursor() const { return cursor_; }

  /// Next batch of the current epoch, or nullopt at its end (then advances epoch).
  template <typename T>
  std::optional<Batch<T>> next();

  struct Plan {
    std::vector<int> indices;
    std::vector<int> partners;
    std::vector<std::uint8_t> flips;
  };
  Plan plan(int epoch, int batch) const;

 private:
  std::vector<int> permutation(int epoch) const;

  std::span<const Sample> samples_;
  int batch_size_;
  std::uint64_t seed_;
  int epoch_ = 0;
  int cursor_ = 0;
};

struct SourceImage {
  std::string name;
  RgbImage image;  // data domain
  std::vector<ScoredBox> boxes;
};

/// Toy faces: background, face ellipse, two eye discs and a mouth bar. Key
/// boxes are the tight boxes of [left eye, right eye, mouth].
std::vector<SourceImage> generate_toy_images(int count, int side, std::uint64_t seed);
/// Samples built from the first n_patches key boxes of each toy face.
std::vector<Sample> generate_toy_dataset(int count, int side, std::uint64_t seed, int n_patches = 3);

/// Writes `root/images/<name>.png` and `root/boxes/<name>.boxes`.
void write_dataset(const std::filesystem::path& root, std::span<const SourceImage> images);

struct LoadOptions {
  int side = 64;
  int n_patches = 3;
  int min_side = 128;
  ProposalOptions proposals;
  bool cache_proposals = false;
  int workers = 1;
};

/// Reads a dataset directory. Images without a `.boxes` file get proposals
/// computed on the fly; images yielding fewer than n_patches boxes are skipped
/// with a warning.
std::vector<Sample> load_dataset(const std::filesystem::path& root, const LoadOptions& options);

/// Turns one raw data-domain image plus (optional) boxes into a sample.
Sample prepare_sample(const RgbImage& raw, std::optional<std::vector<ScoredBox>> boxes,
                      const LoadOptions& options, std::vector<ScoredBox>* used_boxes = nullptr);

/// Worker count from PATCHGEN_NUM_WORKERS, defaulting to 1.
int env_worker_count();

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace patchgen
