#include "patchgen/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <thread>

#include "patchgen/image_io.hpp"

namespace patchgen {

namespace fs = std::filesystem;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto splitmix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

int env_worker_count() {
  const char* value = std::getenv("PATCHGEN_NUM_WORKERS");
  if (value == nullptr) return 1;
  const int parsed = std::atoi(value);
  return std::max(1, parsed);
}

template <typename R>
R resize_bilinear(const R& image, int height, int width) {
  if (height == image.height() && width == image.width()) return image;
  if (height < 1 || width < 1 || image.empty())
    fail(ErrorCategory::kDegenerateInput, "resize_bilinear: empty input or target");
  R out(height, width);
  const double sy = static_cast<double>(image.height()) / height;
  const double sx = static_cast<double>(image.width()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const float ty = static_cast<float>(fy - y0);
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const float tx = static_cast<float>(fx - x0);
      for (int c = 0; c < R::kChannels; ++c) {
        const float top = image.at(y0, x0, c) + tx * (image.at(y0, x1, c) - image.at(y0, x0, c));
        const float bottom = image.at(y1, x0, c) + tx * (image.at(y1, x1, c) - image.at(y1, x0, c));
        out.at(y, x, c) = top + ty * (bottom - top);
      }
    }
  }
  return out;
}

template <typename R>
R crop(const R& image, const BoundingBox& box) {
  if (!box.fits({image.height(), image.width()})) fail(ErrorCategory::kShape, "crop: box outside image");
  R out(box.h, box.w);
  for (int y = 0; y < box.h; ++y)
    for (int x = 0; x < box.w; ++x)
      for (int c = 0; c < R::kChannels; ++c) out.at(y, x, c) = image.at(box.y + y, box.x + x, c);
  return out;
}

template <typename R>
R mirror(const R& image) {
  R out(image.height(), image.width());
  const int w = image.width();
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < R::kChannels; ++c) out.at(y, w - 1 - x, c) = image.at(y, x, c);
  return out;
}

template RgbImage resize_bilinear(const RgbImage&, int, int);
template Mask resize_bilinear(const Mask&, int, int);
template RgbImage crop(const RgbImage&, const BoundingBox&);
template Mask crop(const Mask&, const BoundingBox&);
template RgbImage mirror(const RgbImage&);
template Mask mirror(const Mask&);

namespace {

int round_px(double v) { return static_cast<int>(std::lround(v)); }

BoundingBox scale_box(const BoundingBox& b, double factor, ImageSize bounds) {
  BoundingBox out{round_px(b.x * factor), round_px(b.y * factor), round_px(b.w * factor),
                  round_px(b.h * factor)};
  out.x = std::clamp(out.x, 0, bounds.width - 1);
  out.y = std::clamp(out.y, 0, bounds.height - 1);
  out.w = std::clamp(out.w, 1, bounds.width - out.x);
  out.h = std::clamp(out.h, 1, bounds.height - out.y);
  return out;
}

}  // namespace

BoxedImage resize_min_side(const BoxedImage& input, int target) {
  const int height = input.image.height();
  const int width = input.image.width();
  if (height < 1 || width < 1) fail(ErrorCategory::kDegenerateInput, "resize_min_side: empty image");
  const double factor = static_cast<double>(target) / std::min(height, width);
  const ImageSize size{round_px(height * factor), round_px(width * factor)};
  BoxedImage out{resize_bilinear(input.image, size.height, size.width), {}};
  out.boxes.reserve(input.boxes.size());
  for (const ScoredBox& b : input.boxes) out.boxes.push_back({scale_box(b.box, factor, size), b.score});
  return out;
}

BoxedImage center_square_crop(const BoxedImage& input, int side) {
  const int height = input.image.height();
  const int width = input.image.width();
  if (side < 1 || side > std::min(height, width)) {
    fail(ErrorCategory::kDegenerateInput, "center crop of side " + std::to_string(side) +
                                              " exceeds image " + std::to_string(height) + "x" +
                                              std::to_string(width));
  }
  const BoundingBox window{(width - side) / 2, (height - side) / 2, side, side};
  BoxedImage out{crop(input.image, window), {}};
  for (const ScoredBox& b : input.boxes) {
    const int x0 = std::max(b.box.x, window.x);
    const int y0 = std::max(b.box.y, window.y);
    const int x1 = std::min(b.box.x + b.box.w, window.x + side);
    const int y1 = std::min(b.box.y + b.box.h, window.y + side);
    if (x1 <= x0 || y1 <= y0) continue;
    const BoundingBox clipped{x0 - window.x, y0 - window.y, x1 - x0, y1 - y0};
    if (4 * clipped.area() < b.box.area()) continue;
    out.boxes.push_back({clipped, b.score});
  }
  return out;
}

Sample build_sample(const RgbImage& square_image, std::span<const BoundingBox> boxes, int side) {
  const int source_side = square_image.height();
  if (square_image.width() != source_side)
    fail(ErrorCategory::kShape, "build_sample expects a square image");
  const ImageSize source_size{source_side, source_side};
  const ImageSize target{side, side};
  const double factor = static_cast<double>(side) / source_side;

  Sample sample;
  sample.image = to_network_domain(resize_bilinear(square_image, side, side));
  for (const BoundingBox& b : boxes) {
    if (!b.fits(source_size)) fail(ErrorCategory::kShape, "build_sample: box outside image");
    sample.patches.push_back(to_network_domain(resize_bilinear(crop(square_image, b), side, side)));
    sample.boxes.push_back(scale_box(b, factor, target));
  }
  sample.mask = rasterize_mask(sample.boxes, target);
  return sample;
}

Sample flip_horizontal(const Sample& sample) {
  Sample out;
  out.image = mirror(sample.image);
  out.mask = mirror(sample.mask);
  out.patches.reserve(sample.patches.size());
  for (const RgbImage& p : sample.patches) out.patches.push_back(mirror(p));
  const int width = sample.image.width();
  for (BoundingBox b : sample.boxes) {
    b.x = width - b.x - b.w;
    out.boxes.push_back(b);
  }
  return out;
}

// --- tensors ---------------------------------------------------------------

namespace {

template <typename T, typename R>
void image_into(const R& image, T* dst) {
  const int h = image.height();
  const int w = image.width();
  for (int c = 0; c < R::kChannels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) *dst++ = static_cast<T>(image.at(y, x, c));
}

}  // namespace

template <typename T>
Tensor<T> images_to_tensor(std::span<const RgbImage> images) {
  if (images.empty()) return {};
  const int h = images.front().height();
  const int w = images.front().width();
  Tensor<T> out(static_cast<int>(images.size()), 3, h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height() != h || images[i].width() != w)
      fail(ErrorCategory::kShape, "images_to_tensor: mixed image sizes");
    image_into(images[i], out.item(static_cast<int>(i)).data());
  }
  return out;
}

template <typename T>
Tensor<T> masks_to_tensor(std::span<const Mask> masks) {
  if (masks.empty()) return {};
  Tensor<T> out(static_cast<int>(masks.size()), 1, masks.front().height(), masks.front().width());
  for (std::size_t i = 0; i < masks.size(); ++i) image_into(masks[i], out.item(static_cast<int>(i)).data());
  return out;
}

template <typename T>
Tensor<T> patches_to_tensor(std::span<const Sample* const> samples) {
  if (samples.empty()) return {};
  const int n = samples.front()->n_patches();
  const int side = samples.front()->patches.front().height();
  Tensor<T> out(static_cast<int>(samples.size()) * n, 3, side, side);
  int index = 0;
  for (const Sample* s : samples) {
    if (s->n_patches() != n) fail(ErrorCategory::kShape, "patches_to_tensor: mixed patch counts");
    for (const RgbImage& p : s->patches) {
      if (p.height() != side || p.width() != side)
        fail(ErrorCategory::kShape, "patches_to_tensor: mismatched patch sizes");
      image_into(p, out.item(index++).data());
    }
  }
  return out;
}

template <typename T>
RgbImage tensor_to_image(const Tensor<T>& tensor, int index) {
  if (tensor.c() != 3) fail(ErrorCategory::kShape, "tensor_to_image: expected 3 channels");
  RgbImage image(tensor.h(), tensor.w());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < tensor.h(); ++y)
      for (int x = 0; x < tensor.w(); ++x) image.at(y, x, c) = static_cast<float>(tensor.at(index, c, y, x));
  return image;
}

template <typename T>
Mask tensor_to_mask(const Tensor<T>& tensor, int index) {
  if (tensor.c() != 1) fail(ErrorCategory::kShape, "tensor_to_mask: expected 1 channel");
  Mask mask(tensor.h(), tensor.w());
  for (int y = 0; y < tensor.h(); ++y)
    for (int x = 0; x < tensor.w(); ++x) mask.at(y, x) = static_cast<float>(tensor.at(index, 0, y, x));
  return mask;
}

template <typename T>
Batch<T> collate(std::span<const Sample> samples, std::span<const int> indices,
                 std::span<const int> partner_indices, std::span<const std::uint8_t> flips) {
  std::vector<Sample> flipped;
  flipped.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Sample& s = samples[indices[i]];
    flipped.push_back(i < flips.size() && flips[i] ? flip_horizontal(s) : s);
  }
  std::vector<RgbImage> images, partners;
  std::vector<Mask> masks;
  std::vector<const Sample*> pointers;
  for (const Sample& s : flipped) {
    images.push_back(s.image);
    masks.push_back(s.mask);
    pointers.push_back(&s);
  }
  for (int p : partner_indices) partners.push_back(samples[p].image);

  Batch<T> batch;
  batch.images = images_to_tensor<T>(images);
  batch.masks = masks_to_tensor<T>(masks);
  batch.patches = patches_to_tensor<T>(pointers);
  batch.partners = images_to_tensor<T>(partners);
  batch.indices.assign(indices.begin(), indices.end());
  batch.partner_indices.assign(partner_indices.begin(), partner_indices.end());
  batch.n_patches = flipped.empty() ? 0 : flipped.front().n_patches();
  return batch;
}

#define PATCHGEN_INSTANTIATE_TENSOR_IO(T)                                                   \
  template Tensor<T> images_to_tensor<T>(std::span<const RgbImage>);                        \
  template Tensor<T> masks_to_tensor<T>(std::span<const Mask>);                             \
  template Tensor<T> patches_to_tensor<T>(std::span<const Sample* const>);                  \
  template RgbImage tensor_to_image<T>(const Tensor<T>&, int);                              \
  template Mask tensor_to_mask<T>(const Tensor<T>&, int);                                   \
  template Batch<T> collate<T>(std::span<const Sample>, std::span<const int>,               \
                               std::span<const int>, std::span<const std::uint8_t>);
PATCHGEN_INSTANTIATE_TENSOR_IO(float)
PATCHGEN_INSTANTIATE_TENSOR_IO(double)
#undef PATCHGEN_INSTANTIATE_TENSOR_IO

// --- batch stream ----------------------------------------------------------

BatchStream::BatchStream(std::span<const Sample> samples, int batch_size, std::uint64_t seed)
    : samples_(samples), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) fail(ErrorCategory::kConfig, "batch_size must be >= 1");
  if (static_cast<int>(samples.size()) < batch_size + 1) {
    fail(ErrorCategory::kConfig, "dataset of " + std::to_string(samples.size()) +
                                     " samples cannot supply batches of " + std::to_string(batch_size) +
                                     " plus an outside partner image");
  }
}

int BatchStream::batches_per_epoch() const {
  const int count = static_cast<int>(samples_.size());
  return (count + batch_size_ - 1) / batch_size_;
}

void BatchStream::seek(int epoch, int batch) {
  epoch_ = epoch;
  cursor_ = batch;
}

std::vector<int> BatchStream::permutation(int epoch) const {
  std::vector<int> order(samples_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::mt19937_64 rng(mix_seed(seed_, static_cast<std::uint64_t>(epoch), 0x5eed));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

BatchStream::Plan BatchStream::plan(int epoch, int batch) const {
  const std::vector<int> order = permutation(epoch);
  const int count = static_cast<int>(order.size());
  const int begin = batch * batch_size_;
  const int end = std::min(begin + batch_size_, count);
  Plan plan;
  plan.indices.assign(order.begin() + begin, order.begin() + end);

  std::vector<std::uint8_t> in_batch(count, 0);
  for (int i : plan.indices) in_batch[i] = 1;
  std::vector<int> outside;
  outside.reserve(count - plan.indices.size());
  for (int i = 0; i < count; ++i)
    if (!in_batch[i]) outside.push_back(i);

  std::mt19937_64 rng(mix_seed(seed_, static_cast<std::uint64_t>(epoch), 1 + static_cast<std::uint64_t>(batch)));
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<std::size_t> pick(0, outside.size() - 1);
  for (std::size_t i = 0; i < plan.indices.size(); ++i) {
    plan.flips.push_back(coin(rng) ? 1 : 0);
    plan.partners.push_back(outside[pick(rng)]);
  }
  return plan;
}

template <typename T>
std::optional<Batch<T>> BatchStream::next() {
  if (cursor_ >= batches_per_epoch()) {
    ++epoch_;
    cursor_ = 0;
    return std::nullopt;
  }
  const Plan p = plan(epoch_, cursor_);
  ++cursor_;
  return collate<T>(samples_, p.indices, p.partners, p.flips);
}

template std::optional<Batch<float>> BatchStream::next<float>();
template std::optional<Batch<double>> BatchStream::next<double>();

// --- toy dataset -----------------------------------------------------------

namespace {

struct Color {
  float r, g, b;
};

Color random_color(std::mt19937_64& rng, float lo, float hi) {
  std::uniform_real_distribution<float> u(lo, hi);
  const float r = u(rng);
  const float g = u(rng);
  const float b = u(rng);
  return {r, g, b};
}

void paint(RgbImage& image, int y, int x, Color c) {
  image.at(y, x, 0) = c.r;
  image.at(y, x, 1) = c.g;
  image.at(y, x, 2) = c.b;
}

// Paints a disc and returns the tight box of the painted pixels.
BoundingBox paint_disc(RgbImage& image, double cx, double cy, double radius, Color color) {
  int x0 = image.width(), y0 = image.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      if (dx * dx + dy * dy > radius * radius) continue;
      paint(image, y, x, color);
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

SourceImage toy_face(int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double k = side / 64.0;

  RgbImage image(side, side);
  const Color background = random_color(rng, 0.0f, 1.0f);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) paint(image, y, x, background);

  const double cx = side / 2.0 + uniform(-1.5, 1.5) * k;
  const double cy = 34.0 * k + uniform(-1.5, 1.5) * k;
  const double ax = uniform(19.0, 22.0) * k;
  const double ay = uniform(24.0, 27.0) * k;
  const Color skin{static_cast<float>(uniform(0.55, 0.95)), static_cast<float>(uniform(0.4, 0.75)),
                   static_cast<float>(uniform(0.3, 0.6))};
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double dx = (x + 0.5 - cx) / ax;
      const double dy = (y + 0.5 - cy) / ay;
      if (dx * dx + dy * dy <= 1.0) paint(image, y, x, skin);
    }
  }

  const double eye_dx = uniform(9.0, 11.0) * k;
  const double eye_y = cy - 8.0 * k + uniform(-1.0, 1.0) * k;
  const double radius = uniform(3.6, 4.6) * k;
  const Color eye = random_color(rng, 0.0f, 0.35f);
  const BoundingBox left = paint_disc(image, cx - eye_dx, eye_y, radius, eye);
  const BoundingBox right = paint_disc(image, cx + eye_dx, eye_y, radius, eye);

  const double mouth_w = uniform(16.0, 20.0) * k;
  const double mouth_h = uniform(5.0, 7.0) * k;
  const double mouth_y = cy + 11.0 * k + uniform(-1.0, 1.0) * k;
  const Color lips{static_cast<float>(uniform(0.5, 0.9)), static_cast<float>(uniform(0.0, 0.25)),
                   static_cast<float>(uniform(0.05, 0.3))};
  BoundingBox mouth{round_px(cx - mouth_w / 2), round_px(mouth_y - mouth_h / 2), round_px(mouth_w),
                    round_px(mouth_h)};
  for (int y = mouth.y; y < mouth.y + mouth.h; ++y)
    for (int x = mouth.x; x < mouth.x + mouth.w; ++x) paint(image, y, x, lips);

  SourceImage out;
  out.image = std::move(image);
  out.boxes = {{left, 1.0}, {right, 1.0}, {mouth, 1.0}};
  return out;
}

std::string numbered(int index) {
  std::string digits = std::to_string(index);
  return std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

}  // namespace

std::vector<SourceImage> generate_toy_images(int count, int side, std::uint64_t seed) {
  if (count < 2) fail(ErrorCategory::kConfig, "toy dataset needs count >= 2");
  if (side < 16) fail(ErrorCategory::kConfig, "toy dataset side must be >= 16");
  std::vector<SourceImage> images;
  images.reserve(count);
  for (int i = 0; i < count; ++i) {
    SourceImage face = toy_face(side, mix_seed(seed, static_cast<std::uint64_t>(i), 0x70f));
    face.name = "toy_" + numbered(i);
    images.push_back(std::move(face));
  }
  return images;
}

std::vector<Sample> generate_toy_dataset(int count, int side, std::uint64_t seed, int n_patches) {
  if (n_patches < 1 || n_patches > 3) fail(ErrorCategory::kConfig, "toy faces carry between 1 and 3 key patches");
  std::vector<Sample> samples;
  samples.reserve(count);
  for (const SourceImage& face : generate_toy_images(count, side, seed)) {
    std::vector<BoundingBox> boxes;
    for (int i = 0; i < n_patches; ++i) boxes.push_back(face.boxes[i].box);
    samples.push_back(build_sample(face.image, boxes, side));
  }
  return samples;
}

void write_dataset(const fs::path& root, std::span<const SourceImage> images) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "boxes");
  for (const SourceImage& image : images) {
    write_png(root / "images" / (image.name + ".png"), image.image);
    write_boxes_file(root / "boxes" / (image.name + ".boxes"), image.boxes);
  }
}

// --- directory loading -----------------------------------------------------

namespace {

// Geometry of the resize-then-center-crop preparation.
struct Preparation {
  double factor;
  int offset_x;
  int offset_y;
};

Preparation preparation_for(ImageSize raw, int min_side) {
  const double factor = static_cast<double>(min_side) / std::min(raw.height, raw.width);
  const int h = round_px(raw.height * factor);
  const int w = round_px(raw.width * factor);
  return {factor, (w - min_side) / 2, (h - min_side) / 2};
}

}  // namespace

Sample prepare_sample(const RgbImage& raw, std::optional<std::vector<ScoredBox>> boxes,
                      const LoadOptions& options, std::vector<ScoredBox>* used_boxes) {
  BoxedImage resized = resize_min_side({raw, boxes.value_or(std::vector<ScoredBox>{})}, options.min_side);
  BoxedImage square = center_square_crop(resized, options.min_side);
  std::vector<ScoredBox> chosen = boxes.has_value()
                                      ? select_top_n(square.boxes, options.n_patches)
                                      : propose_key_patches(square.image, options.n_patches, options.proposals);
  std::vector<BoundingBox> plain;
  for (const ScoredBox& b : chosen) plain.push_back(b.box);
  if (used_boxes != nullptr) *used_boxes = chosen;
  return build_sample(square.image, plain, options.side);
}

std::vector<Sample> load_dataset(const fs::path& root, const LoadOptions& options) {
  const fs::path image_dir = root / "images";
  if (!fs::is_directory(image_dir)) fail(ErrorCategory::kIo, "missing directory " + image_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(image_dir)) {
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<std::optional<Sample>> results(files.size());
  std::vector<std::string> warnings(files.size());
  auto work = [&](std::size_t i) {
    const fs::path& file = files[i];
    const fs::path box_file = root / "boxes" / (file.stem().string() + ".boxes");
    try {
      const RgbImage raw = read_image(file);
      std::optional<std::vector<ScoredBox>> boxes;
      if (fs::exists(box_file)) boxes = read_boxes_file(box_file);
      std::vector<ScoredBox> used;
      results[i] = prepare_sample(raw, boxes, options, &used);
      if (!boxes.has_value() && options.cache_proposals) {
        const Preparation prep = preparation_for({raw.height(), raw.width()}, options.min_side);
        std::vector<ScoredBox> raw_boxes;
        for (const ScoredBox& b : used) {
          raw_boxes.push_back({{round_px((b.box.x + prep.offset_x) / prep.factor),
                                round_px((b.box.y + prep.offset_y) / prep.factor),
                                std::max(1, round_px(b.box.w / prep.factor)),
                                std::max(1, round_px(b.box.h / prep.factor))},
                               b.score});
        }
        write_boxes_file(box_file, raw_boxes);
      }
    } catch (const Error& e) {
      if (e.category() != ErrorCategory::kInsufficientPatches &&
          e.category() != ErrorCategory::kEmptyCandidates)
        throw;
      warnings[i] = "warning: skipping " + file.filename().string() + ": " + e.what();
    }
  };

  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(files.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < files.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < files.size(); i += workers) work(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (std::thread& th : pool) th.join();
    for (const std::exception_ptr& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<Sample> samples;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (!warnings[i].empty()) std::cerr << warnings[i] << '\n';
    if (results[i]) samples.push_back(std::move(*results[i]));
  }
  return samples;
}

}  // namespace patchgen
