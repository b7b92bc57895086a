#include "patchgen/evalsuite.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <random>
#include <set>

#include "patchgen/error.hpp"
#include "patchgen/fsutil.hpp"
#include "patchgen/image_io.hpp"
#include "patchgen/losses.hpp"
#include "patchgen/trainer.hpp"

namespace patchgen {

namespace fs = std::filesystem;

namespace {

constexpr int kEvalChunk = 32;

Tensor<float> patches_of(std::span<const RgbImage> patches) { return images_to_tensor<float>(patches); }

// Stacks per-sample noise vectors into one B x dim tensor.
Tensor<float> stacked_noise(int dim, std::uint64_t seed, std::span<const int> indices) {
  Tensor<float> z(static_cast<int>(indices.size()), dim, 1, 1);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor<float> one = experiment_noise(dim, seed, static_cast<std::uint64_t>(indices[i]));
    std::copy(one.values().begin(), one.values().end(), z.item(static_cast<int>(i)).begin());
  }
  return z;
}

double max_abs(const Tensor<float>& a, const Tensor<float>& b) { return max_abs_diff(a, b); }

template <typename F>
void for_each_chunk(int count, F&& f) {
  for (int begin = 0; begin < count; begin += kEvalChunk) {
    std::vector<int> idx(std::min(kEvalChunk, count - begin));
    std::iota(idx.begin(), idx.end(), begin);
    f(idx);
  }
}

bool all_numbers_finite(const nlohmann::json& j) {
  if (j.is_number_float()) return std::isfinite(j.get<double>());
  if (j.is_object() || j.is_array()) {
    for (const auto& v : j)
      if (!all_numbers_finite(v)) return false;
  }
  return true;
}

void write_grid(const Grid& grid, const fs::path& path, std::vector<fs::path>& out) {
  write_png(path, grid.canvas());
  out.push_back(path);
}

}  // namespace

double mask_iou(const Mask& pred, const Mask& truth, double threshold) {
  if (pred.height() != truth.height() || pred.width() != truth.width())
    fail(ErrorCategory::kShape, "mask_iou: masks differ in size");
  std::size_t inter = 0;
  std::size_t uni = 0;
  const auto p = pred.pixels();
  const auto t = truth.pixels();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] >= threshold;
    const bool b = t[i] >= 0.5f;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<Neighbor> nearest_neighbors(const RgbImage& query, std::span<const RgbImage> corpus, int k) {
  if (corpus.empty()) fail(ErrorCategory::kConfig, "nearest_neighbors needs a non-empty corpus");
  if (k < 0) fail(ErrorCategory::kConfig, "nearest_neighbors needs k >= 0");
  std::vector<Neighbor> all;
  all.reserve(corpus.size());
  const auto& q = query.pixels();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& c = corpus[i].pixels();
    if (c.size() != q.size()) fail(ErrorCategory::kShape, "nearest_neighbors: corpus image size differs");
    double sum = 0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      const double d = static_cast<double>(q[j]) - c[j];
      sum += d * d;
    }
    all.push_back({static_cast<int>(i), std::sqrt(sum)});
  }
  if (static_cast<std::size_t>(k) > corpus.size()) {
    std::cerr << "warning: nearest_neighbors asked for " << k << " neighbours of a corpus of " << corpus.size()
              << "; truncating\n";
    k = static_cast<int>(corpus.size());
  }
  std::stable_sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) { return a.distance < b.distance; });
  all.resize(k);
  return all;
}

Grid::Grid(int rows, int cols, int side)
    : rows_(rows), cols_(cols), side_(side), canvas_(rows * side, cols * side, 1.0f) {}

void Grid::set_image(int row, int col, const RgbImage& image) {
  if (row < 0 || row >= rows_ || col < 0 || col >= cols_) fail(ErrorCategory::kShape, "grid cell out of range");
  const RgbImage cell = image.height() == side_ && image.width() == side_ ? image : resize_bilinear(image, side_, side_);
  for (int y = 0; y < side_; ++y)
    for (int x = 0; x < side_; ++x)
      for (int c = 0; c < 3; ++c) canvas_.at(row * side_ + y, col * side_ + x, c) = cell.at(y, x, c);
}

void Grid::set_mask(int row, int col, const Mask& mask) {
  RgbImage gray(mask.height(), mask.width());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      for (int c = 0; c < 3; ++c) gray.at(y, x, c) = mask.at(y, x, 0);
  set_image(row, col, gray);
}

std::vector<std::string> generation_columns(int n_patches) {
  std::vector<std::string> cols;
  for (int i = 0; i < n_patches; ++i) cols.push_back("Input " + std::to_string(i + 1));
  for (const char* c : {"Gen", "Gen M", "Real", "Real M"}) cols.emplace_back(c);
  return cols;
}

Generation generate(Model<float>& model, const Tensor<float>& patches, const Tensor<float>& noise) {
  GeneratorOutput<float> out = model.generate(patches, noise, Mode::kInference);
  return {std::move(out.image), std::move(out.mask.mask)};
}

Tensor<float> experiment_noise(int dim, std::uint64_t seed, std::uint64_t index) {
  std::mt19937_64 rng(mix_seed(seed, index, 0x2));
  return sample_noise<float>(1, dim, rng);
}

void fill_generation_row(Grid& grid, int row, std::span<const RgbImage> patches, const Generation& gen, int item,
                         const Sample& real) {
  int col = 0;
  for (const RgbImage& p : patches) grid.set_image(row, col++, to_data_domain(p));
  grid.set_image(row, col++, to_data_domain(tensor_to_image(gen.image, item)));
  grid.set_mask(row, col++, tensor_to_mask(gen.mask, item));
  grid.set_image(row, col++, to_data_domain(real.image));
  grid.set_mask(row, col++, real.mask);
}

fs::path grid_path(const fs::path& dir, const std::string& experiment, std::uint64_t seed,
                   const std::string& case_name) {
  return dir / (experiment + "_" + std::to_string(seed) + "_" + case_name + ".png");
}

NoiseRobustness noise_robustness(Model<float>& model, const Sample& sample, std::span<const double> sigmas,
                                 int patch_index, std::uint64_t seed) {
  const int n = sample.n_patches();
  if (patch_index < 0 || patch_index >= n) fail(ErrorCategory::kConfig, "patch_index must be below n_patches");
  const Tensor<float> z = experiment_noise(model.config().noise_dim, seed, 0);
  const Generation clean = generate(model, patches_of(sample.patches), z);
  NoiseRobustness result{{sigmas.begin(), sigmas.end()}, {}, Grid(1 + static_cast<int>(sigmas.size()), n + 4, sample.side())};
  fill_generation_row(result.grid, 0, sample.patches, clean, 0, sample);
  for (std::size_t k = 0; k < sigmas.size(); ++k) {
    std::vector<RgbImage> noisy = sample.patches;
    std::mt19937_64 rng(mix_seed(seed, k, 0x4015e));
    std::normal_distribution<double> normal(0.0, 1.0);
    if (sigmas[k] > 0)
      for (float& v : noisy[patch_index].pixels())
        v = std::clamp(static_cast<float>(v + sigmas[k] * normal(rng)), -1.0f, 1.0f);
    const Generation gen = generate(model, patches_of(noisy), z);
    double l1 = 0;
    for (std::size_t i = 0; i < gen.image.size(); ++i) l1 += std::abs(gen.image[i] - clean.image[i]);
    result.l1.push_back(l1 / static_cast<double>(gen.image.size()));
    fill_generation_row(result.grid, static_cast<int>(k) + 1, noisy, gen, 0, sample);
  }
  return result;
}

MixResult mix_patches(Model<float>& model, const Sample& a, const Sample& b, std::span<const int> take_from_b,
                      std::uint64_t z_seed) {
  const int n = a.n_patches();
  if (b.n_patches() != n) fail(ErrorCategory::kConfig, "mix_patches: samples carry different patch counts");
  std::set<int> seen;
  for (int i : take_from_b) {
    if (i < 0 || i >= n) fail(ErrorCategory::kConfig, "mix_patches: index " + std::to_string(i) + " out of range");
    if (!seen.insert(i).second)
      fail(ErrorCategory::kConfig, "mix_patches: index " + std::to_string(i) + " given twice");
  }
  MixResult result{a.patches, {}, Grid(1, n + 4, a.side())};
  for (int i : take_from_b) result.patches[i] = b.patches[i];
  result.generation = generate(model, patches_of(result.patches), experiment_noise(model.config().noise_dim, z_seed, 0));
  fill_generation_row(result.grid, 0, result.patches, result.generation, 0, a);
  return result;
}

PermutationAudit permutation_audit(Model<float>& model, std::span<const Sample> samples,
                                   std::span<const std::vector<int>> orders, std::uint64_t seed) {
  if (orders.size() != samples.size()) fail(ErrorCategory::kConfig, "permutation_audit: one ordering per sample");
  PermutationAudit audit;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const Sample& sample = samples[s];
    std::vector<RgbImage> permuted;
    for (int i : orders[s]) permuted.push_back(sample.patches.at(i));
    if (permuted.size() != sample.patches.size()) fail(ErrorCategory::kConfig, "ordering has the wrong length");
    const Tensor<float> z = experiment_noise(model.config().noise_dim, seed, s);
    GeneratorOutput<float> base = model.generate(patches_of(sample.patches), z, Mode::kInference);
    GeneratorOutput<float> perm = model.generate(patches_of(permuted), z, Mode::kInference);
    audit.embedding_deviation =
        std::max(audit.embedding_deviation, max_abs(base.encoding.embedding, perm.encoding.embedding));
    audit.image_deviation = std::max(audit.image_deviation, max_abs(base.image, perm.image));
  }
  return audit;
}

PermutationAudit permutation_audit(Model<float>& model, std::span<const Sample> samples, int trials,
                                   std::uint64_t seed) {
  if (trials < 1) fail(ErrorCategory::kConfig, "permutation_audit needs trials >= 1");
  PermutationAudit audit;
  for (int t = 0; t < trials; ++t) {
    std::vector<std::vector<int>> orders;
    for (std::size_t s = 0; s < samples.size(); ++s) {
      std::vector<int> order(samples[s].n_patches());
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(mix_seed(seed, s, 0x9e77 + static_cast<std::uint64_t>(t)));
      std::shuffle(order.begin(), order.end(), rng);
      orders.push_back(std::move(order));
    }
    const PermutationAudit one = permutation_audit(model, samples, orders, seed);
    audit.embedding_deviation = std::max(audit.embedding_deviation, one.embedding_deviation);
    audit.image_deviation = std::max(audit.image_deviation, one.image_deviation);
  }
  return audit;
}

MaskQuality evaluate_masks(Model<float>& model, std::span<const Sample> samples, std::uint64_t seed) {
  if (samples.empty()) fail(ErrorCategory::kConfig, "evaluate_masks needs samples");
  MaskQuality q;
  double l1_sum = 0;
  double l1_count = 0;
  double d_sum = 0;
  const std::vector<std::uint8_t> no_flips;
  for_each_chunk(static_cast<int>(samples.size()), [&](const std::vector<int>& idx) {
    const Batch<float> batch = collate<float>(samples, idx, {}, no_flips);
    const Generation gen = generate(model, batch.patches, stacked_noise(model.config().noise_dim, seed, idx));
    const Tensor<float> d = model.discriminate(gen.image, Mode::kInference);
    const std::size_t plane = batch.masks.shape().plane();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const int item = static_cast<int>(i);
      q.iou.push_back(mask_iou(tensor_to_mask(gen.mask, item), samples[idx[i]].mask));
      d_sum += d[i];
      const auto m = batch.masks.item(item);
      const auto g = gen.image.item(item);
      const auto r = batch.images.item(item);
      for (int c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < plane; ++p)
          if (m[p] >= 0.5f) {
            l1_sum += std::abs(g[c * plane + p] - r[c * plane + p]);
            l1_count += 1;
          }
    }
  });
  q.mean_iou = std::accumulate(q.iou.begin(), q.iou.end(), 0.0) / static_cast<double>(q.iou.size());
  q.fraction_above = static_cast<double>(std::count_if(q.iou.begin(), q.iou.end(), [](double v) { return v >= 0.5; })) /
                     static_cast<double>(q.iou.size());
  q.masked_l1 = l1_count > 0 ? l1_sum / l1_count : 0.0;
  q.mean_d_score = d_sum / static_cast<double>(samples.size());
  return q;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json grid_list = nlohmann::json::array();
  for (const fs::path& p : grids) grid_list.push_back(p.string());
  return {{"metrics", metrics}, {"grids", grid_list}, {"config", config}};
}

fs::path EvalReport::write(const fs::path& dir) const {
  if (!all_numbers_finite(metrics)) fail(ErrorCategory::kNonFinite, "evaluation produced a non-finite metric");
  fs::create_directories(dir);
  const fs::path path = dir / "report.json";
  write_file_atomic(path, to_json().dump(2) + "\n");
  return path;
}

std::vector<fs::path> write_sample_grids(Model<float>& model, std::span<const Sample> samples, int count,
                                         std::uint64_t seed, const fs::path& out_dir) {
  if (count < 0) fail(ErrorCategory::kConfig, "count must be nonnegative");
  std::vector<fs::path> paths;
  if (count == 0) return paths;
  if (samples.empty()) fail(ErrorCategory::kConfig, "no samples to draw grids from");
  fs::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    const Sample& s = samples[static_cast<std::size_t>(i) % samples.size()];
    const Generation gen =
        generate(model, patches_of(s.patches), experiment_noise(model.config().noise_dim, seed, static_cast<std::uint64_t>(i)));
    Grid grid(1, s.n_patches() + 4, s.side());
    fill_generation_row(grid, 0, s.patches, gen, 0, s);
    char name[16];
    std::snprintf(name, sizeof name, "%04d", i);
    write_grid(grid, grid_path(out_dir, "sample", seed, name), paths);
  }
  return paths;
}

EvalReport run_evaluation(Model<float>& model, const TrainConfig& config, std::span<const Sample> held_out,
                          const fs::path& out_dir, std::uint64_t seed, int grid_count, std::span<const Sample> corpus) {
  if (held_out.empty()) fail(ErrorCategory::kConfig, "evaluation needs at least one sample");
  EvalReport report;
  report.config = to_json(config);
  fs::create_directories(out_dir);

  const MaskQuality q = evaluate_masks(model, held_out, seed);
  report.metrics["mask_quality"] = {{"mean_iou", q.mean_iou},
                                    {"fraction_iou_at_least_0.5", q.fraction_above},
                                    {"masked_l1", q.masked_l1},
                                    {"mean_d_score", q.mean_d_score},
                                    {"samples", q.iou.size()}};

  const std::span<const Sample> audit_set = held_out.first(std::min<std::size_t>(held_out.size(), 16));
  const PermutationAudit audit = permutation_audit(model, audit_set, 4, seed);
  report.metrics["permutation_audit"] = {{"embedding_deviation", audit.embedding_deviation},
                                         {"image_deviation", audit.image_deviation}};

  const std::vector<double> sigmas = {0.1, 0.5};
  const int patch_index = std::min(2, config.n_patches - 1);
  const std::size_t noise_count = std::min<std::size_t>(held_out.size(), 32);
  std::vector<double> l1(sigmas.size(), 0.0);
  for (std::size_t i = 0; i < noise_count; ++i) {
    NoiseRobustness nr = noise_robustness(model, held_out[i], sigmas, patch_index, mix_seed(seed, i));
    for (std::size_t k = 0; k < sigmas.size(); ++k) l1[k] += nr.l1[k] / static_cast<double>(noise_count);
    if (i == 0) write_grid(nr.grid, grid_path(out_dir, "noise", seed, "0000"), report.grids);
  }
  report.metrics["noise_robustness"] = {{"sigmas", sigmas}, {"mean_l1", l1}, {"patch_index", patch_index}};

  for (const fs::path& p : write_sample_grids(model, held_out, grid_count, seed, out_dir)) report.grids.push_back(p);

  if (held_out.size() >= 2) {
    const std::vector<int> take = {config.n_patches - 1};
    const MixResult mix = mix_patches(model, held_out[0], held_out[1], take, seed);
    write_grid(mix.grid, grid_path(out_dir, "mix", seed, "0000"), report.grids);
  }

  if (!corpus.empty()) {
    std::vector<RgbImage> corpus_images;
    for (const Sample& s : corpus) corpus_images.push_back(s.image);
    const int queries = std::min<int>(grid_count, static_cast<int>(held_out.size()));
    const int k = std::min<int>(3, static_cast<int>(corpus_images.size()));
    nlohmann::json nn = nlohmann::json::array();
    for (int i = 0; i < queries; ++i) {
      const Sample& s = held_out[i];
      const Generation gen = generate(model, patches_of(s.patches),
                                      experiment_noise(model.config().noise_dim, seed, static_cast<std::uint64_t>(i)));
      const RgbImage query = tensor_to_image(gen.image, 0);
      const std::vector<Neighbor> found = nearest_neighbors(query, corpus_images, k);
      Grid grid(1, 1 + k, s.side());
      grid.set_image(0, 0, to_data_domain(query));
      nlohmann::json entry = nlohmann::json::array();
      for (int j = 0; j < k; ++j) {
        grid.set_image(0, 1 + j, to_data_domain(corpus_images[found[j].index]));
        entry.push_back({{"index", found[j].index}, {"distance", found[j].distance}});
      }
      nn.push_back(entry);
      char name[16];
      std::snprintf(name, sizeof name, "%04d", i);
      write_grid(grid, grid_path(out_dir, "neighbors", seed, name), report.grids);
    }
    report.metrics["nearest_neighbors"] = nn;
  }
  return report;
}

std::vector<AblationVariant> standard_variants(const TrainConfig& base) {
  std::vector<AblationVariant> out;
  auto add = [&](const std::string& name, auto&& tweak) {
    TrainConfig c = base;
    c.baseline_loss = c.no_skips = c.concat_encoder = false;
    tweak(c);
    out.push_back({name, c});
  };
  add("full", [](TrainConfig&) {});
  add("no_skips", [](TrainConfig& c) { c.no_skips = true; });
  add("baseline_loss", [](TrainConfig& c) { c.baseline_loss = true; });
  add("concat_encoder", [](TrainConfig& c) { c.concat_encoder = true; });
  add("two_patches", [](TrainConfig& c) { c.n_patches = 2; });
  return out;
}

EvalReport ablation_run(std::span<const AblationVariant> variants, int train_count, int held_out_count,
                        std::uint64_t data_seed, const fs::path& out_dir) {
  if (variants.empty()) fail(ErrorCategory::kConfig, "ablation_run needs at least one variant");
  EvalReport report;
  report.config = nlohmann::json::object();
  for (const AblationVariant& v : variants) {
    v.config.validate();
    const std::vector<Sample> train = generate_toy_dataset(train_count, v.config.image_size, data_seed, v.config.n_patches);
    const std::vector<Sample> held =
        generate_toy_dataset(held_out_count, v.config.image_size, mix_seed(data_seed, 1), v.config.n_patches);
    const fs::path dir = out_dir / v.name;
    RunOptions options;
    options.out_dir = dir;
    const RunResult run = run_training(v.config, train, options);

    TrainState<float> state(v.config);
    load_checkpoint(state, run.final_checkpoint);
    const MaskQuality q = evaluate_masks(state.model, held, v.config.seed);
    const PermutationAudit audit = permutation_audit(state.model, std::span<const Sample>(held).first(std::min<std::size_t>(held.size(), 16)), 4, v.config.seed);

    const std::vector<LossLogEntry> log = read_loss_log(run.loss_log);
    const std::size_t tail = std::max<std::size_t>(1, log.size() / 10);
    double final_spatial = 0;
    for (std::size_t i = log.size() - tail; i < log.size(); ++i) final_spatial += log[i].loss_spatial / tail;
    const std::vector<std::vector<double>> terms = read_terms_log(run.terms_log);

    for (const fs::path& p : write_sample_grids(state.model, held, 2, v.config.seed, dir)) report.grids.push_back(p);
    report.metrics[v.name] = {{"final_spatial_loss", final_spatial},
                              {"mean_iou", q.mean_iou},
                              {"fraction_iou_at_least_0.5", q.fraction_above},
                              {"masked_l1", q.masked_l1},
                              {"mean_d_score", q.mean_d_score},
                              {"permutation_deviation", audit.max()},
                              {"adversarial_terms", terms.empty() ? 0 : terms.front().size()},
                              {"n_patches", state.model.config().n_patches},
                              {"steps", run.steps}};
    report.config[v.name] = to_json(v.config);
  }
  return report;
}

}  // namespace patchgen
