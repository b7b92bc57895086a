#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchgen/config.hpp"
#include "patchgen/dataio.hpp"
#include "patchgen/model.hpp"

namespace patchgen {

/// Binarizes `pred` at threshold; |A and B| / |A or B|, 1 when both are empty.
double mask_iou(const Mask& pred, const Mask& truth, double threshold = 0.5);

struct Neighbor {
  int index;
  double distance;
};

/// k nearest corpus images by Euclidean pixel distance, ascending, ties by
/// lower index. k beyond the corpus size is truncated with a warning.
std::vector<Neighbor> nearest_neighbors(const RgbImage& query, std::span<const RgbImage> corpus, int k);

/// Rows of cells; every cell is side x side. Images are data domain.
class Grid {
 public:
  Grid(int rows, int cols, int side);
  void set_image(int row, int col, const RgbImage& image);
  void set_mask(int row, int col, const Mask& mask);
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  const RgbImage& canvas() const { return canvas_; }

 private:
  int rows_, cols_, side_;
  RgbImage canvas_;
};

/// Columns used by every generation grid.
std::vector<std::string> generation_columns(int n_patches);

struct Generation {
  Tensor<float> image;  // B x 3 x S x S, network domain
  Tensor<float> mask;   // B x 1 x S x S
};

/// Inference-mode generation.
Generation generate(Model<float>& model, const Tensor<float>& patches, const Tensor<float>& noise);

/// z for sample `index` of an experiment: a fixed function of (seed, index).
Tensor<float> experiment_noise(int dim, std::uint64_t seed, std::uint64_t index);

/// One grid row: inputs..., Gen, Gen M, Real, Real M.
void fill_generation_row(Grid& grid, int row, std::span<const RgbImage> patches, const Generation& gen, int item,
                         const Sample& real);

std::filesystem::path grid_path(const std::filesystem::path& dir, const std::string& experiment,
                                std::uint64_t seed, const std::string& case_name);

struct NoiseRobustness {
  std::vector<double> sigmas;
  std::vector<double> l1;  // mean |gen(noisy) - gen(clean)| per sigma
  Grid grid;               // row 0 clean, row k sigma k
};

/// Perturbs patch `patch_index` with N(0, sigma^2) noise in the network
/// domain, clamps to [-1, 1] and generates with the same z.
NoiseRobustness noise_robustness(Model<float>& model, const Sample& sample, std::span<const double> sigmas,
                                 int patch_index, std::uint64_t seed);

struct MixResult {
  std::vector<RgbImage> patches;  // hybrid set, network domain
  Generation generation;
  Grid grid;
};

/// Replaces the patches of `a` at `take_from_b` by those of `b`.
MixResult mix_patches(Model<float>& model, const Sample& a, const Sample& b, std::span<const int> take_from_b,
                      std::uint64_t z_seed);

struct PermutationAudit {
  double embedding_deviation = 0;
  double image_deviation = 0;
  double max() const { return std::max(embedding_deviation, image_deviation); }
};

/// Random patch orderings against the original order under fixed z.
PermutationAudit permutation_audit(Model<float>& model, std::span<const Sample> samples, int trials,
                                   std::uint64_t seed);
/// Same, for explicitly given orderings (one per sample).
PermutationAudit permutation_audit(Model<float>& model, std::span<const Sample> samples,
                                   std::span<const std::vector<int>> orders, std::uint64_t seed);

struct MaskQuality {
  std::vector<double> iou;
  double mean_iou = 0;
  double fraction_above = 0;   // share of samples with IoU >= 0.5
  double masked_l1 = 0;        // mean |gen - real| over true-mask pixels
  double mean_d_score = 0;     // mean D(gen)
};

MaskQuality evaluate_masks(Model<float>& model, std::span<const Sample> samples, std::uint64_t seed);

struct EvalReport {
  nlohmann::json metrics = nlohmann::json::object();
  std::vector<std::filesystem::path> grids;
  nlohmann::json config = nlohmann::json::object();

  nlohmann::json to_json() const;
  /// Writes `report.json` under dir; every metric must be finite.
  std::filesystem::path write(const std::filesystem::path& dir) const;
};

/// Metrics plus sample / noise / mix grids for a trained model. With a
/// non-empty corpus the generations are also matched to their nearest
/// corpus images.
EvalReport run_evaluation(Model<float>& model, const TrainConfig& config, std::span<const Sample> held_out,
                          const std::filesystem::path& out_dir, std::uint64_t seed, int grid_count = 4,
                          std::span<const Sample> corpus = {});

/// `count` generation grids, one per held-out sample (cycled).
std::vector<std::filesystem::path> write_sample_grids(Model<float>& model, std::span<const Sample> samples,
                                                      int count, std::uint64_t seed,
                                                      const std::filesystem::path& out_dir);

struct AblationVariant {
  std::string name;
  TrainConfig config;
};

/// full, no_skips, baseline_loss, concat_encoder and n_patches = 2.
std::vector<AblationVariant> standard_variants(const TrainConfig& base);

/// Trains every variant on toy faces and evaluates them on held-out faces.
EvalReport ablation_run(std::span<const AblationVariant> variants, int train_count, int held_out_count,
                        std::uint64_t data_seed, const std::filesystem::path& out_dir);

}  // namespace patchgen
