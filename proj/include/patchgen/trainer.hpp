#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "patchgen/config.hpp"
#include "patchgen/dataio.hpp"
#include "patchgen/losses.hpp"
#include "patchgen/model.hpp"
#include "patchgen/optim.hpp"

namespace patchgen {

/// Everything a run needs to continue bit-exactly. Not movable: the
/// optimizers hold pointers into the model.
template <typename T>
struct TrainState {
  explicit TrainState(const TrainConfig& config);
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  TrainConfig config;
  Model<T> model;
  Adam<T> opt_d;
  Adam<T> opt_g;
  std::uint64_t step = 0;
  int epoch = 0;
  int batch_cursor = 0;  // batches of `epoch` already consumed
  std::mt19937_64 noise_rng;
};

enum class UpdatePhase { kDiscriminator, kGenerator1, kGenerator2 };

/// Logged quantities of one step. Generator values average the two sub-steps.
template <typename T>
struct StepReport {
  T loss_d = 0;
  T loss_g = 0;
  T loss_spatial = 0;
  T loss_appearance = 0;
  double lambda = 0;
  std::vector<T> d_terms;  // 6 for the composite objective, 2 for the baseline
};

/// Called after each optimizer update, in update order.
using UpdateObserver = std::function<void(UpdatePhase)>;

/// One discriminator update followed by two generator updates, each with
/// fresh noise. Throws kNonFinite with a diagnostic snapshot on a non-finite
/// loss.
template <typename T>
StepReport<T> train_step(const Batch<T>& batch, TrainState<T>& state, const LossWeights& weights,
                         const UpdateObserver& observer = {});

template <typename T>
void save_checkpoint(TrainState<T>& state, const std::filesystem::path& path);
/// Restores into a state constructed from the same configuration; a
/// different model configuration is a kConfig error.
template <typename T>
void load_checkpoint(TrainState<T>& state, const std::filesystem::path& path);

/// The training configuration a checkpoint was written with.
TrainConfig read_checkpoint_config(const std::filesystem::path& path);

template <typename T>
double parameter_norm(const std::vector<nn::Parameter<T>*>& params);

std::string format_log_line(std::uint64_t step, int epoch, const StepReport<float>& report);

struct LossLogEntry {
  std::uint64_t step;
  int epoch;
  double loss_d, loss_g, loss_spatial, loss_appearance, lambda;
};
std::vector<LossLogEntry> read_loss_log(const std::filesystem::path& path);
/// Per-step adversarial term values (the step column is dropped).
std::vector<std::vector<double>> read_terms_log(const std::filesystem::path& path);

struct RunOptions {
  std::filesystem::path out_dir;
  std::filesystem::path resume_from;  // empty: start fresh
  bool verbose = false;
  std::function<void(const StepReport<float>&, const TrainState<float>&)> on_step;
};

struct RunResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path loss_log;
  std::filesystem::path terms_log;
  std::uint64_t steps = 0;
};

/// Trains over `samples` for config.epochs. Writes `losses.log`,
/// `adversarial_terms.log`, `checkpoints/epoch_XXXX.ckpt` every
/// checkpoint_every epochs and `final.ckpt` under out_dir.
RunResult run_training(const TrainConfig& config, std::span<const Sample> samples, const RunOptions& options);

/// Loads config.dataset_path with the config's geometry and proposal settings.
std::vector<Sample> load_training_samples(const TrainConfig& config);

}  // namespace patchgen
