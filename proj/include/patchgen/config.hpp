#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchgen/model.hpp"

namespace patchgen {

struct TrainConfig {
  int image_size = 64;
  int n_patches = 3;
  int batch_size = 64;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 25;
  std::uint64_t seed = 0;
  std::string dataset_path;
  int checkpoint_every = 1;
  // Width of the first encoder level; 64 is the full-size network.
  int base_channels = 64;

  bool baseline_loss = false;
  bool no_skips = false;
  bool concat_encoder = false;
  // Generator uses log(1 - D) instead of -log D.
  bool saturating_generator = false;
  // Appearance loss does not back-propagate into the predicted mask.
  bool stop_mask_grad = false;

  int min_side = 128;
  bool tall_mode = false;
  bool cache_proposals = false;

  // Not a file key: lets tests run reduced geometries such as 16 x 16.
  bool allow_any_size = false;

  void validate() const;
  ModelConfig model_config() const;

  std::uint64_t init_seed() const;
  std::uint64_t data_seed() const;
  std::uint64_t noise_seed() const;
};

/// Keys accepted in config files and `key=value` overrides.
const std::vector<std::string>& train_config_keys();

/// Sets one key from its textual form. Unknown keys and unparsable values are
/// config errors; the unknown-key message lists every valid key.
void apply_override(TrainConfig& config, const std::string& key, const std::string& value);
/// Accepts "key=value".
void apply_override(TrainConfig& config, const std::string& assignment);
void apply_ablation(TrainConfig& config, const std::string& ablation);

/// Flat JSON object of the keys above; missing keys keep their defaults.
void apply_json(TrainConfig& config, const nlohmann::json& document);
TrainConfig load_train_config(const std::filesystem::path& path);
nlohmann::json to_json(const TrainConfig& config);

}  // namespace patchgen
