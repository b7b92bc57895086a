#include "patchgen/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>

#include "patchgen/dataio.hpp"
#include "patchgen/error.hpp"

namespace patchgen {

namespace {

template <typename V>
V parse_number(const std::string& key, const std::string& text) {
  V value{};
  const char* first = text.data();
  const char* last = first + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || text.empty())
    fail(ErrorCategory::kConfig, "invalid value '" + text + "' for " + key);
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail(ErrorCategory::kConfig, "invalid boolean '" + text + "' for " + key);
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

template <typename V>
Setter number_setter(V TrainConfig::*field) {
  return [field](TrainConfig& c, const std::string& key, const std::string& text) {
    c.*field = parse_number<V>(key, text);
  };
}

Setter bool_setter(bool TrainConfig::*field) {
  return [field](TrainConfig& c, const std::string& key, const std::string& text) {
    c.*field = parse_bool(key, text);
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"image_size", number_setter(&TrainConfig::image_size)},
      {"n_patches", number_setter(&TrainConfig::n_patches)},
      {"batch_size", number_setter(&TrainConfig::batch_size)},
      {"learning_rate", number_setter(&TrainConfig::learning_rate)},
      {"adam_beta1", number_setter(&TrainConfig::adam_beta1)},
      {"adam_beta2", number_setter(&TrainConfig::adam_beta2)},
      {"adam_eps", number_setter(&TrainConfig::adam_eps)},
      {"epochs", number_setter(&TrainConfig::epochs)},
      {"seed", number_setter(&TrainConfig::seed)},
      {"dataset_path", [](TrainConfig& c, const std::string&, const std::string& v) { c.dataset_path = v; }},
      {"checkpoint_every", number_setter(&TrainConfig::checkpoint_every)},
      {"base_channels", number_setter(&TrainConfig::base_channels)},
      {"baseline_loss", bool_setter(&TrainConfig::baseline_loss)},
      {"no_skips", bool_setter(&TrainConfig::no_skips)},
      {"concat_encoder", bool_setter(&TrainConfig::concat_encoder)},
      {"saturating_generator", bool_setter(&TrainConfig::saturating_generator)},
      {"stop_mask_grad", bool_setter(&TrainConfig::stop_mask_grad)},
      {"min_side", number_setter(&TrainConfig::min_side)},
      {"tall_mode", bool_setter(&TrainConfig::tall_mode)},
      {"cache_proposals", bool_setter(&TrainConfig::cache_proposals)},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [key, setter] : setters()) out.push_back(key);
    return out;
  }();
  return keys;
}

void apply_override(TrainConfig& config, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) {
    std::string valid;
    for (const std::string& k : train_config_keys()) valid += (valid.empty() ? "" : ", ") + k;
    fail(ErrorCategory::kConfig, "unknown config key '" + key + "'; valid keys: " + valid);
  }
  it->second(config, key, value);
}

void apply_override(TrainConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    fail(ErrorCategory::kConfig, "override '" + assignment + "' is not of the form key=value");
  apply_override(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

void apply_ablation(TrainConfig& config, const std::string& ablation) {
  config.baseline_loss = ablation == "baseline_loss";
  config.no_skips = ablation == "no_skips";
  config.concat_encoder = ablation == "concat_encoder";
  if (ablation != "none" && !config.baseline_loss && !config.no_skips && !config.concat_encoder)
    fail(ErrorCategory::kConfig,
         "unknown ablation '" + ablation + "'; expected none, no_skips, baseline_loss or concat_encoder");
}

void apply_json(TrainConfig& config, const nlohmann::json& document) {
  if (!document.is_object()) fail(ErrorCategory::kConfig, "config document must be a flat object");
  for (const auto& [key, value] : document.items()) {
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_boolean()) {
      text = value.get<bool>() ? "true" : "false";
    } else if (value.is_number()) {
      text = value.dump();
    } else {
      fail(ErrorCategory::kConfig, "config key '" + key + "' must be a string, number or boolean");
    }
    apply_override(config, key, text);
  }
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::kIo, "cannot open config " + path.string());
  nlohmann::json document;
  try {
    document = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kConfig, "cannot parse " + path.string() + ": " + e.what());
  }
  TrainConfig config;
  apply_json(config, document);
  return config;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"image_size", c.image_size},
      {"n_patches", c.n_patches},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"adam_eps", c.adam_eps},
      {"epochs", c.epochs},
      {"seed", c.seed},
      {"dataset_path", c.dataset_path},
      {"checkpoint_every", c.checkpoint_every},
      {"base_channels", c.base_channels},
      {"baseline_loss", c.baseline_loss},
      {"no_skips", c.no_skips},
      {"concat_encoder", c.concat_encoder},
      {"saturating_generator", c.saturating_generator},
      {"stop_mask_grad", c.stop_mask_grad},
      {"min_side", c.min_side},
      {"tall_mode", c.tall_mode},
      {"cache_proposals", c.cache_proposals},
  };
}

void TrainConfig::validate() const {
  auto positive = [](const char* name, double v) {
    if (!(v > 0)) fail(ErrorCategory::kConfig, std::string(name) + " must be positive");
  };
  positive("n_patches", n_patches);
  positive("batch_size", batch_size);
  positive("epochs", epochs);
  positive("checkpoint_every", checkpoint_every);
  positive("base_channels", base_channels);
  positive("adam_eps", adam_eps);
  positive("min_side", min_side);
  if (!(learning_rate >= 0)) fail(ErrorCategory::kConfig, "learning_rate must be nonnegative");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
    fail(ErrorCategory::kConfig, "Adam betas must lie in [0, 1)");
  if (min_side < image_size) fail(ErrorCategory::kConfig, "min_side must be at least image_size");
  model_config().validate();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.image_size = image_size;
  m.base_channels = base_channels;
  m.n_patches = n_patches;
  m.skips = !no_skips;
  m.encoder = concat_encoder ? EncoderKind::kConcat : EncoderKind::kSiameseSum;
  m.allow_any_size = allow_any_size;
  return m;
}

std::uint64_t TrainConfig::init_seed() const { return mix_seed(seed, 1); }
std::uint64_t TrainConfig::data_seed() const { return mix_seed(seed, 2); }
std::uint64_t TrainConfig::noise_seed() const { return mix_seed(seed, 3); }

}  // namespace patchgen
