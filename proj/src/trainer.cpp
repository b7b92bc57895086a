#include "patchgen/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "patchgen/checkpoint.hpp"
#include "patchgen/error.hpp"

namespace patchgen {

namespace {

AdamOptions adam_options(const TrainConfig& c) { return {c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps}; }

template <typename T>
Model<T> initialized_model(const TrainConfig& config) {
  config.validate();
  Model<T> model(config.model_config());
  model.init(config.init_seed());
  return model;
}

template <typename T>
[[noreturn]] void non_finite(TrainState<T>& state, const char* phase, T loss_d, T loss_g, T spatial, T appearance) {
  std::ostringstream msg;
  msg << "non-finite loss during " << phase << " at step " << state.step + 1 << " (epoch " << state.epoch
      << "): L_R_D=" << loss_d << " L_R_G=" << loss_g << " L_S=" << spatial << " L_A=" << appearance
      << " |theta_G|=" << parameter_norm(state.model.generator_parameters())
      << " |theta_D|=" << parameter_norm(state.model.discriminator_parameters());
  fail(ErrorCategory::kNonFinite, msg.str());
}

template <typename T>
bool finite(T v) {
  return std::isfinite(static_cast<double>(v));
}

template <typename T>
void emit(const UpdateObserver& observer, UpdatePhase phase) {
  if (observer) observer(phase);
}

// One term of the discriminator objective: forward, loss, backward.
template <typename T>
T discriminator_term(Model<T>& model, const Tensor<T>& images, bool real, std::vector<T>& terms) {
  const Tensor<T> probs = model.discriminate(images, Mode::kTrain);
  const Tensor<T> none;
  const AdversarialLoss<T> loss = real ? discriminator_loss<T>(probs, {})
                                       : discriminator_loss<T>(none, std::span<const Tensor<T>>(&probs, 1));
  model.backward_discriminator(real ? loss.grad_real : loss.grad_fakes[0], false);
  terms.push_back(loss.terms[0]);
  return loss.value;
}

}  // namespace

template <typename T>
TrainState<T>::TrainState(const TrainConfig& cfg)
    : config(cfg),
      model(initialized_model<T>(cfg)),
      opt_d(model.discriminator_parameters(), adam_options(cfg)),
      opt_g(model.generator_parameters(), adam_options(cfg)),
      noise_rng(cfg.noise_seed()) {}

template <typename T>
double parameter_norm(const std::vector<nn::Parameter<T>*>& params) {
  double sum = 0;
  for (const nn::Parameter<T>* p : params)
    for (T v : p->value.values()) sum += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sum);
}

template <typename T>
StepReport<T> train_step(const Batch<T>& batch, TrainState<T>& state, const LossWeights& weights,
                         const UpdateObserver& observer) {
  const ModelConfig& mc = state.model.config();
  if (batch.size() == 0 || batch.n_patches != mc.n_patches || batch.images.h() != mc.image_size)
    fail(ErrorCategory::kShape, "batch does not match the model configuration");
  const bool baseline = state.config.baseline_loss;
  const int b = batch.size();
  Model<T>& model = state.model;
  StepReport<T> report;
  report.lambda = weights.lambda1;

  // Discriminator update against the real batch and every fake family.
  model.zero_discriminator_grads();
  {
    const Tensor<T> z = sample_noise<T>(b, mc.noise_dim, state.noise_rng);
    const GeneratorOutput<T> gen = model.generate(batch.patches, z, Mode::kTrain);
    T loss = discriminator_term(model, batch.images, true, report.d_terms);
    if (baseline) {
      loss += discriminator_term(model, gen.image, false, report.d_terms);
    } else {
      const CompositeBatch<T> fakes = build_composites(gen.image, batch.images, batch.partners, batch.masks);
      for (const Tensor<T>& fake : fakes.families) loss += discriminator_term(model, fake, false, report.d_terms);
    }
    report.loss_d = loss;
    if (!finite(loss)) non_finite<T>(state, "discriminator update", loss, T(0), T(0), T(0));
  }
  state.opt_d.step();
  emit<T>(observer, UpdatePhase::kDiscriminator);

  // Two generator updates with fresh noise; D only routes gradients.
  const T lambda1 = static_cast<T>(weights.lambda1);
  const T lambda2 = static_cast<T>(weights.lambda2);
  for (int sub = 0; sub < 2; ++sub) {
    model.zero_generator_grads();
    const Tensor<T> z = sample_noise<T>(b, mc.noise_dim, state.noise_rng);
    const GeneratorOutput<T> gen = model.generate(batch.patches, z, Mode::kTrain);
    const Tensor<T>& pred_mask = gen.mask.mask;

    std::vector<Tensor<T>> families;
    if (baseline) {
      families.push_back(gen.image);
    } else {
      Tensor<T> inverse(batch.masks.shape());
      for (std::size_t i = 0; i < inverse.size(); ++i) inverse[i] = T(1) - batch.masks[i];
      families.push_back(gen.image);
      families.push_back(compose(batch.masks, gen.image, batch.images));
      families.push_back(compose(inverse, gen.image, batch.images));
    }
    T adversarial = 0;
    std::vector<Tensor<T>> family_grads;
    for (const Tensor<T>& family : families) {
      const Tensor<T> probs = model.discriminate(family, Mode::kTrainFrozen);
      const AdversarialLoss<T> loss =
          generator_adversarial_loss<T>(std::span<const Tensor<T>>(&probs, 1), state.config.saturating_generator);
      adversarial += loss.value;
      family_grads.push_back(model.backward_discriminator(loss.grad_fakes[0], true));
    }
    const T spatial = spatial_loss(pred_mask, batch.masks);
    const T appearance = appearance_loss(gen.image, pred_mask, batch.images, batch.masks);
    if (!finite(adversarial) || !finite(spatial) || !finite(appearance))
      non_finite<T>(state, "generator update", report.loss_d, adversarial, spatial, appearance);

    Tensor<T> grad_image = baseline ? family_grads[0]
                                    : composite_grad_to_gen<T>(family_grads, batch.masks);
    Tensor<T> grad_mask = spatial_loss_grad(pred_mask, batch.masks);
    for (T& g : grad_mask.values()) g *= lambda1;
    const AppearanceGrads<T> ag = appearance_loss_grad(gen.image, pred_mask, batch.images, batch.masks);
    for (std::size_t i = 0; i < grad_image.size(); ++i) grad_image[i] += lambda2 * ag.gen[i];
    if (!state.config.stop_mask_grad)
      for (std::size_t i = 0; i < grad_mask.size(); ++i) grad_mask[i] += lambda2 * ag.pred_mask[i];
    model.backward_generator(grad_mask, grad_image);
    // Routing gradients through D leaves residue in its grads; it is never applied.
    model.zero_discriminator_grads();
    state.opt_g.step();
    emit<T>(observer, sub == 0 ? UpdatePhase::kGenerator1 : UpdatePhase::kGenerator2);

    report.loss_g += adversarial / T(2);
    report.loss_spatial += spatial / T(2);
    report.loss_appearance += appearance / T(2);
  }
  ++state.step;
  return report;
}

template <typename T>
void save_checkpoint(TrainState<T>& state, const std::filesystem::path& path) {
  TensorArchive archive;
  archive.config_hash = state.model.config().hash();
  for (nn::Parameter<T>* p : state.model.generator_parameters()) archive.put("param/" + p->name, p->value);
  for (nn::Parameter<T>* p : state.model.discriminator_parameters()) archive.put("param/" + p->name, p->value);
  for (const nn::Buffer<T>& buf : state.model.buffers()) archive.put("buffer/" + buf.name, *buf.value);
  auto put_adam = [&](const std::string& prefix, Adam<T>& opt) {
    const auto& params = opt.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      archive.put(prefix + "/m/" + params[k]->name, opt.first_moments()[k]);
      archive.put(prefix + "/v/" + params[k]->name, opt.second_moments()[k]);
    }
    archive.put_u64(prefix + "/t", opt.steps());
  };
  put_adam("adam_g", state.opt_g);
  put_adam("adam_d", state.opt_d);
  archive.put_u64("state/step", state.step);
  archive.put_u64("state/epoch", static_cast<std::uint64_t>(state.epoch));
  archive.put_u64("state/batch_cursor", static_cast<std::uint64_t>(state.batch_cursor));
  std::ostringstream rng;
  rng << state.noise_rng;
  archive.put_bytes("rng/noise", rng.str());
  archive.put_u64("rng/init_seed", state.config.init_seed());
  archive.put_u64("rng/data_seed", state.config.data_seed());
  archive.put_bytes("config", to_json(state.config).dump());
  archive.save(path);
}

template <typename T>
void load_checkpoint(TrainState<T>& state, const std::filesystem::path& path) {
  const TensorArchive archive = TensorArchive::load(path);
  if (archive.config_hash != state.model.config().hash())
    fail(ErrorCategory::kConfig, "config-hash mismatch: checkpoint " + path.string() +
                                     " was written for a different model configuration");
  for (nn::Parameter<T>* p : state.model.generator_parameters()) archive.get("param/" + p->name, p->value);
  for (nn::Parameter<T>* p : state.model.discriminator_parameters()) archive.get("param/" + p->name, p->value);
  for (const nn::Buffer<T>& buf : state.model.buffers()) archive.get("buffer/" + buf.name, *buf.value);
  auto get_adam = [&](const std::string& prefix, Adam<T>& opt) {
    const auto& params = opt.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      archive.get(prefix + "/m/" + params[k]->name, opt.first_moments()[k]);
      archive.get(prefix + "/v/" + params[k]->name, opt.second_moments()[k]);
    }
    opt.set_steps(archive.get_u64(prefix + "/t"));
  };
  get_adam("adam_g", state.opt_g);
  get_adam("adam_d", state.opt_d);
  state.step = archive.get_u64("state/step");
  state.epoch = static_cast<int>(archive.get_u64("state/epoch"));
  state.batch_cursor = static_cast<int>(archive.get_u64("state/batch_cursor"));
  std::istringstream rng(archive.get_bytes("rng/noise"));
  rng >> state.noise_rng;
  if (!rng) fail(ErrorCategory::kIntegrity, "checkpoint entry rng/noise is not a valid generator state");
}

TrainConfig read_checkpoint_config(const std::filesystem::path& path) {
  const TensorArchive archive = TensorArchive::load(path);
  nlohmann::json document;
  try {
    document = nlohmann::json::parse(archive.get_bytes("config"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kIntegrity, "checkpoint entry config is not valid JSON: " + std::string(e.what()));
  }
  TrainConfig config;
  apply_json(config, document);
  return config;
}

std::string format_log_line(std::uint64_t step, int epoch, const StepReport<float>& r) {
  char line[256];
  std::snprintf(line, sizeof line, "%llu %d %.9g %.9g %.9g %.9g %.9g", static_cast<unsigned long long>(step), epoch,
                static_cast<double>(r.loss_d), static_cast<double>(r.loss_g), static_cast<double>(r.loss_spatial),
                static_cast<double>(r.loss_appearance), r.lambda);
  return line;
}

std::vector<LossLogEntry> read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::kIo, "cannot open " + path.string());
  std::vector<LossLogEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    LossLogEntry e{};
    if (!(fields >> e.step >> e.epoch >> e.loss_d >> e.loss_g >> e.loss_spatial >> e.loss_appearance >> e.lambda))
      fail(ErrorCategory::kIo, "malformed loss log line in " + path.string() + ": " + line);
    entries.push_back(e);
  }
  return entries;
}

std::vector<std::vector<double>> read_terms_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::kIo, "cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::uint64_t step;
    fields >> step;
    std::vector<double> row;
    for (double v; fields >> v;) row.push_back(v);
    rows.push_back(std::move(row));
  }
  return rows;
}

RunResult run_training(const TrainConfig& config, std::span<const Sample> samples, const RunOptions& options) {
  config.validate();
  if (samples.empty()) fail(ErrorCategory::kConfig, "training set is empty");
  for (const Sample& s : samples)
    if (s.side() != config.image_size || s.n_patches() != config.n_patches)
      fail(ErrorCategory::kConfig, "training samples do not match image_size / n_patches");
  BatchStream stream(samples, config.batch_size, config.data_seed());

  auto state = std::make_unique<TrainState<float>>(config);
  if (!options.resume_from.empty()) load_checkpoint(*state, options.resume_from);

  std::filesystem::create_directories(options.out_dir / "checkpoints");
  RunResult result;
  result.loss_log = options.out_dir / "losses.log";
  result.terms_log = options.out_dir / "adversarial_terms.log";
  const auto mode = options.resume_from.empty() ? std::ios::trunc : std::ios::app;
  std::ofstream loss_log(result.loss_log, mode);
  std::ofstream terms_log(result.terms_log, mode);
  if (!loss_log || !terms_log) fail(ErrorCategory::kIo, "cannot open logs under " + options.out_dir.string());

  stream.seek(state->epoch, state->batch_cursor);
  while (state->epoch < config.epochs) {
    const LossWeights weights = lambda_schedule(state->epoch, config.epochs);
    while (auto batch = stream.next<float>()) {
      const StepReport<float> report = train_step(*batch, *state, weights);
      ++state->batch_cursor;
      loss_log << format_log_line(state->step, state->epoch, report) << '\n';
      terms_log << state->step;
      char buf[32];
      for (float t : report.d_terms) {
        std::snprintf(buf, sizeof buf, " %.9g", static_cast<double>(t));
        terms_log << buf;
      }
      terms_log << '\n';
      if (options.verbose && state->step % 10 == 0)
        std::cerr << format_log_line(state->step, state->epoch, report) << '\n';
      if (options.on_step) options.on_step(report, *state);
    }
    loss_log.flush();
    terms_log.flush();
    ++state->epoch;
    state->batch_cursor = 0;
    if (state->epoch % config.checkpoint_every == 0 && state->epoch < config.epochs) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", state->epoch);
      save_checkpoint(*state, options.out_dir / "checkpoints" / name);
    }
  }
  result.final_checkpoint = options.out_dir / "final.ckpt";
  save_checkpoint(*state, result.final_checkpoint);
  result.steps = state->step;
  return result;
}

std::vector<Sample> load_training_samples(const TrainConfig& config) {
  if (config.dataset_path.empty()) fail(ErrorCategory::kConfig, "dataset_path is not set");
  if (!std::filesystem::is_directory(config.dataset_path))
    fail(ErrorCategory::kIo, "dataset directory " + config.dataset_path + " does not exist");
  LoadOptions load;
  load.side = config.image_size;
  load.n_patches = config.n_patches;
  load.min_side = config.min_side;
  load.proposals.filter.tall_mode = config.tall_mode;
  load.cache_proposals = config.cache_proposals;
  load.workers = env_worker_count();
  return load_dataset(config.dataset_path, load);
}

template struct TrainState<float>;
template struct TrainState<double>;
template StepReport<float> train_step<float>(const Batch<float>&, TrainState<float>&, const LossWeights&,
                                             const UpdateObserver&);
template StepReport<double> train_step<double>(const Batch<double>&, TrainState<double>&, const LossWeights&,
                                               const UpdateObserver&);
template void save_checkpoint<float>(TrainState<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(TrainState<double>&, const std::filesystem::path&);
template void load_checkpoint<float>(TrainState<float>&, const std::filesystem::path&);
template void load_checkpoint<double>(TrainState<double>&, const std::filesystem::path&);
template double parameter_norm<float>(const std::vector<nn::Parameter<float>*>&);
template double parameter_norm<double>(const std::vector<nn::Parameter<double>*>&);

}  // namespace patchgen
