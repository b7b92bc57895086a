#include "patchgen/cli.hpp"

#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "patchgen/dataio.hpp"
#include "patchgen/error.hpp"
#include "patchgen/evalsuite.hpp"
#include "patchgen/image_io.hpp"
#include "patchgen/proposals.hpp"
#include "patchgen/trainer.hpp"

namespace patchgen {

namespace fs = std::filesystem;

namespace {

// Flags shared by train and ablate; applied on top of the config file.
struct TrainFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  int epochs = 0;
  int batch_size = 0;
  int image_size = 0;
  int n_patches = 0;
  std::string ablation = "none";
  std::string dataset;
  std::vector<std::string> overrides;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* batch_opt = nullptr;
  CLI::Option* size_opt = nullptr;
  CLI::Option* patches_opt = nullptr;
  CLI::Option* ablation_opt = nullptr;
  CLI::Option* dataset_opt = nullptr;
  CLI::Option* cache_opt = nullptr;
  CLI::Option* tall_opt = nullptr;

  void add_to(CLI::App& app) {
    const TrainConfig defaults;
    app.add_option("--config", config_path, "JSON config file (flat object of config keys)");
    seed_opt = app.add_option("--seed", seed, "Master seed")->default_val(defaults.seed);
    epochs_opt = app.add_option("--epochs", epochs, "Training epochs")->default_val(defaults.epochs);
    batch_opt = app.add_option("--batch-size", batch_size, "Mini-batch size")->default_val(defaults.batch_size);
    size_opt = app.add_option("--image-size", image_size, "Image side S")
                   ->check(CLI::IsMember({64, 128}))
                   ->default_val(defaults.image_size);
    patches_opt = app.add_option("--n-patches", n_patches, "Key patches per image")->default_val(defaults.n_patches);
    ablation_opt = app.add_option("--ablation", ablation, "Ablation variant")
                       ->check(CLI::IsMember({"none", "no_skips", "baseline_loss", "concat_encoder"}))
                       ->default_val("none");
    dataset_opt = app.add_option("--dataset", dataset, "Dataset directory (root/images, root/boxes)");
    cache_opt = app.add_flag("--cache-proposals", "Write computed proposals to root/boxes");
    tall_opt = app.add_flag("--tall-mode", "Admit tall boxes up to 70% of the image height");
    app.add_option("overrides", overrides, "key=value config overrides");
  }

  TrainConfig resolve() const {
    TrainConfig c = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
    if (seed_opt->count()) c.seed = seed;
    if (epochs_opt->count()) c.epochs = epochs;
    if (batch_opt->count()) c.batch_size = batch_size;
    if (size_opt->count()) c.image_size = image_size;
    if (patches_opt->count()) c.n_patches = n_patches;
    if (ablation_opt->count()) apply_ablation(c, ablation);
    if (dataset_opt->count()) c.dataset_path = dataset;
    if (cache_opt->count()) c.cache_proposals = true;
    if (tall_opt->count()) c.tall_mode = true;
    for (const std::string& o : overrides) apply_override(c, o);
    c.validate();
    return c;
  }
};

// Checkpoint plus the configuration it is read with.
struct CheckpointFlags {
  std::string checkpoint;
  std::string config_path;
  std::string dataset;
  std::vector<std::string> overrides;

  void add_to(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    app.add_option("--config", config_path, "Config to build the model from (default: the one stored in the checkpoint)");
    app.add_option("--dataset", dataset, "Dataset directory to draw samples from")->required();
    app.add_option("overrides", overrides, "key=value config overrides");
  }

  TrainConfig resolve() const {
    TrainConfig c = config_path.empty() ? read_checkpoint_config(checkpoint) : load_train_config(config_path);
    for (const std::string& o : overrides) apply_override(c, o);
    c.dataset_path = dataset;
    c.validate();
    return c;
  }
};

int run_make_toy(int count, int side, std::uint64_t seed, const std::string& out_dir, std::ostream& out) {
  const std::vector<SourceImage> images = generate_toy_images(count, side, seed);
  write_dataset(out_dir, images);
  out << "wrote " << images.size() << " toy images to " << out_dir << '\n';
  return kExitOk;
}

int run_propose(const std::string& image_path, int n, const std::string& out_path, bool tall, std::ostream& out) {
  ProposalOptions options;
  options.filter.tall_mode = tall;
  const RgbImage image = read_image(image_path);
  const std::vector<ScoredBox> boxes = propose_key_patches(image, n, options);
  const fs::path target = out_path.empty() ? fs::path(image_path).replace_extension(".boxes") : fs::path(out_path);
  write_boxes_file(target, boxes);
  out << "wrote " << boxes.size() << " boxes to " << target.string() << '\n';
  return kExitOk;
}

int run_train(const TrainConfig& config, const std::string& out_dir, const std::string& resume, std::ostream& out) {
  const std::vector<Sample> samples = load_training_samples(config);
  RunOptions options;
  options.out_dir = out_dir;
  options.resume_from = resume;
  options.verbose = true;
  const RunResult result = run_training(config, samples, options);
  out << "trained " << result.steps << " steps; final checkpoint " << result.final_checkpoint.string() << '\n';
  return kExitOk;
}

std::unique_ptr<TrainState<float>> restore(const TrainConfig& config, const std::string& checkpoint) {
  auto state = std::make_unique<TrainState<float>>(config);
  load_checkpoint(*state, checkpoint);
  return state;
}

int run_eval(const CheckpointFlags& flags, const std::string& out_dir, std::uint64_t seed, int grids,
             const std::string& corpus_dir, std::ostream& out) {
  const TrainConfig config = flags.resolve();
  auto state = restore(config, flags.checkpoint);
  const std::vector<Sample> held_out = load_training_samples(config);
  std::vector<Sample> corpus;
  if (!corpus_dir.empty()) {
    TrainConfig corpus_config = config;
    corpus_config.dataset_path = corpus_dir;
    corpus = load_training_samples(corpus_config);
  }
  const EvalReport report = run_evaluation(state->model, config, held_out, out_dir, seed, grids, corpus);
  out << "wrote " << report.write(out_dir).string() << '\n';
  return kExitOk;
}

int run_sample(const CheckpointFlags& flags, int count, std::uint64_t seed, const std::string& out_dir,
               std::ostream& out) {
  const TrainConfig config = flags.resolve();
  auto state = restore(config, flags.checkpoint);
  if (count == 0) return kExitOk;
  const std::vector<Sample> samples = load_training_samples(config);
  const std::vector<fs::path> paths = write_sample_grids(state->model, samples, count, seed, out_dir);
  out << "wrote " << paths.size() << " grids to " << out_dir << '\n';
  return kExitOk;
}

int run_ablate(const TrainConfig& base, int count, int held_out, const std::string& out_dir, std::ostream& out) {
  const std::vector<AblationVariant> variants = standard_variants(base);
  const EvalReport report = ablation_run(variants, count, held_out, base.seed, out_dir);
  out << "wrote " << report.write(out_dir).string() << '\n';
  return kExitOk;
}

int exit_code_for(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kNonFinite:
    case ErrorCategory::kShape:
    case ErrorCategory::kInternal:
      return kExitInternal;
    default:
      return kExitUser;
  }
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generates images from a set of key local patches", "patchgen"};
  app.require_subcommand(1, 1);
  app.get_formatter()->column_width(36);

  CLI::App* make_toy = app.add_subcommand("make-toy", "Write a synthetic toy-face dataset");
  int toy_count = 256;
  int toy_side = 128;
  std::uint64_t toy_seed = 0;
  std::string toy_out = "data/toy";
  make_toy->add_option("--count", toy_count, "Number of images")->default_val(toy_count)->check(CLI::Range(2, 1 << 24));
  make_toy->add_option("--side", toy_side, "Side of the generated images")->default_val(toy_side)->check(CLI::Range(16, 4096));
  make_toy->add_option("--seed", toy_seed, "Seed")->default_val(toy_seed);
  make_toy->add_option("--out", toy_out, "Dataset directory")->default_val(toy_out);

  CLI::App* propose = app.add_subcommand("propose", "Extract key patches from one image");
  std::string propose_image;
  int propose_n = 3;
  std::string propose_out;
  propose->add_option("--image", propose_image, "Input image (PNG or JPEG)")->required();
  propose->add_option("--n", propose_n, "Number of patches")->default_val(propose_n)->check(CLI::PositiveNumber);
  propose->add_option("--out", propose_out, "Output .boxes file (default: beside the image)");
  CLI::Option* propose_tall = propose->add_flag("--tall-mode", "Admit tall boxes up to 70% of the image height");

  CLI::App* train = app.add_subcommand("train", "Train a model");
  TrainFlags train_flags;
  train_flags.add_to(*train);
  std::string train_out = "runs/train";
  std::string train_resume;
  train->add_option("--out", train_out, "Run directory")->default_val(train_out);
  train->add_option("--resume", train_resume, "Checkpoint to continue from");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint and emit grids and a report");
  CheckpointFlags eval_flags;
  eval_flags.add_to(*eval);
  std::string eval_out = "runs/eval";
  std::uint64_t eval_seed = 0;
  int eval_grids = 4;
  std::string eval_corpus;
  eval->add_option("--out", eval_out, "Output directory")->default_val(eval_out);
  eval->add_option("--seed", eval_seed, "Seed for z and perturbations")->default_val(eval_seed);
  eval->add_option("--grids", eval_grids, "Number of sample grids")->default_val(eval_grids)->check(CLI::NonNegativeNumber);
  eval->add_option("--corpus", eval_corpus, "Training dataset for nearest-neighbour retrieval");

  CLI::App* ablate = app.add_subcommand("ablate", "Train and compare the ablation variants on toy faces");
  TrainFlags ablate_flags;
  ablate_flags.add_to(*ablate);
  std::string ablate_out = "runs/ablate";
  int ablate_count = 512;
  int ablate_held = 64;
  ablate->add_option("--out", ablate_out, "Output directory")->default_val(ablate_out);
  ablate->add_option("--count", ablate_count, "Toy training images per variant")->default_val(ablate_count);
  ablate->add_option("--held-out", ablate_held, "Toy held-out images per variant")->default_val(ablate_held);

  CLI::App* sample = app.add_subcommand("sample", "Write generation grids from a checkpoint");
  CheckpointFlags sample_flags;
  sample_flags.add_to(*sample);
  int sample_count = 12;
  std::uint64_t sample_seed = 0;
  std::string sample_out = "runs/samples";
  sample->add_option("--count", sample_count, "Number of grids")->default_val(sample_count)->check(CLI::NonNegativeNumber);
  sample->add_option("--seed", sample_seed, "Seed for z")->default_val(sample_seed);
  sample->add_option("--out", sample_out, "Output directory")->default_val(sample_out);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    // --help, on the tool or on a subcommand.
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "ERROR:config: " << e.what() << '\n';
    return kExitUser;
  }

  try {
    if (make_toy->parsed()) return run_make_toy(toy_count, toy_side, toy_seed, toy_out, out);
    if (propose->parsed()) return run_propose(propose_image, propose_n, propose_out, propose_tall->count() > 0, out);
    if (train->parsed()) return run_train(train_flags.resolve(), train_out, train_resume, out);
    if (eval->parsed()) return run_eval(eval_flags, eval_out, eval_seed, eval_grids, eval_corpus, out);
    if (ablate->parsed()) {
      TrainConfig base = ablate_flags.resolve();
      return run_ablate(base, ablate_count, ablate_held, ablate_out, out);
    }
    if (sample->parsed()) return run_sample(sample_flags, sample_count, sample_seed, sample_out, out);
  } catch (const Error& e) {
    err << "ERROR:" << to_string(e.category()) << ": " << e.what() << '\n';
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    err << "ERROR:internal: " << e.what() << '\n';
    return kExitInternal;
  }
  err << "ERROR:config: no subcommand given\n";
  return kExitUser;
}

}  // namespace patchgen
