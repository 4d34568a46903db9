// cdvg: synthesize biased data, train the translator and debiased models,
// diagnose, evaluate and report.

#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "cdvg/core/errors.hpp"
#include "cdvg/pipeline/pipeline.hpp"

using namespace cdvg;
namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config_file;
  std::optional<std::string> dataset;
  std::optional<double> ratio;
  std::optional<std::uint64_t> seed, data_seed, translator_seed;
  std::optional<std::string> out, mnist_root, cifar_root;
  std::optional<std::size_t> fallback_train, fallback_test;
  bool force = false;
  bool json_logs = false;

  // train-translator
  std::optional<std::size_t> iterations, blocks, d_repeat, conv_dim, checkpoint_every, translator_batch;
  std::optional<float> lambda_rec;

  // train
  std::optional<std::string> method, ablation;
  std::optional<float> lambda, tau, lr;
  std::optional<std::size_t> epochs, batch_size;

  // diagnose / grid / report
  std::optional<std::size_t> probe_size, grid_samples, oracle_epochs;
  std::string output;
  std::vector<std::string> runs;
};

enum class SeedRole { data, translator, run };

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config_file, "JSON experiment config; flags override it")->check(CLI::ExistingFile);
  app->add_option("--dataset", f.dataset, "colored_mnist or corrupted_cifar10");
  app->add_option("--ratio", f.ratio, "bias-free fraction, e.g. 0.005");
  app->add_option("--data-seed", f.data_seed, "dataset seed");
  app->add_option("--translator-seed", f.translator_seed, "translator seed");
  app->add_option("--out", f.out, "output root (default runs)");
  app->add_option("--mnist-root", f.mnist_root, "directory with MNIST IDX files");
  app->add_option("--cifar-root", f.cifar_root, "directory with cifar-10-batches-bin");
  app->add_option("--fallback-train", f.fallback_train, "procedural train images when no source files exist");
  app->add_option("--fallback-test", f.fallback_test, "procedural test images when no source files exist");
  app->add_flag("--force", f.force, "rerun even when the cell is complete");
  app->add_flag("--json-logs", f.json_logs, "structured log lines");
}

template <typename T, typename U>
void set_if(const std::optional<T>& v, U& target) {
  if (v) target = *v;
}

pipeline::ExperimentConfig resolve(const Flags& f, SeedRole role) {
  nlohmann::json file = nlohmann::json::object();
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(f.config_file + ": " + e.what());
    }
  }
  auto name = data::DatasetName::colored_mnist;
  if (f.dataset) {
    name = data::parse_dataset_name(*f.dataset);
  } else if (file.contains("dataset") && file["dataset"].is_string()) {
    name = data::parse_dataset_name(file["dataset"].get<std::string>());
  }
  auto c = pipeline::apply_json(file, pipeline::experiment_profile(name));
  c.dataset = name;

  set_if(f.ratio, c.ratio);
  set_if(f.data_seed, c.data_seed);
  set_if(f.translator_seed, c.translator_seed);
  if (f.seed) {
    switch (role) {
      case SeedRole::data: c.data_seed = *f.seed; break;
      case SeedRole::translator: c.translator_seed = *f.seed; break;
      case SeedRole::run: c.seed = *f.seed; break;
    }
  }
  if (f.out) c.out = *f.out;
  if (f.mnist_root) c.mnist_root = *f.mnist_root;
  if (f.cifar_root) c.cifar_root = *f.cifar_root;
  set_if(f.fallback_train, c.fallback_train);
  set_if(f.fallback_test, c.fallback_test);

  set_if(f.iterations, c.translator.iterations);
  set_if(f.lambda_rec, c.translator.lambda_rec);
  set_if(f.checkpoint_every, c.translator.checkpoint_every);
  set_if(f.translator_batch, c.translator.batch_size);
  set_if(f.blocks, c.translator_arch.g_blocks);
  set_if(f.d_repeat, c.translator_arch.d_repeat);
  if (f.conv_dim) {
    c.translator_arch.g_conv_dim = *f.conv_dim;
    c.translator_arch.d_conv_dim = *f.conv_dim;
  }

  set_if(f.method, c.method);
  if (f.ablation) c.train.ablation = debias::parse_ablation(*f.ablation);
  set_if(f.lambda, c.train.lambda_cl);
  set_if(f.tau, c.train.tau);
  set_if(f.lr, c.train.lr);
  set_if(f.epochs, c.train.epochs);
  set_if(f.batch_size, c.train.batch_size);

  set_if(f.probe_size, c.diagnostics.probe_size);
  set_if(f.grid_samples, c.diagnostics.grid_samples);
  set_if(f.oracle_epochs, c.oracle.epochs);
  pipeline::method_ablation(c.method);
  return c;
}

void print_result(const pipeline::StageResult& r) {
  std::cout << (r.skipped ? "skipped (complete): " : "done: ") << r.dir.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive debiasing via generative bias-transformation"};
  app.require_subcommand(1);
  Flags f;

  auto* synth = app.add_subcommand("synth", "build train, unbiased_train and unbiased_test splits");
  add_common(synth, f);
  synth->add_option("--seed", f.seed, "dataset seed");

  auto* translator = app.add_subcommand("train-translator", "train the bias-transformation generator");
  add_common(translator, f);
  translator->add_option("--seed", f.seed, "translator seed");
  translator->add_option("--iterations", f.iterations, "generator iterations");
  translator->add_option("--lambda-rec", f.lambda_rec, "reconstruction weight");
  translator->add_option("--blocks", f.blocks, "generator residual blocks");
  translator->add_option("--d-repeat-num", f.d_repeat, "discriminator strided convolutions");
  translator->add_option("--conv-dim", f.conv_dim, "base width of both networks");
  translator->add_option("--checkpoint-every", f.checkpoint_every, "iterations between generator checkpoints");
  translator->add_option("--batch-size", f.translator_batch, "translator batch size");

  auto* train = app.add_subcommand("train", "train a debiased, vanilla or ablation model");
  add_common(train, f);
  train->add_option("--seed", f.seed, "training seed");
  train->add_option("--method", f.method, "vanilla, cdvg, cdvg-no-g or cdvg-no-cl");
  train->add_option("--ablation", f.ablation, "full, no-g or no-cl (with --method cdvg)");
  train->add_option("--lambda", f.lambda, "contrastive weight");
  train->add_option("--tau", f.tau, "NT-Xent temperature");
  train->add_option("--epochs", f.epochs, "training epochs");
  train->add_option("--batch-size", f.batch_size, "batch size");
  train->add_option("--lr", f.lr, "initial learning rate");

  auto* diagnose = app.add_subcommand("diagnose", "train oracles and probe translator checkpoints");
  add_common(diagnose, f);
  diagnose->add_option("--seed", f.seed, "translator seed");
  diagnose->add_option("--probe-size", f.probe_size, "probe samples");
  diagnose->add_option("--oracle-epochs", f.oracle_epochs, "oracle training epochs");

  auto* evaluate = app.add_subcommand("eval", "recompute unbiased test accuracy of a finished run");
  add_common(evaluate, f);
  evaluate->add_option("--seed", f.seed, "training seed");
  evaluate->add_option("--method", f.method, "vanilla, cdvg, cdvg-no-g or cdvg-no-cl");

  auto* report = app.add_subcommand("report", "aggregate runs into CSV and text tables");
  report->add_option("--runs", f.runs, "glob(s) matching run directories")->required();
  report->add_option("--output", f.output, "output prefix (writes .csv and .txt)");
  report->add_flag("--json-logs", f.json_logs, "structured log lines");

  auto* grid = app.add_subcommand("grid", "render a transformation grid");
  add_common(grid, f);
  grid->add_option("--seed", f.seed, "translator seed");
  grid->add_option("--samples", f.grid_samples, "rows");
  grid->add_option("--output", f.output, "PNG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  pipeline::StageOptions options;
  options.force = f.force;
  options.logger.json = f.json_logs;
  try {
    if (synth->parsed()) {
      print_result(pipeline::run_synth(resolve(f, SeedRole::data), options));
    } else if (translator->parsed()) {
      print_result(pipeline::run_train_translator(resolve(f, SeedRole::translator), options));
    } else if (train->parsed()) {
      print_result(pipeline::run_train(resolve(f, SeedRole::run), options));
    } else if (diagnose->parsed()) {
      print_result(pipeline::run_diagnose(resolve(f, SeedRole::translator), options));
    } else if (evaluate->parsed()) {
      const auto r = pipeline::run_eval(resolve(f, SeedRole::run), options);
      std::cout << r.sidecar.dump(2) << "\n";
    } else if (report->parsed()) {
      const fs::path prefix = f.output.empty() ? fs::path("report") : fs::path(f.output);
      const auto table = pipeline::run_report(f.runs, prefix, options);
      std::cout << eval::render_report(table, eval::ReportFormat::text);
    } else if (grid->parsed()) {
      print_result(pipeline::run_grid(resolve(f, SeedRole::translator), f.output, options));
    }
  } catch (const ConfigError& e) {
    options.logger.log("error", std::string("configuration: ") + e.what(), nlohmann::json::object());
    return 1;
  } catch (const std::invalid_argument& e) {
    options.logger.log("error", std::string("configuration: ") + e.what(), nlohmann::json::object());
    return 1;
  } catch (const std::exception& e) {
    options.logger.log("error", e.what(), nlohmann::json::object());
    return 2;
  }
  return 0;
}
