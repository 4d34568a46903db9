#include "cdvg/pipeline/pipeline.hpp"

#include <fcntl.h>
#include <glob.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <regex>
#include <set>

#include "cdvg/core/errors.hpp"
#include "cdvg/core/hash.hpp"
#include "cdvg/data/batch.hpp"
#include "cdvg/data/dataset_io.hpp"
#include "cdvg/data/sources.hpp"

namespace cdvg::pipeline {

namespace fs = std::filesystem;

namespace {

std::string type_name(const nlohmann::json& j) {
  if (j.is_number()) return "number";
  return j.type_name();
}

bool same_kind(const nlohmann::json& expected, const nlohmann::json& given) {
  if (expected.is_number()) {
    if (!given.is_number()) return false;
    if (expected.is_number_integer() || expected.is_number_unsigned()) {
      return given.is_number_unsigned() || (given.is_number_integer() && given.get<long long>() >= 0);
    }
    return true;
  }
  if (expected.is_array()) return given.is_array();
  return expected.type() == given.type();
}

// Rejects unknown fields and type mismatches against the defaults in `schema`.
void check_fields(const nlohmann::json& schema, const nlohmann::json& given, const std::string& path) {
  if (!given.is_object()) throw ConfigError(path + ": expected an object, got " + type_name(given));
  for (const auto& [key, value] : given.items()) {
    const std::string field = path.empty() ? key : path + "." + key;
    if (!schema.contains(key)) throw ConfigError(field + ": unknown field");
    const auto& expected = schema.at(key);
    if (expected.is_object()) {
      check_fields(expected, value, field);
    } else if (!same_kind(expected, value)) {
      throw ConfigError(field + ": expected " + type_name(expected) + ", got " + type_name(value));
    }
  }
}

template <typename Fn>
auto with_path(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(path + "." + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

nlohmann::json merged(nlohmann::json base, const nlohmann::json& patch) {
  base.update(patch);
  return base;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError("bad JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_atomic(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  std::ofstream(tmp) << j.dump(2) << "\n";
  fs::rename(tmp, path);
}

std::string dataset_flag(const ExperimentConfig& c) { return std::string(data::to_string(c.dataset)); }

std::string cell_flags(const ExperimentConfig& c) {
  char ratio[32];
  std::snprintf(ratio, sizeof ratio, "%g", c.ratio);
  return "--dataset " + dataset_flag(c) + " --ratio " + ratio;
}

data::DatasetConfig dataset_config(const ExperimentConfig& c) {
  data::DatasetConfig d;
  d.name = c.dataset;
  d.ratio = c.ratio;
  d.seed = c.data_seed;
  d.severity = c.severity;
  return d;
}

// Decides whether a stage can be skipped. Clears a stale or forced cell,
// keeping the lock file.
bool prepare_cell(const fs::path& dir, const nlohmann::json& effective, const StageOptions& options,
                  nlohmann::json* previous) {
  const auto stage = dir / "stage.json";
  if (fs::exists(stage) && !options.force) {
    const auto old = read_json(stage);
    if (old.value("effective_config", nlohmann::json()) == effective) {
      if (previous) *previous = old;
      return true;
    }
    throw ConfigError(dir.string() + " holds a run with a different configuration; pass --force to overwrite it");
  }
  if (fs::exists(stage)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().filename() != ".lock") fs::remove_all(entry.path());
    }
  }
  return false;
}

nlohmann::json finish_cell(const fs::path& dir, const std::string& stage, const nlohmann::json& effective,
                           const nlohmann::json& upstream, nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json sidecar{{"stage", stage}, {"effective_config", effective}, {"upstream", upstream}, {"complete", true}};
  for (const auto& [k, v] : extra.items()) sidecar[k] = v;
  write_json_atomic(dir / "stage.json", sidecar);
  return sidecar;
}

std::string dataset_hash(const fs::path& dir) {
  return data::read_dataset_metadata(dir).at("content_sha256").get<std::string>();
}

std::vector<std::pair<std::size_t, fs::path>> translator_checkpoints(const fs::path& dir) {
  std::vector<std::pair<std::size_t, fs::path>> out;
  const std::regex name(R"(G_(\d+)\.ckpt)");
  if (!fs::exists(dir / "checkpoints")) return out;
  for (const auto& entry : fs::directory_iterator(dir / "checkpoints")) {
    std::smatch m;
    const std::string file = entry.path().filename().string();
    if (std::regex_match(file, m, name)) out.emplace_back(std::stoull(m[1].str()), entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json translator_effective(const ExperimentConfig& c) {
  return {{"dataset", dataset_flag(c)},
          {"ratio", c.ratio},
          {"data_seed", c.data_seed},
          {"arch", translator::to_json(c.translator_arch)},
          {"config", translator::to_json(c.translator)}};
}

}  // namespace

ExperimentConfig experiment_profile(data::DatasetName dataset) {
  ExperimentConfig c;
  c.dataset = dataset;
  const auto tp = translator::translator_profile(dataset);
  c.translator_arch = tp.arch;
  c.translator = tp.config;
  c.model = debias::model_profile(dataset);
  c.train = debias::train_profile(dataset);
  c.augment = debias::augmentation_policy(dataset);
  c.oracle.epochs = dataset == data::DatasetName::colored_mnist ? 40 : 20;
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"dataset", dataset_flag(c)},
          {"ratio", c.ratio},
          {"data_seed", c.data_seed},
          {"translator_seed", c.translator_seed},
          {"seed", c.seed},
          {"method", c.method},
          {"out", c.out.string()},
          {"mnist_root", c.mnist_root.string()},
          {"cifar_root", c.cifar_root.string()},
          {"fallback_train", c.fallback_train},
          {"fallback_test", c.fallback_test},
          {"severity", c.severity},
          {"translator_arch", translator::to_json(c.translator_arch)},
          {"translator", translator::to_json(c.translator)},
          {"model", debias::to_json(c.model)},
          {"train", debias::to_json(c.train)},
          {"augment", debias::to_json(c.augment)},
          {"oracle", diagnostics::to_json(c.oracle)},
          {"diagnostics",
           {{"probe_size", c.diagnostics.probe_size},
            {"grid_samples", c.diagnostics.grid_samples},
            {"seed", c.diagnostics.seed}}}};
}

ExperimentConfig apply_json(const nlohmann::json& j, ExperimentConfig c) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  if (j.contains("dataset")) {
    if (!j.at("dataset").is_string()) throw ConfigError("dataset: expected string");
    const auto name = with_path("dataset", [&] { return data::parse_dataset_name(j.at("dataset").get<std::string>()); });
    if (name != c.dataset) {
      auto profile = experiment_profile(name);
      profile.out = c.out;
      profile.mnist_root = c.mnist_root;
      profile.cifar_root = c.cifar_root;
      c = profile;
    }
  }
  const nlohmann::json schema = to_json(c);
  check_fields(schema, j, "");

  c.ratio = j.value("ratio", c.ratio);
  c.data_seed = j.value("data_seed", c.data_seed);
  c.translator_seed = j.value("translator_seed", c.translator_seed);
  c.seed = j.value("seed", c.seed);
  c.method = j.value("method", c.method);
  c.out = j.value("out", c.out.string());
  c.mnist_root = j.value("mnist_root", c.mnist_root.string());
  c.cifar_root = j.value("cifar_root", c.cifar_root.string());
  c.fallback_train = j.value("fallback_train", c.fallback_train);
  c.fallback_test = j.value("fallback_test", c.fallback_test);
  c.severity = j.value("severity", c.severity);
  if (j.contains("translator_arch")) {
    c.translator_arch = with_path("translator_arch", [&] {
      return translator::arch_from_json(merged(translator::to_json(c.translator_arch), j.at("translator_arch")));
    });
  }
  if (j.contains("translator")) {
    c.translator = with_path("translator", [&] {
      return translator::translator_config_from_json(j.at("translator"), c.translator);
    });
  }
  if (j.contains("model")) {
    c.model = with_path("model", [&] { return debias::model_config_from_json(j.at("model"), c.model); });
  }
  if (j.contains("train")) {
    c.train = with_path("train", [&] { return debias::train_config_from_json(j.at("train"), c.train); });
  }
  if (j.contains("augment")) {
    c.augment = with_path("augment", [&] { return debias::policy_from_json(j.at("augment"), c.augment); });
  }
  if (j.contains("oracle")) {
    c.oracle = with_path("oracle", [&] { return diagnostics::oracle_config_from_json(j.at("oracle"), c.oracle); });
  }
  if (j.contains("diagnostics")) {
    const auto& d = j.at("diagnostics");
    c.diagnostics.probe_size = d.value("probe_size", c.diagnostics.probe_size);
    c.diagnostics.grid_samples = d.value("grid_samples", c.diagnostics.grid_samples);
    c.diagnostics.seed = d.value("seed", c.diagnostics.seed);
  }
  return c;
}

std::string ratio_dir(double ratio) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", ratio);
  return buf;
}

fs::path Layout::cell(const std::string& method, std::uint64_t seed) const {
  return out / std::string(data::to_string(dataset)) / ratio_dir(ratio) / method / std::to_string(seed);
}
fs::path Layout::data(std::uint64_t data_seed, data::Split split) const {
  return cell("data", data_seed) / std::string(data::to_string(split));
}
fs::path Layout::translator(std::uint64_t translator_seed) const { return cell("translator", translator_seed); }
fs::path Layout::diagnostics(std::uint64_t translator_seed) const { return cell("diagnostics", translator_seed); }
fs::path Layout::run(const std::string& method, std::uint64_t seed) const { return cell(method, seed); }

Layout layout(const ExperimentConfig& c) { return {c.out, c.dataset, c.ratio}; }

void Logger::log(const char* level, const std::string& message, const nlohmann::json& fields) const {
  std::string line;
  if (json) {
    nlohmann::json j = fields;
    j["ts"] = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
    j["level"] = level;
    j["msg"] = message;
    line = j.dump();
  } else {
    line = std::string("[") + level + "] " + message;
    if (!fields.empty()) line += " " + fields.dump();
  }
  if (sink) {
    sink(line);
  } else {
    std::cerr << line << std::endl;
  }
}

void Logger::info(const std::string& message, const nlohmann::json& fields) const { log("info", message, fields); }
void Logger::warn(const std::string& message, const nlohmann::json& fields) const { log("warn", message, fields); }

CellLock::CellLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw std::runtime_error(dir.string() + " is in use by another cdvg process; delete " + path_.string() +
                             " if no such process is running");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

CellLock::~CellLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

debias::Ablation method_ablation(const std::string& method) {
  if (method == "cdvg") return debias::Ablation::full;
  if (method == "cdvg-no-g") return debias::Ablation::no_G;
  if (method == "cdvg-no-cl") return debias::Ablation::no_CL;
  if (method == "vanilla") return debias::Ablation::full;
  throw ConfigError("method: unknown value '" + method + "' (expected vanilla, cdvg, cdvg-no-g or cdvg-no-cl)");
}

std::string method_name(const std::string& method, debias::Ablation ablation) {
  method_ablation(method);
  if (method == "vanilla") return method;
  switch (ablation) {
    case debias::Ablation::no_G: return "cdvg-no-g";
    case debias::Ablation::no_CL: return "cdvg-no-cl";
    default: return method == "cdvg" ? "cdvg" : method;
  }
}

data::BiasedDataset load_split(const ExperimentConfig& c, data::Split split) {
  const auto dir = layout(c).data(c.data_seed, split);
  if (!fs::exists(dir / "config.json")) {
    throw MissingArtifactError("no " + std::string(data::to_string(split)) + " split at " + dir.string() +
                               "; run `cdvg synth " + cell_flags(c) + " --seed " + std::to_string(c.data_seed) +
                               "` first");
  }
  return data::read_dataset(dir);
}

std::unique_ptr<translator::TranslationModel> load_translator(const ExperimentConfig& c) {
  const auto dir = layout(c).translator(c.translator_seed);
  if (!fs::exists(dir / "stage.json")) {
    throw MissingArtifactError("no trained translator at " + dir.string() + "; run `cdvg train-translator " +
                               cell_flags(c) + " --seed " + std::to_string(c.translator_seed) + "` first");
  }
  return translator::TranslationModel::load(dir / "model");
}

StageResult run_synth(const ExperimentConfig& c, const StageOptions& options) {
  const auto cfg = dataset_config(c);
  cfg.validate(10);
  const auto dir = layout(c).cell("data", c.data_seed);
  const nlohmann::json effective{{"dataset", data::config_to_json(cfg)},
                                 {"mnist_root", c.mnist_root.string()},
                                 {"cifar_root", c.cifar_root.string()},
                                 {"fallback_train", c.fallback_train},
                                 {"fallback_test", c.fallback_test}};
  CellLock lock(dir);
  StageResult result{dir, false, {}};
  if (prepare_cell(dir, effective, options, &result.sidecar)) {
    options.logger.info("synth: already complete", {{"dir", dir.string()}});
    result.skipped = true;
    return result;
  }
  const bool mnist = c.dataset == data::DatasetName::colored_mnist;
  const auto source = [&](bool train) {
    const std::size_t n = train ? c.fallback_train : c.fallback_test;
    return mnist ? data::digit_source(c.mnist_root, train, n, c.data_seed)
                 : data::object_source(c.cifar_root, train, n, c.data_seed);
  };
  const auto train_source = source(true);
  const auto test_source = source(false);
  nlohmann::json upstream = nlohmann::json::object();
  nlohmann::json splits = nlohmann::json::object();
  for (const auto split : {data::Split::train, data::Split::unbiased_train, data::Split::unbiased_test}) {
    const auto& src = split == data::Split::unbiased_test ? test_source : train_source;
    const auto ds = data::build_dataset(src, cfg, split);
    const auto split_dir = dir / std::string(data::to_string(split));
    data::write_dataset(ds, split_dir);
    const auto name = std::string(data::to_string(split));
    splits[name] = {{"num_samples", ds.size()},
                    {"bias_free_count", ds.bias_free_count()},
                    {"content_sha256", dataset_hash(split_dir)}};
    options.logger.info("synth: wrote split", {{"split", name}, {"samples", ds.size()},
                                               {"bias_free", ds.bias_free_count()}});
    upstream["source_" + name] = src.origin;
  }
  result.sidecar = finish_cell(dir, "synth", effective, upstream, {{"splits", splits}});
  return result;
}

StageResult run_train_translator(const ExperimentConfig& c, const StageOptions& options) {
  c.translator.validate();
  const auto dir = layout(c).translator(c.translator_seed);
  auto tc = c.translator;
  tc.seed = c.translator_seed;
  ExperimentConfig effective_cfg = c;
  effective_cfg.translator = tc;
  const auto effective = translator_effective(effective_cfg);
  CellLock lock(dir);
  StageResult result{dir, false, {}};
  if (prepare_cell(dir, effective, options, &result.sidecar)) {
    options.logger.info("train-translator: already complete", {{"dir", dir.string()}});
    result.skipped = true;
    return result;
  }
  const auto train = load_split(c, data::Split::train);
  const auto hash = dataset_hash(layout(c).data(c.data_seed, data::Split::train));
  translator::TranslatorHooks hooks;
  const auto every = std::max<std::size_t>(tc.log_every, tc.iterations / 50);
  hooks.on_log = [&](std::size_t it, const translator::StepLosses& l) {
    if (it % every == 0 || it == tc.iterations) {
      options.logger.info("train-translator", {{"iteration", it}, {"adv_d", l.adv_d}, {"adv_g", l.adv_g},
                                               {"cls_d", l.cls_d}, {"cls_g", l.cls_g}, {"rec", l.rec}});
    }
  };
  auto run = translator::train_translator(train, c.translator_arch, tc, dir, hash, hooks);
  const nlohmann::json upstream{{"train_data", hash}};
  result.sidecar = finish_cell(dir, "train-translator", effective, upstream,
                               {{"generator_sha256", sha256_file(dir / "model" / "G.ckpt")},
                                {"checkpoints", run.checkpoints.size()}});
  return result;
}

StageResult run_train(const ExperimentConfig& c, const StageOptions& options) {
  const auto ablation = c.method == "vanilla" ? debias::Ablation::full
                                              : (c.method == "cdvg" ? c.train.ablation : method_ablation(c.method));
  const std::string method = method_name(c.method, ablation);
  auto tc = c.train;
  tc.seed = c.seed;
  tc.ablation = ablation;
  tc.validate();
  c.model.validate();
  const bool vanilla = method == "vanilla";
  const bool needs_g = !vanilla && ablation != debias::Ablation::no_G;
  const auto lay = layout(c);
  const auto dir = lay.run(method, c.seed);

  const auto train_dir = lay.data(c.data_seed, data::Split::train);
  const auto test_dir = lay.data(c.data_seed, data::Split::unbiased_test);
  nlohmann::json upstream{{"train_data", nullptr}, {"test_data", nullptr}};
  if (fs::exists(train_dir / "config.json")) upstream["train_data"] = dataset_hash(train_dir);
  if (fs::exists(test_dir / "config.json")) upstream["test_data"] = dataset_hash(test_dir);
  std::unique_ptr<translator::TranslationModel> generator;
  if (needs_g) {
    generator = load_translator(c);
    upstream["translator"] = sha256_file(lay.translator(c.translator_seed) / "model" / "G.ckpt");
  }
  nlohmann::json effective{{"dataset", dataset_flag(c)},
                           {"ratio", c.ratio},
                           {"method", method},
                           {"data_seed", c.data_seed},
                           {"train", debias::to_json(tc)},
                           {"model", debias::to_json(c.model)},
                           {"upstream", upstream}};
  if (!vanilla) effective["augment"] = debias::to_json(c.augment);
  if (needs_g) effective["translator_seed"] = c.translator_seed;

  CellLock lock(dir);
  StageResult result{dir, false, {}};
  if (prepare_cell(dir, effective, options, &result.sidecar)) {
    options.logger.info("train: already complete", {{"dir", dir.string()}});
    result.skipped = true;
    return result;
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().filename() != ".lock") fs::remove_all(entry.path());
  }
  const auto train = load_split(c, data::Split::train);
  const auto test = load_split(c, data::Split::unbiased_test);

  debias::RunContext ctx;
  ctx.method = method;
  ctx.upstream = upstream;
  ctx.cell = {{"dataset", dataset_flag(c)}, {"ratio", c.ratio}, {"data_seed", c.data_seed},
              {"train_data", upstream["train_data"]}};
  if (needs_g) {
    ctx.cell["translator"] = upstream["translator"];
    const auto data_hash = upstream["train_data"].is_string() ? upstream["train_data"].get<std::string>() : "";
    const auto g_hash = upstream["translator"].get<std::string>();
    ctx.cache_file = lay.translator(c.translator_seed) / ("translation_cache_" + data_hash.substr(0, 16) + ".bin");
    ctx.cache_key = g_hash + ":" + data_hash;
  }
  ctx.on_epoch = [&](const eval::EpochRecord& r) {
    options.logger.info("train", {{"method", method}, {"seed", c.seed}, {"epoch", r.epoch}, {"ce_orig", r.ce_orig},
                                  {"ce_trans", r.ce_trans}, {"cl", r.cl}, {"test_acc", r.test_acc}});
  };
  auto run = vanilla ? debias::train_vanilla(train, test, c.model, tc, dir, ctx)
                     : debias::train_cdvg(train, test, generator.get(), c.model, tc, c.augment, dir, ctx);
  result.sidecar = finish_cell(dir, "train", effective, upstream,
                               {{"final_test_acc", run.metrics.last().test_acc},
                                {"best_test_acc", run.metrics.best().test_acc},
                                {"config_hash", run.metrics.config_hash}});
  return result;
}

StageResult run_eval(const ExperimentConfig& c, const StageOptions& options) {
  const auto ablation = c.method == "vanilla" ? debias::Ablation::full
                                              : (c.method == "cdvg" ? c.train.ablation : method_ablation(c.method));
  const std::string method = method_name(c.method, ablation);
  const auto dir = layout(c).run(method, c.seed);
  if (!fs::exists(dir / "stage.json")) {
    throw MissingArtifactError("no finished run at " + dir.string() + "; run `cdvg train " + cell_flags(c) +
                               " --method " + method + " --seed " + std::to_string(c.seed) + "` first");
  }
  const auto metrics = eval::read_run(dir);
  const auto test = load_split(c, data::Split::unbiased_test);
  auto model = debias::DebiasModel::load(dir / "model");
  const double acc = eval::unbiased_accuracy(*model, test);
  const auto& best = metrics.best();
  nlohmann::json out{{"unbiased_test_acc", acc},
                     {"last_epoch", metrics.last().epoch},
                     {"last_epoch_test_acc", metrics.last().test_acc},
                     {"best_epoch", best.epoch},
                     {"best_test_acc", best.test_acc},
                     {"config_hash", metrics.config_hash},
                     {"upstream",
                      {{"test_data", dataset_hash(layout(c).data(c.data_seed, data::Split::unbiased_test))},
                       {"weights", sha256_file(dir / "model" / "weights.ckpt")}}}};
  write_json_atomic(dir / "eval.json", out);
  options.logger.info("eval", {{"dir", dir.string()}, {"unbiased_test_acc", acc}});
  return {dir, false, out};
}

StageResult run_diagnose(const ExperimentConfig& c, const StageOptions& options) {
  const auto lay = layout(c);
  const auto tdir = lay.translator(c.translator_seed);
  const auto dir = lay.diagnostics(c.translator_seed);
  if (!fs::exists(tdir / "stage.json")) load_translator(c);  // throws the actionable error
  const auto unbiased_train_dir = lay.data(c.data_seed, data::Split::unbiased_train);
  const auto test_dir = lay.data(c.data_seed, data::Split::unbiased_test);
  const auto checkpoints = translator_checkpoints(tdir);
  if (checkpoints.empty()) throw MissingArtifactError("no generator checkpoints under " + tdir.string());
  const auto tstage = read_json(tdir / "stage.json");
  const auto generator_hash = tstage.at("generator_sha256").get<std::string>();
  const auto arch = translator::arch_from_json(tstage.at("effective_config").at("arch"));
  const auto cadence = tstage.at("effective_config").at("config").at("checkpoint_every").get<std::size_t>();

  auto model_cfg = c.model;
  model_cfg.num_classes = arch.num_domains;
  nlohmann::json effective{{"oracle", diagnostics::to_json(c.oracle)},
                           {"oracle_model", debias::to_json(model_cfg)},
                           {"probe_size", c.diagnostics.probe_size},
                           {"grid_samples", c.diagnostics.grid_samples},
                           {"seed", c.diagnostics.seed},
                           {"generator", generator_hash},
                           {"checkpoints", checkpoints.size()}};
  CellLock lock(dir);
  StageResult result{dir, false, {}};
  if (prepare_cell(dir, effective, options, &result.sidecar)) {
    options.logger.info("diagnose: already complete", {{"dir", dir.string()}});
    result.skipped = true;
    return result;
  }
  const auto unbiased = load_split(c, data::Split::unbiased_train);
  const auto test = load_split(c, data::Split::unbiased_test);

  const auto oracle = [&](diagnostics::LabelKind kind) {
    const auto odir = dir / ("oracle_" + std::string(diagnostics::to_string(kind)));
    if (fs::exists(odir / "oracle.json")) {
      auto loaded = diagnostics::OracleClassifier::load(odir);
      if (loaded.provenance == dataset_hash(unbiased_train_dir) &&
          loaded.sidecar.value("config", nlohmann::json()) == diagnostics::to_json(c.oracle)) {
        return loaded;
      }
    }
    options.logger.info("diagnose: training oracle", {{"label_kind", diagnostics::to_string(kind)}});
    auto trained = diagnostics::train_oracle(unbiased, kind, model_cfg, c.oracle);
    trained.save(odir);
    options.logger.info("diagnose: oracle ready", {{"label_kind", diagnostics::to_string(kind)},
                                                   {"held_out_accuracy", trained.held_out_accuracy}});
    return trained;
  };
  auto bias = oracle(diagnostics::LabelKind::bias);
  auto signal = oracle(diagnostics::LabelKind::signal);

  const auto probe = diagnostics::make_probe_set(test, c.diagnostics.probe_size, arch.num_domains, c.diagnostics.seed);
  const auto curve = diagnostics::measure_bias_signal_losses(checkpoints, arch, bias, signal, probe);
  diagnostics::write_probe_csv(curve, dir / "probe.csv");
  data::write_png(dir / "probe.png", diagnostics::render_probe_chart(curve));

  auto g = translator::TranslationModel::load(tdir / "model");
  const auto grid = diagnostics::make_probe_set(test, c.diagnostics.grid_samples, arch.num_domains,
                                                c.diagnostics.seed + 1);
  diagnostics::render_transformation_grid(*g, grid.images, dir / "grid.png");
  nlohmann::json extra{{"probe_size", probe.targets.size()},
                       {"checkpoint_cadence", cadence},
                       {"initial", {{"iteration", curve.points.front().iteration},
                                    {"bias_loss", curve.points.front().bias_loss},
                                    {"signal_loss", curve.points.front().signal_loss}}},
                       {"final", {{"iteration", curve.points.back().iteration},
                                  {"bias_loss", curve.points.back().bias_loss},
                                  {"signal_loss", curve.points.back().signal_loss}}},
                       {"oracle_held_out_accuracy", {{"bias", bias.held_out_accuracy},
                                                     {"signal", signal.held_out_accuracy}}}};
  if (c.dataset == data::DatasetName::colored_mnist) {
    extra["palette_decode_rate"] = diagnostics::palette_decode_rate(*g, probe.images, data::default_palette());
  }
  const nlohmann::json upstream{{"unbiased_train", dataset_hash(unbiased_train_dir)},
                                {"unbiased_test", dataset_hash(test_dir)},
                                {"generator", generator_hash}};
  options.logger.info("diagnose: probe complete", extra);
  result.sidecar = finish_cell(dir, "diagnose", effective, upstream, extra);
  return result;
}

StageResult run_grid(const ExperimentConfig& c, const fs::path& output, const StageOptions& options) {
  auto g = load_translator(c);
  const auto test = load_split(c, data::Split::unbiased_test);
  const auto samples = diagnostics::make_probe_set(test, c.diagnostics.grid_samples, g->num_domains(),
                                                   c.diagnostics.seed + 1);
  const auto path = output.empty() ? layout(c).translator(c.translator_seed) / "grid.png" : output;
  diagnostics::render_transformation_grid(*g, samples.images, path);
  options.logger.info("grid: wrote", {{"path", path.string()}});
  return {path.parent_path(), false, {{"path", path.string()}}};
}

eval::AggregateReport run_report(const std::vector<std::string>& patterns, const fs::path& output_prefix,
                                 const StageOptions& options) {
  std::set<fs::path> dirs;
  for (const auto& pattern : patterns) {
    glob_t g{};
    if (::glob(pattern.c_str(), GLOB_NOSORT, nullptr, &g) == 0) {
      for (std::size_t i = 0; i < g.gl_pathc; ++i) {
        const fs::path p = g.gl_pathv[i];
        if (fs::exists(p / "run.json")) dirs.insert(p);
      }
    }
    ::globfree(&g);
  }
  if (dirs.empty()) throw MissingArtifactError("no run directories match the --runs patterns; run `cdvg train` first");
  std::vector<eval::RunMetrics> runs;
  for (const auto& d : dirs) runs.push_back(eval::read_run(d));
  const auto report = eval::aggregate_runs(runs);
  auto csv = output_prefix;
  csv += ".csv";
  auto txt = output_prefix;
  txt += ".txt";
  eval::emit_report(report, eval::ReportFormat::csv, csv);
  eval::emit_report(report, eval::ReportFormat::text, txt);
  options.logger.info("report: wrote", {{"runs", runs.size()}, {"cells", report.cells.size()},
                                        {"csv", csv.string()}, {"text", txt.string()}});
  return report;
}

}  // namespace cdvg::pipeline
