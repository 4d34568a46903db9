#include <algorithm>
#include <optional>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cdvg/core/errors.hpp"
#include "cdvg/data/batch.hpp"
#include "cdvg/nn/checkpoint.hpp"
#include "cdvg/translator/translator.hpp"

namespace cdvg::translator {
namespace {

bool finite(const StepLosses& l) {
  return std::isfinite(l.adv_d) && std::isfinite(l.adv_g) && std::isfinite(l.cls_d) &&
         std::isfinite(l.cls_g) && std::isfinite(l.rec);
}

std::string describe(const StepLosses& l) {
  std::ostringstream ss;
  ss << "adv_d=" << l.adv_d << " adv_g=" << l.adv_g << " cls_d=" << l.cls_d << " cls_g=" << l.cls_g
     << " rec=" << l.rec;
  return ss.str();
}

// Mean over samples of (||grad_x D_src(x)||_2 - 1)^2, differentiable in D.
Var gradient_penalty(Discriminator& d, const Tensor& x_hat_value) {
  Var x_hat = Var::parameter(x_hat_value);
  Var score = sum(d.forward(x_hat).src);
  Var gx = grad(score, {x_hat}, true)[0];
  const std::size_t n = x_hat_value.dim(0);
  Var norms = sqrt(add_scalar(sum_cols(square(reshape(gx, {n, x_hat_value.numel() / n}))), 1e-12f));
  return mean(square(add_scalar(norms, -1.0f)));
}

void flip_horizontal(Tensor& x, std::size_t index) {
  const std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  float* base = x.data() + index * c * h * w;
  for (std::size_t row = 0; row < c * h; ++row) std::reverse(base + row * w, base + (row + 1) * w);
}

std::string iteration_name(std::size_t it) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "G_%07zu.ckpt", it);
  return buf;
}

}  // namespace

Var cycle_reconstruction_loss(const GeneratorFn& g, const Var& x, std::span<const int> target,
                              std::span<const int> source) {
  return mean(abs(sub(x, g(g(x, target), source))));
}

void TranslatorConfig::validate() const {
  if (lambda_cls < 0 || lambda_rec < 0 || lambda_gp < 0) throw ConfigError("translator loss weights must be >= 0");
  if (batch_size == 0) throw ConfigError("translator batch_size must be > 0");
  if (n_critic == 0) throw ConfigError("n_critic must be > 0");
  if (checkpoint_every == 0 || log_every == 0) throw ConfigError("checkpoint_every and log_every must be > 0");
  if (!(lr_g > 0) || !(lr_d > 0)) throw ConfigError("translator learning rates must be > 0");
}

TranslatorProfile colored_mnist_profile() {
  TranslatorProfile p;
  p.arch.image_size = 28;
  p.arch.g_blocks = 3;
  p.arch.d_repeat = 4;
  p.config.iterations = 5000;
  p.config.lambda_rec = 500.0f;
  p.config.horizontal_flip = false;
  return p;
}

TranslatorProfile corrupted_cifar10_profile() {
  TranslatorProfile p;
  p.arch.image_size = 32;
  p.arch.g_blocks = 6;
  p.arch.d_repeat = 5;
  p.config.iterations = 200000;
  p.config.horizontal_flip = true;
  return p;
}

TranslatorProfile translator_profile(data::DatasetName name) {
  return name == data::DatasetName::colored_mnist ? colored_mnist_profile() : corrupted_cifar10_profile();
}

TranslatorProfile desk_scale(TranslatorProfile profile, std::size_t conv_dim) {
  profile.arch.g_conv_dim = conv_dim;
  profile.arch.d_conv_dim = conv_dim;
  return profile;
}

nlohmann::json to_json(const TranslatorArch& a) {
  return {{"image_size", a.image_size}, {"channels", a.channels}, {"num_domains", a.num_domains},
          {"g_conv_dim", a.g_conv_dim}, {"d_conv_dim", a.d_conv_dim}, {"g_blocks", a.g_blocks},
          {"d_repeat", a.d_repeat}};
}

nlohmann::json to_json(const TranslatorConfig& c) {
  return {{"iterations", c.iterations}, {"batch_size", c.batch_size}, {"lr_g", c.lr_g},
          {"lr_d", c.lr_d}, {"beta1", c.beta1}, {"beta2", c.beta2},
          {"lambda_cls", c.lambda_cls}, {"lambda_rec", c.lambda_rec}, {"lambda_gp", c.lambda_gp},
          {"n_critic", c.n_critic}, {"horizontal_flip", c.horizontal_flip}, {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every}, {"log_every", c.log_every}};
}

TranslatorArch arch_from_json(const nlohmann::json& j) {
  TranslatorArch a;
  a.image_size = j.value("image_size", a.image_size);
  a.channels = j.value("channels", a.channels);
  a.num_domains = j.value("num_domains", a.num_domains);
  a.g_conv_dim = j.value("g_conv_dim", a.g_conv_dim);
  a.d_conv_dim = j.value("d_conv_dim", a.d_conv_dim);
  a.g_blocks = j.value("g_blocks", a.g_blocks);
  a.d_repeat = j.value("d_repeat", a.d_repeat);
  return a;
}

TranslatorConfig translator_config_from_json(const nlohmann::json& j, TranslatorConfig c) {
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_g = j.value("lr_g", c.lr_g);
  c.lr_d = j.value("lr_d", c.lr_d);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.lambda_cls = j.value("lambda_cls", c.lambda_cls);
  c.lambda_rec = j.value("lambda_rec", c.lambda_rec);
  c.lambda_gp = j.value("lambda_gp", c.lambda_gp);
  c.n_critic = j.value("n_critic", c.n_critic);
  c.horizontal_flip = j.value("horizontal_flip", c.horizontal_flip);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.log_every = j.value("log_every", c.log_every);
  return c;
}

GanTrainer::GanTrainer(TranslationModel& model, const TranslatorConfig& config)
    : model_(model),
      config_(config),
      g_opt_(model.generator().parameters(), {config.lr_g, config.beta1, config.beta2, 1e-8f}),
      d_opt_(model.discriminator().parameters(), {config.lr_d, config.beta1, config.beta2, 1e-8f}) {
  config_.validate();
}

StepLosses GanTrainer::step(const Tensor& x, std::span<const int> labels, Rng& rng) {
  Generator& g = model_.generator();
  Discriminator& d = model_.discriminator();
  const std::size_t n = x.dim(0), k = model_.num_domains();
  if (labels.size() != n) throw std::invalid_argument("gan step: label count mismatch");
  std::vector<int> target(n);
  for (int& t : target) t = static_cast<int>(rng.below(k));
  Var real(x);

  // Critic: realness on real vs translated, domain classification on real,
  // gradient penalty on random interpolates.
  d_opt_.zero_grad();
  Tensor fake;
  {
    NoGradGuard guard;
    fake = g.forward(real, target).value();
  }
  const DiscriminatorOutput out_real = d.forward(real);
  Var d_real = neg(mean(out_real.src));
  Var d_cls = domain_classification_loss(out_real.cls, labels);
  Var d_fake = mean(d.forward(Var(fake)).src);
  Tensor x_hat(x.shape());
  const std::size_t per = x.numel() / n;
  for (std::size_t i = 0; i < n; ++i) {
    const auto alpha = static_cast<float>(rng.uniform());
    for (std::size_t j = 0; j < per; ++j) {
      x_hat[i * per + j] = alpha * x[i * per + j] + (1.0f - alpha) * fake[i * per + j];
    }
  }
  Var gp = gradient_penalty(d, x_hat);
  Var adv_d = add(add(d_real, d_fake), scale(gp, config_.lambda_gp));
  Var d_loss = add(adv_d, scale(d_cls, config_.lambda_cls));
  last_.adv_d = adv_d.item();
  last_.cls_d = d_cls.item();
  if (!std::isfinite(d_loss.item())) {
    throw DivergenceError("translator diverged at iteration " + std::to_string(iteration_) + ": " + describe(last_));
  }
  backward(d_loss);
  d_opt_.step();

  // Generator: fool the critic, hit the target domain, reconstruct.
  const bool update_g = (iteration_ + 1) % config_.n_critic == 0;
  if (update_g || iteration_ == 0) {
    std::optional<NoGradGuard> frozen;
    if (!update_g) frozen.emplace();
    g_opt_.zero_grad();
    Var x_fake = g.forward(real, target);
    const DiscriminatorOutput out_fake = d.forward(x_fake);
    Var adv_g = neg(mean(out_fake.src));
    Var cls_g = domain_classification_loss(out_fake.cls, target);
    Var rec = mean(abs(sub(real, g.forward(x_fake, labels))));
    Var g_loss = add(add(adv_g, scale(rec, config_.lambda_rec)), scale(cls_g, config_.lambda_cls));
    last_.adv_g = adv_g.item();
    last_.cls_g = cls_g.item();
    last_.rec = rec.item();
    if (!std::isfinite(g_loss.item())) {
      throw DivergenceError("translator diverged at iteration " + std::to_string(iteration_) + ": " + describe(last_));
    }
    if (update_g) {
      backward(g_loss);
      g_opt_.step();
      d_opt_.zero_grad();
    }
  }
  ++iteration_;
  if (!finite(last_)) {
    throw DivergenceError("translator diverged at iteration " + std::to_string(iteration_) + ": " + describe(last_));
  }
  return last_;
}

TranslatorRun train_translator(const data::BiasedDataset& dataset, const TranslatorArch& arch,
                               const TranslatorConfig& config, const std::filesystem::path& out_dir,
                               const std::string& dataset_hash, const TranslatorHooks& hooks) {
  config.validate();
  if (dataset.split != data::Split::train) {
    throw ProvenanceError("the translator is trained on the biased train split, got " +
                          std::string(data::to_string(dataset.split)));
  }
  if (dataset.samples.empty()) throw ConfigError("empty training set");
  if (arch.num_domains != dataset.num_classes) {
    throw ConfigError("translator has " + std::to_string(arch.num_domains) + " domains but the dataset has " +
                      std::to_string(dataset.num_classes) + " classes");
  }
  const auto& first = dataset.samples.front().image;
  if (first.height != arch.image_size || first.width != arch.image_size || first.channels != arch.channels) {
    throw ConfigError("translator image_size/channels do not match the dataset images");
  }

  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "checkpoints");
  fs::create_directories(out_dir / "state");
  TranslatorRun run;
  run.model = std::make_unique<TranslationModel>(arch, config.seed);
  GanTrainer trainer(*run.model, config);

  // Everything a resumed run must agree on; iterations may grow.
  nlohmann::json run_key{{"arch", to_json(arch)}, {"config", to_json(config)}, {"dataset", dataset_hash}};
  run_key["config"].erase("iterations");

  std::size_t start = 0;
  const auto progress_path = out_dir / "state" / "progress.json";
  if (fs::exists(progress_path)) {
    const auto progress = nlohmann::json::parse(std::ifstream(progress_path));
    if (progress.value("run_key", nlohmann::json()) != run_key) {
      throw ConfigError("translator state in " + out_dir.string() +
                        " was produced with a different architecture, config or dataset");
    }
    start = progress.at("iteration").get<std::size_t>();
    if (start > config.iterations) {
      throw ConfigError("translator state in " + out_dir.string() + " is at iteration " + std::to_string(start) +
                        ", beyond the requested " + std::to_string(config.iterations));
    }
    nn::load_checkpoint(run.model->generator(), out_dir / "state" / "G.ckpt");
    nn::load_checkpoint(run.model->discriminator(), out_dir / "state" / "D.ckpt");
    trainer.g_optimizer().load(out_dir / "state" / "G.adam");
    trainer.d_optimizer().load(out_dir / "state" / "D.adam");
    for (const auto& entry : progress.at("checkpoints")) {
      run.checkpoints.emplace_back(entry.at(0).get<std::size_t>(), out_dir / entry.at(1).get<std::string>());
    }
    const auto& l = progress.at("losses");
    run.final_losses = {l.at("adv_d"), l.at("adv_g"), l.at("cls_d"), l.at("cls_g"), l.at("rec")};
    trainer.resume(start, run.final_losses);
  }

  // Keep only log rows up to the resume point.
  std::vector<std::string> kept;
  if (start > 0 && fs::exists(out_dir / "losses.csv")) {
    std::ifstream in(out_dir / "losses.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (!line.empty() && std::stoul(line.substr(0, line.find(','))) <= start) kept.push_back(line);
    }
  }
  std::ofstream log(out_dir / "losses.csv", std::ios::trunc);
  log << "iteration,adv_d,adv_g,cls_d,cls_g,rec\n";
  for (const auto& line : kept) log << line << '\n';
  log.flush();

  auto checkpoint = [&](std::size_t it) {
    const fs::path rel = fs::path("checkpoints") / iteration_name(it);
    run.model->save_generator(out_dir / rel);
    run.checkpoints.emplace_back(it, out_dir / rel);
    nn::save_checkpoint(run.model->generator(), out_dir / "state" / "G.ckpt");
    nn::save_checkpoint(run.model->discriminator(), out_dir / "state" / "D.ckpt");
    trainer.g_optimizer().save(out_dir / "state" / "G.adam");
    trainer.d_optimizer().save(out_dir / "state" / "D.adam");
    nlohmann::json ckpts = nlohmann::json::array();
    for (const auto& [i, p] : run.checkpoints) ckpts.push_back({i, fs::relative(p, out_dir).string()});
    const auto& l = run.final_losses;
    nlohmann::json progress{{"iteration", it},
                            {"run_key", run_key},
                            {"checkpoints", ckpts},
                            {"losses", {{"adv_d", l.adv_d}, {"adv_g", l.adv_g}, {"cls_d", l.cls_d},
                                        {"cls_g", l.cls_g}, {"rec", l.rec}}}};
    std::ofstream(out_dir / "state" / "progress.json.tmp") << progress.dump(2);
    fs::rename(out_dir / "state" / "progress.json.tmp", progress_path);
    if (hooks.on_checkpoint) hooks.on_checkpoint(it, out_dir / rel);
  };
  if (start == 0) checkpoint(0);

  const std::size_t n = dataset.size();
  std::vector<std::size_t> indices(config.batch_size);
  for (std::size_t it = start; it < config.iterations; ++it) {
    Rng rng(mix_seed(config.seed, 0x7A11 + it));
    for (auto& idx : indices) idx = rng.below(n);
    Tensor x = data::pack_images(dataset, indices, data::PixelRange::signed_unit);
    if (config.horizontal_flip) {
      for (std::size_t i = 0; i < indices.size(); ++i) {
        if (rng.bernoulli(0.5)) flip_horizontal(x, i);
      }
    }
    const auto labels = data::class_labels(dataset, indices);
    run.final_losses = trainer.step(x, labels, rng);
    const std::size_t done = it + 1;
    if (done % config.log_every == 0 || done == config.iterations) {
      const auto& l = run.final_losses;
      log << done << ',' << l.adv_d << ',' << l.adv_g << ',' << l.cls_d << ',' << l.cls_g << ',' << l.rec << '\n';
      log.flush();
      if (hooks.on_log) hooks.on_log(done, l);
    }
    if (done % config.checkpoint_every == 0 || done == config.iterations) checkpoint(done);
  }

  run.model->save(out_dir / "model");
  const auto& l = run.final_losses;
  nlohmann::json sidecar{{"arch", to_json(arch)},
                         {"config", to_json(config)},
                         {"dataset", {{"hash", dataset_hash}, {"name", data::to_string(dataset.config.name)},
                                      {"ratio", dataset.config.ratio}, {"seed", dataset.config.seed}}},
                         {"iterations_done", config.iterations},
                         {"final_losses", {{"adv_d", l.adv_d}, {"adv_g", l.adv_g}, {"cls_d", l.cls_d},
                                           {"cls_g", l.cls_g}, {"rec", l.rec}}}};
  std::ofstream(out_dir / "translator.json") << sidecar.dump(2) << "\n";
  return run;
}

}  // namespace cdvg::translator
