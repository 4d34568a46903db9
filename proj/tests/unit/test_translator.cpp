#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cdvg/core/errors.hpp"
#include "cdvg/data/dataset.hpp"
#include "cdvg/nn/checkpoint.hpp"
#include "cdvg/translator/translator.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cdvg;
using namespace cdvg::translator;
using testing::random_tensor;

namespace {

TranslatorArch tiny_arch(std::size_t size = 8, std::size_t domains = 10) {
  TranslatorArch a;
  a.image_size = size;
  a.num_domains = domains;
  a.g_conv_dim = 4;
  a.d_conv_dim = 4;
  a.g_blocks = 1;
  a.d_repeat = 2;
  return a;
}

TranslatorConfig tiny_config() {
  TranslatorConfig c;
  c.iterations = 4;
  c.batch_size = 4;
  c.checkpoint_every = 2;
  c.log_every = 1;
  c.seed = 5;
  return c;
}

// 8x8 grayscale blobs whose position depends on the label.
data::SourceImages blob_digits(std::size_t n) {
  data::SourceImages s;
  for (std::size_t i = 0; i < n; ++i) {
    data::Image8 img(8, 8, 1);
    const std::size_t label = i % 10;
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 3; ++c) img.pixels[(label % 5 + r) * 8 + label / 5 * 4 + c] = 255;
    }
    s.images.push_back(img);
    s.labels.push_back(static_cast<int>(label));
  }
  s.origin = "blobs";
  return s;
}

data::BiasedDataset blob_dataset(data::Split split = data::Split::train) {
  data::DatasetConfig config;
  config.ratio = 0.05;
  config.seed = 2;
  return data::build_colored_mnist(blob_digits(60), config, split);
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "cdvg_test_translator" / name;
  std::filesystem::remove_all(dir);
  return dir;
}

std::vector<float> flat(nn::Module& m) {
  std::vector<float> out;
  for (const auto& e : m.state()) out.insert(out.end(), e.tensor->span().begin(), e.tensor->span().end());
  return out;
}

double brute_force_ce(const std::vector<double>& logits, std::size_t k, const std::vector<int>& targets) {
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits[r * k + j]);
    total += -(logits[r * k + targets[r]] - std::log(z));
  }
  return total / static_cast<double>(targets.size());
}

}  // namespace

TEST_CASE("translate preserves shape and stays in [-1, 1]") {
  TranslationModel model(tiny_arch(), 3);
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 1 + rng.below(4);
    Tensor x = random_tensor(rng, {n, 3, 8, 8}, -3.0, 3.0);
    std::vector<int> domains(n);
    for (int& d : domains) d = static_cast<int>(rng.below(10));
    const Tensor y = model.translate(x, domains);
    REQUIRE(y.shape() == x.shape());
    for (float v : y.span()) {
      REQUIRE(std::isfinite(v));
      REQUIRE(v >= -1.0f);
      REQUIRE(v <= 1.0f);
    }
    const Tensor again = model.translate(x, domains);
    CHECK(std::equal(y.span().begin(), y.span().end(), again.span().begin()));
  }
}

TEST_CASE("translate rejects bad domains") {
  TranslationModel model(tiny_arch(), 3);
  Tensor x(Shape{2, 3, 8, 8});
  const std::vector<int> negative{0, -1}, too_big{0, 10}, short_list{0};
  CHECK_THROWS_AS(model.translate(x, negative), std::out_of_range);
  CHECK_THROWS_AS(model.translate(x, too_big), std::out_of_range);
  CHECK_THROWS(model.translate(x, short_list));
  IdentityTranslator identity(10);
  CHECK_THROWS_AS(identity.translate(x, too_big), std::out_of_range);
}

TEST_CASE("discriminator emits K domain logits") {
  TranslationModel model(tiny_arch(16, 7), 1);
  Rng rng(1);
  const auto out = model.discriminator().forward(Var(random_tensor(rng, {3, 3, 16, 16})));
  CHECK(out.cls.shape() == Shape{3, 7});
  CHECK(out.src.dim(0) == 3);
  CHECK(out.src.dim(1) == 1);
}

TEST_CASE("domain classification loss matches brute-force softmax cross-entropy") {
  Rng rng(11);
  const std::size_t k = 4, rows = 3;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> logits(rows * k);
    for (double& v : logits) v = rng.uniform(-4.0, 4.0);
    std::vector<int> targets(rows);
    for (int& t : targets) t = static_cast<int>(rng.below(k));
    const double expected = brute_force_ce(logits, k, targets);

    CHECK(domain_classification_loss<double>(logits, rows, k, targets) ==
          doctest::Approx(expected).epsilon(1e-12));

    Tensor t(Shape{rows, k});
    for (std::size_t i = 0; i < logits.size(); ++i) t[i] = static_cast<float>(logits[i]);
    std::vector<double> rounded(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) rounded[i] = t[i];
    const double var_loss = domain_classification_loss(Var(t), targets).item();
    CHECK(std::abs(var_loss - brute_force_ce(rounded, k, targets)) < 1e-6);
  }
}

TEST_CASE("domain classification loss limits") {
  const std::vector<int> target{3};
  std::vector<double> uniform(10, 0.7);
  CHECK(domain_classification_loss<double>(uniform, 1, 10, target) == doctest::Approx(std::log(10.0)));

  double previous = INFINITY;
  for (double boost : {0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0}) {
    std::vector<double> logits(10, 0.0);
    logits[3] = boost;
    const double loss = domain_classification_loss<double>(logits, 1, 10, target);
    CHECK(loss >= 0.0);
    CHECK(loss < previous);
    previous = loss;
  }
  CHECK(previous < 1e-12);
}

TEST_CASE("identity generator reconstructs exactly") {
  Rng rng(4);
  Tensor x = random_tensor(rng, {3, 3, 8, 8});
  const std::vector<int> target{1, 2, 3}, source{0, 0, 9};
  GeneratorFn identity = [](const Var& v, std::span<const int>) { return v; };
  CHECK(cycle_reconstruction_loss(identity, Var(x), target, source).item() == 0.0f);
}

TEST_CASE("reconstruction gradient of a 3x3 toy generator matches finite differences") {
  // G(x, y) = tanh(conv3x3([x, onehot(y)])) with K = 2 domain planes.
  constexpr std::size_t n = 2, c = 3, k = 2, h = 5, w = 5, cin = c + k;
  Rng rng(21);
  nn::Conv2d conv(cin, c, 3, 1, 1, rng, true);
  const Tensor x = random_tensor(rng, {n, c, h, w});
  const std::vector<int> target{1, 0}, source{0, 1};

  GeneratorFn g = [&](const Var& v, std::span<const int> domains) {
    Tensor planes(Shape{n, k, h, w}, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < h * w; ++p) planes[(i * k + domains[i]) * h * w + p] = 1.0f;
    }
    return tanh(conv.forward(concat_channels(v, Var(planes))));
  };
  auto state = conv.state();
  Var weight = conv.parameters()[0], bias = conv.parameters()[1];
  backward(cycle_reconstruction_loss(g, Var(x), target, source));
  const Tensor gw = weight.grad().clone(), gb = bias.grad().clone();

  // Double-precision reference forward over the same parameters.
  std::vector<double> wd(weight.value().span().begin(), weight.value().span().end());
  std::vector<double> bd(bias.value().span().begin(), bias.value().span().end());
  auto g_ref = [&](const std::vector<double>& in, std::span<const int> domains) {
    std::vector<double> out(n * c * h * w);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < c; ++o) {
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t q = 0; q < w; ++q) {
            double acc = bd[o];
            for (std::size_t ch = 0; ch < cin; ++ch) {
              for (std::size_t dr = 0; dr < 3; ++dr) {
                for (std::size_t dq = 0; dq < 3; ++dq) {
                  const long rr = static_cast<long>(r + dr) - 1, qq = static_cast<long>(q + dq) - 1;
                  if (rr < 0 || qq < 0 || rr >= static_cast<long>(h) || qq >= static_cast<long>(w)) continue;
                  const double v = ch < c ? in[((i * c + ch) * h + rr) * w + qq]
                                          : (static_cast<int>(ch - c) == domains[i] ? 1.0 : 0.0);
                  acc += wd[(o * cin + ch) * 9 + dr * 3 + dq] * v;
                }
              }
            }
            out[((i * c + o) * h + r) * w + q] = std::tanh(acc);
          }
        }
      }
    }
    return out;
  };
  const std::vector<double> xd(x.span().begin(), x.span().end());
  auto loss_ref = [&] {
    const auto rec = g_ref(g_ref(xd, target), source);
    double s = 0.0;
    for (std::size_t i = 0; i < xd.size(); ++i) s += std::abs(xd[i] - rec[i]);
    return s / static_cast<double>(xd.size());
  };
  CHECK(loss_ref() == doctest::Approx(cycle_reconstruction_loss(g, Var(x), target, source).item()).epsilon(1e-5));

  auto check = [&](std::vector<double>& params, const Tensor& analytic) {
    double diff = 0.0, norm = 0.0;
    const double step = 1e-6;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double orig = params[i];
      params[i] = orig + step;
      const double plus = loss_ref();
      params[i] = orig - step;
      const double minus = loss_ref();
      params[i] = orig;
      const double fd = (plus - minus) / (2.0 * step);
      diff += (analytic[i] - fd) * (analytic[i] - fd);
      norm += fd * fd;
    }
    return std::sqrt(diff / norm);
  };
  CHECK(check(wd, gw) < 1e-4);
  CHECK(check(bd, gb) < 1e-4);
}

TEST_CASE("gan step returns five finite components and respects the critic schedule") {
  TranslationModel model(tiny_arch(), 9);
  TranslatorConfig config = tiny_config();
  config.n_critic = 3;
  GanTrainer trainer(model, config);
  Rng rng(3);
  const Tensor x = random_tensor(rng, {4, 3, 8, 8});
  const std::vector<int> labels{0, 1, 2, 3};

  const auto g0 = flat(model.generator());
  auto d_prev = flat(model.discriminator());
  for (std::size_t it = 0; it < 3; ++it) {
    const StepLosses l = trainer.step(x, labels, rng);
    for (double v : {l.adv_d, l.adv_g, l.cls_d, l.cls_g, l.rec}) CHECK(std::isfinite(v));
    CHECK(l.cls_d >= 0.0);
    CHECK(l.cls_g >= 0.0);
    CHECK(l.rec >= 0.0);
    const auto d_now = flat(model.discriminator());
    CHECK(d_now != d_prev);
    d_prev = d_now;
    const bool g_changed = flat(model.generator()) != g0;
    CHECK(g_changed == (it == 2));
  }
  CHECK(trainer.iteration() == 3);
}

TEST_CASE("gan step aborts on a non-finite loss") {
  TranslationModel model(tiny_arch(), 9);
  GanTrainer trainer(model, tiny_config());
  Tensor x(Shape{2, 3, 8, 8}, 0.0f);
  x[5] = NAN;
  Rng rng(1);
  const std::vector<int> labels{0, 1};
  try {
    trainer.step(x, labels, rng);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("iteration 0") != std::string::npos);
    CHECK(msg.find("adv_d=") != std::string::npos);
  }
}

TEST_CASE("dataset profiles") {
  const auto mnist = colored_mnist_profile();
  CHECK(mnist.arch.g_blocks == 3);
  CHECK(mnist.config.lambda_rec == 500.0f);
  CHECK(mnist.config.iterations == 5000);
  CHECK_FALSE(mnist.config.horizontal_flip);
  const auto cifar = corrupted_cifar10_profile();
  CHECK(cifar.arch.g_blocks == 6);
  CHECK(cifar.arch.d_repeat == 5);
  CHECK(cifar.config.lambda_gp == 10.0f);
  CHECK(cifar.config.n_critic == 5);

  const auto round_trip = translator_config_from_json(to_json(mnist.config));
  CHECK(to_json(round_trip) == to_json(mnist.config));
  CHECK(to_json(arch_from_json(to_json(cifar.arch))) == to_json(cifar.arch));

  TranslatorConfig bad;
  bad.lambda_rec = -1.0f;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("zero-iteration training returns the initial model and checkpoints load back identically") {
  const auto dir = fresh_dir("zero");
  auto config = tiny_config();
  config.iterations = 0;
  const auto ds = blob_dataset();
  const TranslatorRun run = train_translator(ds, tiny_arch(), config, dir);
  TranslationModel fresh(tiny_arch(), config.seed);
  CHECK(flat(run.model->generator()) == flat(fresh.generator()));

  Rng rng(8);
  const Tensor probe = random_tensor(rng, {3, 3, 8, 8});
  const std::vector<int> domains{0, 4, 9};
  const auto loaded = TranslationModel::load(dir / "model");
  const Tensor a = run.model->translate(probe, domains), b = loaded->translate(probe, domains);
  CHECK(std::equal(a.span().begin(), a.span().end(), b.span().begin()));

  REQUIRE(run.checkpoints.size() == 1);
  TranslationModel from_ckpt(tiny_arch(), 77);
  from_ckpt.load_generator(run.checkpoints[0].second);
  const Tensor c = from_ckpt.translate(probe, domains);
  CHECK(std::equal(a.span().begin(), a.span().end(), c.span().begin()));
  CHECK(std::filesystem::exists(dir / "translator.json"));
}

TEST_CASE("training writes logs and checkpoints and resumes bit-identically") {
  const auto ds = blob_dataset();
  const auto config = tiny_config();
  const auto straight_dir = fresh_dir("straight");
  const TranslatorRun straight = train_translator(ds, tiny_arch(), config, straight_dir, "abc");

  std::ifstream log(straight_dir / "losses.csv");
  std::string line;
  std::getline(log, line);
  CHECK(line == "iteration,adv_d,adv_g,cls_d,cls_g,rec");
  std::size_t rows = 0;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 4);
  REQUIRE(straight.checkpoints.size() == 3);
  CHECK(straight.checkpoints[2].first == 4);
  const auto sidecar = nlohmann::json::parse(std::ifstream(straight_dir / "translator.json"));
  CHECK(sidecar.at("dataset").at("hash") == "abc");
  CHECK(sidecar.at("config").at("iterations") == 4);
  CHECK(sidecar.at("final_losses").contains("rec"));

  const auto resumed_dir = fresh_dir("resumed");
  TranslatorHooks crash;
  crash.on_checkpoint = [](std::size_t it, const std::filesystem::path&) {
    if (it == 2) throw std::runtime_error("simulated interruption");
  };
  CHECK_THROWS(train_translator(ds, tiny_arch(), config, resumed_dir, "abc", crash));
  const TranslatorRun resumed = train_translator(ds, tiny_arch(), config, resumed_dir, "abc");
  CHECK(flat(resumed.model->generator()) == flat(straight.model->generator()));
  CHECK(flat(resumed.model->discriminator()) == flat(straight.model->discriminator()));
  CHECK(resumed.checkpoints.size() == 3);

  auto other = config;
  other.lambda_rec = 3.0f;
  CHECK_THROWS_AS(train_translator(ds, tiny_arch(), other, resumed_dir, "abc"), ConfigError);
  CHECK_THROWS_AS(train_translator(ds, tiny_arch(), config, resumed_dir, "other-data"), ConfigError);

  std::ifstream a(straight_dir / "losses.csv"), b(resumed_dir / "losses.csv");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
}

TEST_CASE("translator training refuses unbiased splits and mismatched shapes") {
  const auto dir = fresh_dir("refuse");
  CHECK_THROWS_AS(train_translator(blob_dataset(data::Split::unbiased_test), tiny_arch(), tiny_config(), dir),
                  ProvenanceError);
  CHECK_THROWS_AS(train_translator(blob_dataset(), tiny_arch(16), tiny_config(), dir), ConfigError);
  CHECK_THROWS_AS(train_translator(blob_dataset(), tiny_arch(8, 5), tiny_config(), dir), ConfigError);
}

TEST_CASE("domain classification loss gradient matches central finite differences") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 1 + rng.below(4), k = 2 + rng.below(9);
    std::vector<double> logits(rows * k), g(rows * k);
    for (double& v : logits) v = rng.uniform(-3.0, 3.0);
    std::vector<int> targets(rows);
    for (int& t : targets) t = static_cast<int>(rng.below(k));
    domain_classification_loss<double>(logits, rows, k, targets, g);
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double orig = logits[i], h = 1e-6;
      logits[i] = orig + h;
      const double plus = domain_classification_loss<double>(logits, rows, k, targets);
      logits[i] = orig - h;
      const double minus = domain_classification_loss<double>(logits, rows, k, targets);
      logits[i] = orig;
      const double fd = (plus - minus) / (2 * h);
      diff += (g[i] - fd) * (g[i] - fd);
      norm += fd * fd;
    }
    CHECK(std::sqrt(diff / norm) <= 1e-4);
  }
}
