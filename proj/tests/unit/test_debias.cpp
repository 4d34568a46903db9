#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "cdvg/core/errors.hpp"
#include "cdvg/data/batch.hpp"
#include "cdvg/debias/contrastive.hpp"
#include "cdvg/debias/trainer.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cdvg;
using namespace cdvg::debias;
using testing::random_tensor;

namespace {

data::SourceImages blob_digits(std::size_t n, std::size_t size = 8) {
  data::SourceImages s;
  for (std::size_t i = 0; i < n; ++i) {
    data::Image8 img(size, size, 1);
    const std::size_t label = i % 10;
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 3; ++c) img.pixels[(label % 5 + r) * size + label / 5 * 4 + c] = 255;
    }
    s.images.push_back(img);
    s.labels.push_back(static_cast<int>(label));
  }
  s.origin = "blobs";
  return s;
}

data::BiasedDataset blob_dataset(data::Split split, std::size_t n = 60) {
  data::DatasetConfig config;
  config.ratio = 0.05;
  config.seed = 2;
  return data::build_colored_mnist(blob_digits(n), config, split);
}

ModelConfig tiny_mlp() {
  ModelConfig c;
  c.image_size = 8;
  c.mlp_hidden = 12;
  c.head_dims = {12, 12};
  return c;
}

TrainConfig tiny_train() {
  TrainConfig c;
  c.batch_size = 16;
  c.epochs = 2;
  c.seed = 4;
  c.tau = 0.1f;
  return c;
}

translator::TranslatorArch tiny_arch() {
  translator::TranslatorArch a;
  a.image_size = 8;
  a.g_conv_dim = 4;
  a.d_conv_dim = 4;
  a.g_blocks = 1;
  a.d_repeat = 2;
  return a;
}

std::vector<float> flat(nn::Module& m) {
  std::vector<float> out;
  for (const auto& e : m.state()) out.insert(out.end(), e.tensor->span().begin(), e.tensor->span().end());
  return out;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "cdvg_test_debias" / name;
  std::filesystem::remove_all(dir);
  return dir;
}

double brute_ce(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(logits[i * k + j]));
    total += std::log(z) - logits[i * k + labels[i]];
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("target domains are uniform and reproducible") {
  Rng one(1);
  for (int i = 0; i < 100; ++i) CHECK(sample_target_domain(1, one) == 0);
  CHECK_THROWS_AS(sample_target_domain(0, one), std::invalid_argument);
  CHECK_THROWS_AS(sample_target_domain(-3, one), std::invalid_argument);

  Rng a(77), b(77);
  for (int i = 0; i < 1000; ++i) REQUIRE(sample_target_domain(10, a) == sample_target_domain(10, b));

  Rng rng(123);
  std::vector<double> counts(10, 0.0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) counts[sample_target_domain(10, rng)] += 1.0;
  double stat = 0.0;
  for (double c : counts) stat += (c - draws / 10.0) * (c - draws / 10.0) / (draws / 10.0);
  CHECK(stat < 27.877);  // chi-square 0.999 quantile, 9 degrees of freedom
}

TEST_CASE("degenerate augmentation policy is the identity") {
  Rng rng(3);
  data::ImageF img(28, 28, 3);
  for (float& v : img.pixels) v = static_cast<float>(rng.uniform());
  const auto out = augment(img, identity_policy(28), rng);
  CHECK(out.pixels == img.pixels);
}

TEST_CASE("augmentation respects the policy and is deterministic") {
  Rng src(4);
  data::ImageF img(28, 28, 3);
  for (float& v : img.pixels) v = static_cast<float>(src.uniform());
  CHECK_FALSE(colored_mnist_policy().horizontal_flip);
  CHECK(colored_mnist_policy().grayscale_p == 0.0f);
  CHECK(corrupted_cifar10_policy().horizontal_flip);

  AugmentationPolicy policy = colored_mnist_policy();
  policy.output_size = 20;
  std::set<std::vector<float>> distinct;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng r1(seed), r2(seed);
    const auto a = augment(img, policy, r1), b = augment(img, policy, r2);
    REQUIRE(a.height == 20);
    REQUIRE(a.width == 20);
    REQUIRE(a.pixels == b.pixels);
    for (float v : a.pixels) REQUIRE((v >= 0.0f && v <= 1.0f));
    distinct.insert(a.pixels);
  }
  CHECK(distinct.size() == 10);

  AugmentationPolicy gray = identity_policy(28);
  gray.grayscale_p = 1.0f;
  Rng rg(1);
  const auto g = augment(img, gray, rg);
  for (std::size_t p = 0; p < 28 * 28; ++p) {
    REQUIRE(g.pixels[p * 3] == g.pixels[p * 3 + 1]);
    REQUIRE(g.pixels[p * 3] == g.pixels[p * 3 + 2]);
  }

  AugmentationPolicy flip = identity_policy(28);
  flip.horizontal_flip = true;
  flip.flip_p = 1.0f;
  Rng rf(1);
  const auto f = augment(img, flip, rf);
  CHECK(f.at(3, 0, 1) == img.at(3, 27, 1));

  AugmentationPolicy bad;
  bad.crop_scale_min = 0.0f;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("debias model shapes and checkpoint round trip") {
  DebiasModel mlp(colored_mnist_model(), 1);
  Rng rng(2);
  const Tensor x = random_tensor(rng, {5, 3, 28, 28}, 0.0, 1.0);
  Var h = mlp.encode(Var(x));
  CHECK(h.shape() == Shape{5, 100});
  CHECK(mlp.classify(h).shape() == Shape{5, 10});
  CHECK(mlp.project(h).shape() == Shape{5, 100});

  ModelConfig rc = corrupted_cifar10_model();
  rc.resnet_width = 4;
  rc.head_dims = {32, 32, 8};
  DebiasModel resnet(rc, 3);
  const Tensor xc = random_tensor(rng, {2, 3, 32, 32}, 0.0, 1.0);
  Var hc = resnet.encode(Var(xc));
  CHECK(hc.shape() == Shape{2, 32});
  CHECK(resnet.project(hc).shape() == Shape{2, 8});

  const auto dir = fresh_dir("model");
  resnet.save(dir);
  const auto loaded = DebiasModel::load(dir);
  const Tensor a = resnet.predict_logits(xc), b = loaded->predict_logits(xc);
  CHECK(std::equal(a.span().begin(), a.span().end(), b.span().begin()));
  CHECK(resnet.training());

  ModelConfig bad = colored_mnist_model();
  bad.head_dims = {64, 10};
  CHECK_THROWS_AS(DebiasModel(bad, 0), ConfigError);
}

TEST_CASE("with lambda 0 and identity views a cdvg step equals a double cross-entropy step") {
  const ModelConfig mc = tiny_mlp();
  DebiasModel a(mc, 8), b(mc, 8);
  nn::Adam opt_a(a.parameters(), {1e-3f, 0.9f, 0.999f, 1e-8f});
  nn::Adam opt_b(b.parameters(), {1e-3f, 0.9f, 0.999f, 1e-8f});
  TrainConfig config = tiny_train();
  config.lambda_cl = 0.0f;
  Rng data_rng(5);
  for (int step = 0; step < 3; ++step) {
    const Tensor x = random_tensor(data_rng, {6, 3, 8, 8}, 0.0, 1.0);
    const std::vector<int> labels{0, 1, 2, 3, 4, 5};
    Rng rng(mix_seed(99, step));
    const StepBatch batch = make_step_batch(x, labels, 10, {}, identity_policy(8), rng);
    REQUIRE(batch.view.same_values(x));
    REQUIRE(batch.view_trans.same_values(x));
    const CdvgLosses l = cdvg_step(a, opt_a, batch, config);
    const double v = vanilla_step(b, opt_b, x, labels, 2);
    CHECK(l.total == doctest::Approx(v).epsilon(1e-6));
    CHECK(l.ce_orig == l.ce_trans);
  }
  auto pa = a.named_parameters(), pb = b.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].first.rfind("head", 0) == 0) continue;  // unused by the vanilla step
    INFO(pa[i].first);
    CHECK(pa[i].second.value().same_values(pb[i].second.value()));
  }
}

TEST_CASE("total loss recomposes from independently recomputed components") {
  const ModelConfig mc = tiny_mlp();
  DebiasModel model(mc, 2);
  TrainConfig config = tiny_train();
  config.lambda_cl = 0.7f;
  Rng rng(6);
  const Tensor x = random_tensor(rng, {8, 3, 8, 8}, 0.0, 1.0);
  const std::vector<int> labels{0, 1, 2, 3, 4, 5, 6, 7};
  AugmentationPolicy policy = colored_mnist_policy();
  policy.output_size = 8;
  TransformFn shift = [](const Tensor& v, std::span<const int> t) {
    Tensor out = v.clone();
    for (std::size_t i = 0; i < t.size(); ++i) out[i * 192] = 0.1f * static_cast<float>(t[i]);
    return out;
  };
  const StepBatch batch = make_step_batch(x, labels, 10, shift, policy, rng);
  const CdvgLosses l = cdvg_objective(model, batch, config, nullptr);
  for (double v : {l.ce_orig, l.ce_trans, l.cl}) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }

  NoGradGuard guard;
  const Tensor h1 = model.encode(Var(batch.view)).value(), h2 = model.encode(Var(batch.view_trans)).value();
  const double ce1 = brute_ce(model.classify(Var(h1)).value(), labels);
  const double ce2 = brute_ce(model.classify(Var(h2)).value(), labels);
  const Tensor z1 = model.project(Var(h1)).value(), z2 = model.project(Var(h2)).value();
  const std::size_t d = z1.dim(1);
  std::vector<double> z;
  for (std::size_t i = 0; i < 8; ++i) {
    z.insert(z.end(), z1.span().begin() + i * d, z1.span().begin() + (i + 1) * d);
    z.insert(z.end(), z2.span().begin() + i * d, z2.span().begin() + (i + 1) * d);
  }
  const double cl = nt_xent<double>(z, 16, d, config.tau) / 8.0;
  CHECK(std::abs(l.total - (ce1 + ce2 + 0.7 * cl)) <= 1e-5 * std::max(1.0, l.total));
  CHECK(l.cl == doctest::Approx(cl).epsilon(1e-5));

  config.ablation = Ablation::no_CL;
  const CdvgLosses no_cl = cdvg_objective(model, batch, config, nullptr);
  CHECK(no_cl.cl == 0.0);
  CHECK(no_cl.total == doctest::Approx(ce1 + ce2).epsilon(1e-6));
}

TEST_CASE("the generator stays frozen across cdvg steps") {
  translator::TranslationModel g(tiny_arch(), 3);
  const auto before = flat(g.generator());
  const auto d_before = flat(g.discriminator());
  DebiasModel model(tiny_mlp(), 1);
  nn::Adam opt(model.parameters(), {1e-3f, 0.9f, 0.999f, 1e-8f});
  const TransformFn transform = translator_transform(g);
  AugmentationPolicy policy = colored_mnist_policy();
  policy.output_size = 8;
  Rng rng(2);
  for (int step = 0; step < 4; ++step) {
    const Tensor x = random_tensor(rng, {4, 3, 8, 8}, 0.0, 1.0);
    const StepBatch batch = make_step_batch(x, std::vector<int>{1, 2, 3, 4}, 10, transform, policy, rng);
    for (float v : batch.x_trans.span()) REQUIRE((v >= 0.0f && v <= 1.0f));
    cdvg_step(model, opt, batch, tiny_train());
  }
  CHECK(flat(g.generator()) == before);
  CHECK(flat(g.discriminator()) == d_before);
}

TEST_CASE("translation cache returns what the translator returns") {
  translator::TranslationModel g(tiny_arch(), 3);
  const auto ds = blob_dataset(data::Split::train, 30);
  const TranslationCache cache(g, ds, 7);
  CHECK(TranslationCache::bytes_needed(ds, 10) == 30 * 10 * 192 * sizeof(float));
  const std::vector<std::size_t> idx{4, 0, 29, 13, 13};
  const std::vector<int> targets{9, 2, 0, 5, 6};
  const Tensor cached = cache.lookup(idx, targets);
  const Tensor direct = translator_transform(g)(data::pack_images(ds, idx, data::PixelRange::unit), targets);
  CHECK(cached.same_values(direct));
  CHECK_THROWS_AS(cache.lookup(idx, std::vector<int>{9, 2, 0, 5, 10}), std::out_of_range);
}

TEST_CASE("translation cache survives a disk round trip and rejects foreign keys") {
  translator::TranslationModel g(tiny_arch(), 3);
  const auto ds = blob_dataset(data::Split::train, 12);
  const TranslationCache cache(g, ds, 7);
  const auto path = fresh_dir("cache") / "cache.bin";
  cache.save(path, "g:data");
  const auto loaded = TranslationCache::load(path, "g:data", ds, 10);
  REQUIRE(loaded);
  const std::vector<std::size_t> idx{0, 5, 11, 3};
  const std::vector<int> targets{1, 9, 0, 4};
  CHECK(loaded->lookup(idx, targets).same_values(cache.lookup(idx, targets)));
  CHECK_FALSE(TranslationCache::load(path, "other:data", ds, 10));
  CHECK_FALSE(TranslationCache::load(path, "g:data", ds, 9));
  CHECK_FALSE(TranslationCache::load(path, "g:data", blob_dataset(data::Split::train, 11), 10));
  CHECK_FALSE(TranslationCache::load(path.parent_path() / "missing.bin", "g:data", ds, 10));
}

TEST_CASE("training runs write metrics, checkpoints and sidecars") {
  const auto train = blob_dataset(data::Split::train);
  const auto test = blob_dataset(data::Split::unbiased_test, 40);
  translator::TranslationModel g(tiny_arch(), 3);
  AugmentationPolicy policy = colored_mnist_policy();
  policy.output_size = 8;

  const auto dir = fresh_dir("cdvg");
  RunContext ctx{"cdvg", {{"generator", "abc"}}, {{"profile", "tiny"}}, {}};
  std::size_t seen = 0;
  ctx.on_epoch = [&](const eval::EpochRecord&) { ++seen; };
  const RunResult run = train_cdvg(train, test, &g, tiny_mlp(), tiny_train(), policy, dir, ctx);
  CHECK(seen == 2);
  REQUIRE(run.metrics.epochs.size() == 2);
  const eval::RunMetrics read = eval::read_run(dir);
  CHECK(read.config_hash == run.metrics.config_hash);
  CHECK(read.epochs.size() == 2);
  CHECK(read.epochs[1].test_acc == run.metrics.last().test_acc);

  const auto model = DebiasModel::load(dir / "model");
  CHECK(std::abs(eval::unbiased_accuracy(*model, test) - read.last().test_acc) <= 1e-6);

  std::ifstream ndjson(dir / "metrics.ndjson");
  std::string line;
  std::getline(ndjson, line);
  const auto keys = nlohmann::json::parse(line);
  for (const char* k : {"epoch", "ce_orig", "ce_trans", "cl", "test_acc", "lr", "wall_s"}) CHECK(keys.contains(k));

  const auto vdir = fresh_dir("vanilla");
  train_vanilla(train, test, tiny_mlp(), tiny_train(), vdir, {"vanilla", {}, {}, {}});
  std::ifstream vjson(vdir / "metrics.ndjson");
  std::getline(vjson, line);
  const auto vkeys = nlohmann::json::parse(line);
  CHECK(vkeys.size() == keys.size());
  for (const auto& [k, v] : keys.items()) CHECK(vkeys.contains(k));

  auto seed2 = tiny_train();
  seed2.seed = 11;
  const RunResult other = train_cdvg(train, test, &g, tiny_mlp(), seed2, policy, fresh_dir("cdvg2"), ctx);
  CHECK(other.metrics.config_hash == run.metrics.config_hash);

  auto no_g = tiny_train();
  no_g.ablation = Ablation::no_G;
  CHECK_NOTHROW(train_cdvg(train, test, nullptr, tiny_mlp(), no_g, policy, fresh_dir("nog"), ctx));
}

TEST_CASE("training validates its inputs") {
  const auto train = blob_dataset(data::Split::train);
  const auto test = blob_dataset(data::Split::unbiased_test, 40);
  AugmentationPolicy policy = colored_mnist_policy();
  policy.output_size = 8;
  const auto dir = fresh_dir("invalid");
  const RunContext ctx{"cdvg", {}, {}, {}};

  auto arch = tiny_arch();
  arch.num_domains = 4;
  translator::TranslationModel g4(arch, 1);
  CHECK_THROWS_AS(train_cdvg(train, test, &g4, tiny_mlp(), tiny_train(), policy, dir, ctx), ConfigError);
  CHECK_THROWS_AS(train_cdvg(train, test, nullptr, tiny_mlp(), tiny_train(), policy, dir, ctx), ConfigError);
  CHECK_THROWS_AS(train_vanilla(test, test, tiny_mlp(), tiny_train(), dir, ctx), ProvenanceError);
  CHECK_THROWS_AS(train_vanilla(train, train, tiny_mlp(), tiny_train(), dir, ctx), ProvenanceError);
  CHECK_THROWS_AS(parse_ablation("none"), ConfigError);
  CHECK(parse_ablation("no-g") == Ablation::no_G);
  CHECK(parse_ablation("no-cl") == Ablation::no_CL);
  TrainConfig bad;
  bad.tau = 0.0f;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
