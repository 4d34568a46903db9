#include <cmath>
#include <filesystem>

#include "cdvg/core/errors.hpp"
#include "cdvg/data/batch.hpp"
#include "cdvg/diagnostics/diagnostics.hpp"
#include "doctest.h"

using namespace cdvg;
using namespace cdvg::diagnostics;

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

data::BiasedDataset blob_dataset(data::Split split, std::size_t n) {
  data::DatasetConfig config;
  config.ratio = 0.05;
  config.seed = 3;
  return data::build_colored_mnist(blob_digits(n), config, split);
}

debias::ModelConfig tiny_mlp() {
  debias::ModelConfig c;
  c.image_size = 8;
  c.mlp_hidden = 32;
  c.head_dims = {32, 8};
  return c;
}

OracleConfig quick_oracle() {
  OracleConfig c;
  c.epochs = 30;
  c.batch_size = 32;
  c.lr = 3e-3f;
  c.max_shift = 0;
  c.seed = 5;
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

// Paints every lit pixel with the target's palette colour.
class RecolorTranslator : public translator::Translator {
 public:
  explicit RecolorTranslator(std::vector<data::Rgb> palette) : palette_(std::move(palette)) {}
  std::size_t num_domains() const override { return palette_.size(); }
  Tensor translate(const Tensor& x, std::span<const int> domains) const override {
    const std::size_t n = x.dim(0), plane = x.dim(2) * x.dim(3);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < n; ++i) {
      const auto& color = palette_.at(static_cast<std::size_t>(domains[i]));
      std::vector<float> stroke(plane, 0.0f);
      float peak = 1e-6f;
      for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t c = 0; c < 3; ++c) stroke[p] = std::max(stroke[p], (x[(i * 3 + c) * plane + p] + 1.0f) / 2.0f);
        peak = std::max(peak, stroke[p]);
      }
      for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
          out[(i * 3 + c) * plane + p] = 2.0f * stroke[p] / peak * color[c] / 255.0f - 1.0f;
        }
      }
    }
    return out;
  }

 private:
  std::vector<data::Rgb> palette_;
};

struct Oracles {
  OracleClassifier bias, signal;
};

Oracles& shared_oracles() {
  static Oracles o = [] {
    const auto unbiased = blob_dataset(data::Split::unbiased_train, 600);
    return Oracles{train_oracle(unbiased, LabelKind::bias, tiny_mlp(), quick_oracle()),
                   train_oracle(unbiased, LabelKind::signal, tiny_mlp(), quick_oracle())};
  }();
  return o;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "cdvg_test_diagnostics" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

ProbeSet blob_probe() {
  return make_probe_set(blob_dataset(data::Split::unbiased_test, 200), 120, 10, 9);
}

}  // namespace

TEST_CASE("label kinds parse and reject unknown names") {
  CHECK(parse_label_kind("bias") == LabelKind::bias);
  CHECK(parse_label_kind("signal") == LabelKind::signal);
  CHECK(to_string(LabelKind::signal) == "signal");
  CHECK_THROWS_AS(parse_label_kind("colour"), ConfigError);
}

TEST_CASE("oracles learn colour and shape from unbiased data") {
  auto& o = shared_oracles();
  CHECK(o.bias.held_out_accuracy > 0.95);
  CHECK(o.signal.held_out_accuracy > 0.95);
  CHECK(o.bias.sidecar.at("label_kind") == "bias");
  CHECK(o.bias.provenance.size() == 64);
}

TEST_CASE("oracles refuse the biased train split") {
  const auto biased = blob_dataset(data::Split::train, 100);
  CHECK_THROWS_AS(train_oracle(biased, LabelKind::bias, tiny_mlp(), quick_oracle()), ProvenanceError);
  auto zero = biased;
  zero.config.ratio = 0.0;
  CHECK_THROWS_AS(train_oracle(zero, LabelKind::signal, tiny_mlp(), quick_oracle()), ProvenanceError);
}

TEST_CASE("oracle configuration is validated") {
  const auto unbiased = blob_dataset(data::Split::unbiased_train, 50);
  auto bad = quick_oracle();
  bad.held_out_fraction = 1.0;
  CHECK_THROWS_AS(train_oracle(unbiased, LabelKind::bias, tiny_mlp(), bad), ConfigError);
  auto model = tiny_mlp();
  model.num_classes = 5;
  CHECK_THROWS_AS(train_oracle(unbiased, LabelKind::bias, model, quick_oracle()), ConfigError);
}

TEST_CASE("oracle save and load preserve predictions") {
  auto& o = shared_oracles();
  const auto dir = fresh_dir("oracle");
  o.bias.save(dir);
  auto loaded = OracleClassifier::load(dir);
  CHECK(loaded.label_kind == LabelKind::bias);
  CHECK(loaded.provenance == o.bias.provenance);
  const auto probe = blob_probe();
  CHECK(loaded.predict_logits(probe.images).same_values(o.bias.predict_logits(probe.images)));
  CHECK_THROWS_AS(OracleClassifier::load(dir / "absent"), MissingArtifactError);
}

TEST_CASE("outlier batches stay in the unit range") {
  Rng rng(1);
  const Tensor t = outlier_batch(40, 3, 8, rng);
  CHECK(t.shape() == Shape{40, 3, 8, 8});
  for (float v : t.span()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("untrained generator probes at chance level") {
  auto& o = shared_oracles();
  const auto probe = blob_probe();
  const double bound = std::log(10.0) + 0.5;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    translator::TranslationModel g(tiny_arch(), seed);
    const auto p = probe_translator(g, o.bias, o.signal, probe);
    CHECK(p.bias_loss >= 0.0);
    CHECK(p.signal_loss >= 0.0);
    CHECK(p.bias_loss <= bound);
    CHECK(p.signal_loss <= bound);
  }
}

TEST_CASE("recolouring generator drives the bias loss to zero") {
  auto& o = shared_oracles();
  const auto probe = blob_probe();
  RecolorTranslator g(data::default_palette());
  const auto p = probe_translator(g, o.bias, o.signal, probe);
  CHECK(p.bias_loss < 0.1);
  CHECK(p.signal_loss > 1.0);
  CHECK(p.bias_loss < p.signal_loss);
  CHECK(palette_decode_rate(g, probe.images, data::default_palette()) == doctest::Approx(1.0));
}

TEST_CASE("probe curves are reproducible and ordered by iteration") {
  auto& o = shared_oracles();
  const auto dir = fresh_dir("ckpt");
  std::vector<std::pair<std::size_t, std::filesystem::path>> ckpts;
  for (std::size_t it : {500u, 0u, 250u}) {
    translator::TranslationModel g(tiny_arch(), it + 1);
    const auto path = dir / ("G_" + std::to_string(it) + ".ckpt");
    g.save_generator(path);
    ckpts.emplace_back(it, path);
  }
  const auto probe = blob_probe();
  const auto a = measure_bias_signal_losses(ckpts, tiny_arch(), o.bias, o.signal, probe);
  const auto b = measure_bias_signal_losses(ckpts, tiny_arch(), o.bias, o.signal, blob_probe());
  REQUIRE(a.points.size() == 3);
  CHECK(a.points[0].iteration == 0);
  CHECK(a.points[2].iteration == 500);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.points[i].bias_loss == b.points[i].bias_loss);
    CHECK(a.points[i].signal_loss == b.points[i].signal_loss);
  }

  auto wide = tiny_arch();
  wide.num_domains = 5;
  CHECK_THROWS_AS(measure_bias_signal_losses(ckpts, wide, o.bias, o.signal, probe), ConfigError);
}

TEST_CASE("probe sets draw fixed targets from the seed") {
  const auto a = blob_probe();
  const auto b = blob_probe();
  CHECK(a.images.same_values(b.images));
  CHECK(a.targets == b.targets);
  CHECK(a.images.dim(0) == 120);
  const auto c = make_probe_set(blob_dataset(data::Split::unbiased_test, 200), 120, 10, 10);
  CHECK(c.targets != a.targets);
}

TEST_CASE("probe csv round-trips and the chart is deterministic") {
  ProbeCurve curve{{{0, 2.3, 2.31}, {250, 1.2, 2.0}, {500, 0.4, 1.9}}};
  const auto dir = fresh_dir("csv");
  write_probe_csv(curve, dir / "probe.csv");
  const auto back = read_probe_csv(dir / "probe.csv");
  REQUIRE(back.points.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.points[i].iteration == curve.points[i].iteration);
    CHECK(back.points[i].bias_loss == curve.points[i].bias_loss);
    CHECK(back.points[i].signal_loss == curve.points[i].signal_loss);
  }
  const auto chart = render_probe_chart(curve);
  CHECK(chart.width == 640);
  CHECK(chart.height == 400);
  CHECK(data::encode_png(chart) == data::encode_png(render_probe_chart(curve)));

  ProbeCurve unordered{{{250, 1.0, 1.0}, {250, 1.0, 1.0}}};
  CHECK_THROWS_AS(unordered.validate(), ConfigError);
  ProbeCurve nan{{{0, std::nan(""), 1.0}}};
  CHECK_THROWS_AS(nan.validate(), ConfigError);
  CHECK_THROWS_AS(read_probe_csv(dir / "absent.csv"), MissingArtifactError);
}

TEST_CASE("transformation grid lays out samples by domain") {
  const auto probe = make_probe_set(blob_dataset(data::Split::unbiased_test, 40), 8, 10, 1);
  translator::IdentityTranslator identity(10);
  const std::size_t pad = 2;
  const auto grid = transformation_grid(identity, probe.images, pad);
  CHECK(grid.height == 8 * 8 + 9 * pad);
  CHECK(grid.width == 11 * 8 + 12 * pad);
  for (std::size_t col = 1; col <= 10; ++col) {
    for (std::size_t y = 0; y < grid.height; ++y) {
      for (std::size_t x = 0; x < 8; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          REQUIRE(grid.at(y, pad + col * (8 + pad) + x, c) == grid.at(y, pad + x, c));
        }
      }
    }
  }

  translator::TranslationModel g(tiny_arch(), 3);
  const auto dir = fresh_dir("grid");
  render_transformation_grid(g, probe.images, dir / "a.png");
  render_transformation_grid(g, probe.images, dir / "b.png");
  CHECK(data::read_file(dir / "a.png") == data::read_file(dir / "b.png"));
  CHECK(data::read_png(dir / "a.png") == transformation_grid(g, probe.images));
}

TEST_CASE("palette decoding recovers the tint of coloured strokes") {
  const auto palette = data::default_palette();
  const auto ds = blob_dataset(data::Split::unbiased_test, 50);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t idx[1] = {i};
    const Tensor x = data::pack_images(ds, idx, data::PixelRange::unit);
    hits += decode_palette(x.span(), 8, 8, palette) == ds.samples[i].bias_label ? 1 : 0;
  }
  CHECK(hits == ds.size());
  const std::vector<float> dark(3 * 64, 0.0f);
  CHECK(decode_palette(dark, 8, 8, palette) == -1);
}
