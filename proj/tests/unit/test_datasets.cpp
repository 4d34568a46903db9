#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cdvg/core/errors.hpp"
#include "cdvg/data/dataset.hpp"
#include "cdvg/data/dataset_io.hpp"
#include "doctest.h"

using namespace cdvg;
using namespace cdvg::data;

namespace {

// Tiny stand-in digits: labels cycle 0..9, a few foreground pixels each.
SourceImages tiny_digits(std::size_t n) {
  SourceImages s;
  for (std::size_t i = 0; i < n; ++i) {
    Image8 img(3, 3, 1);
    img.pixels[4] = 255;
    img.pixels[i % 9] = static_cast<std::uint8_t>(40 + i % 200);
    s.images.push_back(img);
    s.labels.push_back(static_cast<int>(i % 10));
  }
  s.origin = "tiny";
  return s;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "cdvg_test_datasets" / name;
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Pearson statistic of observed counts against a uniform expectation.
double chi_square_uniform(const std::vector<double>& counts) {
  double total = 0.0;
  for (double c : counts) total += c;
  const double expected = total / counts.size();
  double stat = 0.0;
  for (double c : counts) stat += (c - expected) * (c - expected) / expected;
  return stat;
}

}  // namespace

TEST_CASE("train split has exactly round(rho N) bias-free samples") {
  for (std::size_t n : {1000u, 60000u, 1234u}) {
    const SourceImages src = tiny_digits(n);
    for (double rho : {0.0, 0.005, 0.01, 0.02, 0.05, 0.333, 1.0}) {
      DatasetConfig config;
      config.ratio = rho;
      config.seed = 11;
      const BiasedDataset ds = build_colored_mnist(src, config);
      INFO("n=" << n << " rho=" << rho);
      CHECK(ds.bias_free_count() == static_cast<std::size_t>(std::round(rho * static_cast<double>(n))));
      for (const auto& s : ds.samples) {
        REQUIRE(s.bias_free == (s.bias_label != s.class_label));
        REQUIRE(s.bias_label >= 0);
        REQUIRE(s.bias_label < 10);
      }
    }
  }
  DatasetConfig config;
  config.ratio = 0.005;
  CHECK(build_colored_mnist(tiny_digits(60000), config).bias_free_count() == 300);
}

TEST_CASE("regeneration with the same config is bit-identical, other seeds differ") {
  const SourceImages src = tiny_digits(500);
  DatasetConfig config;
  config.ratio = 0.05;
  config.seed = 3;
  const BiasedDataset a = build_colored_mnist(src, config);
  const BiasedDataset b = build_colored_mnist(src, config);
  CHECK(a.samples == b.samples);
  config.seed = 4;
  CHECK(build_colored_mnist(src, config).samples != a.samples);
}

TEST_CASE("unbiased split is per-class uniform under a chi-square test") {
  const SourceImages src = tiny_digits(20000);
  DatasetConfig config;
  config.seed = 5;
  const BiasedDataset ds = build_colored_mnist(src, config, Split::unbiased_test);
  std::vector<std::vector<double>> counts(10, std::vector<double>(10, 0.0));
  for (const auto& s : ds.samples) counts[s.class_label][s.bias_label] += 1.0;
  constexpr double kCritical = 21.665994;  // chi-square, 9 dof, alpha 0.01
  for (std::size_t k = 0; k < 10; ++k) {
    INFO("class " << k);
    CHECK(chi_square_uniform(counts[k]) < kCritical);
  }
}

TEST_CASE("aligned colored digits decode to their palette color at zero jitter") {
  const SourceImages src = tiny_digits(300);
  DatasetConfig config;
  config.color_jitter = 0.0;
  config.ratio = 0.1;
  const BiasedDataset ds = build_colored_mnist(src, config);
  const auto palette = default_palette();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples[i];
    double sum[3] = {0, 0, 0}, intensity = 0.0;
    for (std::size_t p = 0; p < 9; ++p) {
      const double g = src.images[i].pixels[p];
      if (g == 0) continue;
      intensity += g;
      for (int c = 0; c < 3; ++c) sum[c] += s.image.pixels[p * 3 + c];
    }
    int best = -1;
    double best_d = 1e18;
    for (std::size_t k = 0; k < palette.size(); ++k) {
      double d = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double diff = sum[c] / intensity * 255.0 - palette[k][c];
        d += diff * diff;
      }
      if (d < best_d) best_d = d, best = static_cast<int>(k);
    }
    REQUIRE(best == s.bias_label);
  }
}

TEST_CASE("background stays black and jitter is bounded") {
  const SourceImages src = tiny_digits(200);
  DatasetConfig config;
  const BiasedDataset ds = build_colored_mnist(src, config);
  const auto palette = default_palette();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t p = 0; p < 9; ++p) {
      if (src.images[i].pixels[p] == 0) {
        for (int c = 0; c < 3; ++c) REQUIRE(ds.samples[i].image.pixels[p * 3 + c] == 0);
      }
    }
    if (i % 9 == 4) continue;
    const auto& color = palette[ds.samples[i].bias_label];
    for (int c = 0; c < 3; ++c) {
      REQUIRE(std::abs(ds.samples[i].image.pixels[4 * 3 + c] - color[c]) <= 0.15 * 255 + 1);
    }
  }
}

TEST_CASE("configuration errors") {
  const SourceImages src = tiny_digits(20);
  DatasetConfig config;
  config.ratio = 1.5;
  CHECK_THROWS_AS(build_colored_mnist(src, config), ConfigError);
  config.ratio = -0.1;
  CHECK_THROWS_AS(build_colored_mnist(src, config), ConfigError);
  config.ratio = 0.0;
  config.palette.pop_back();
  CHECK_THROWS_AS(build_colored_mnist(src, config), ConfigError);
  config.palette = default_palette();
  config.palette[1] = config.palette[0];
  CHECK_THROWS_AS(build_colored_mnist(src, config), ConfigError);

  DatasetConfig cifar;
  cifar.name = DatasetName::corrupted_cifar10;
  SourceImages objects = render_objects(20, 1);
  objects.num_classes = 9;
  CHECK_THROWS_AS(build_corrupted_cifar10(objects, cifar), ConfigError);
  CHECK_THROWS_AS(build_corrupted_cifar10(src, cifar), ConfigError);
  CHECK_THROWS_AS(parse_dataset_name("svhn"), ConfigError);
}

TEST_CASE("corrupted cifar maps class k to corruption k") {
  const SourceImages src = render_objects(200, 2);
  DatasetConfig config;
  config.name = DatasetName::corrupted_cifar10;
  config.ratio = 0.05;
  const BiasedDataset ds = build_corrupted_cifar10(src, config);
  CHECK(ds.bias_free_count() == 10);
  for (const auto& s : ds.samples) {
    if (!s.bias_free) CHECK(s.bias_label == s.class_label);
    CHECK(s.image.height == 32);
  }
  // Sample 0 with its aligned corruption reproduces the stored image.
  std::size_t i = 0;
  while (ds.samples[i].bias_free) ++i;
  CHECK(ds.samples[i].image != src.images[i]);
}

TEST_CASE("exclude_bias_free drops exactly the bias-free samples") {
  DatasetConfig config;
  config.ratio = 0.005;
  const BiasedDataset ds = build_colored_mnist(tiny_digits(2000), config);
  const BiasedDataset zero = exclude_bias_free(ds);
  CHECK(zero.size() == 1990);
  CHECK(zero.bias_free_count() == 0);
  CHECK(zero.config.ratio == 0.0);
  CHECK(zero.config.construction.rfind("exclude_bias_free", 0) == 0);
}

TEST_CASE("write/read round-trip is lossless and manifests are reproducible") {
  DatasetConfig config;
  config.ratio = 0.02;
  config.seed = 9;
  const BiasedDataset ds = build_colored_mnist(render_digits(150, 1), config);
  const auto a = fresh_dir("a"), b = fresh_dir("b");
  write_dataset(ds, a);
  write_dataset(build_colored_mnist(render_digits(150, 1), config), b);
  CHECK(slurp(a / "manifest.csv") == slurp(b / "manifest.csv"));
  CHECK(slurp(a / "config.json") == slurp(b / "config.json"));

  const BiasedDataset back = read_dataset(a);
  CHECK(back.samples == ds.samples);
  CHECK(back.config.seed == 9);
  CHECK(back.config.ratio == 0.02);
  CHECK(back.split == Split::train);
  CHECK(read_dataset_metadata(a)["canonical_ratio"] == true);
  CHECK(slurp(a / "manifest.csv").rfind("path,class_label,bias_label,bias_free\n", 0) == 0);
}

TEST_CASE("reading a damaged dataset reports what is wrong") {
  DatasetConfig config;
  const BiasedDataset ds = build_colored_mnist(render_digits(30, 2), config);
  const auto dir = fresh_dir("damaged");
  write_dataset(ds, dir);

  std::filesystem::remove(dir / "images" / "000007.png");
  try {
    read_dataset(dir);
    FAIL("expected CorruptionError");
  } catch (const CorruptionError& e) {
    CHECK(std::string(e.what()).find("000007.png") != std::string::npos);
  }

  write_dataset(ds, dir);
  write_png(dir / "images" / "000003.png", ds.samples[4].image);
  CHECK_THROWS_AS(read_dataset(dir), CorruptionError);

  write_dataset(ds, dir);
  {
    std::ofstream out(dir / "manifest.csv", std::ios::app);
    out << "images/000000.png,1,1,0\n";
  }
  CHECK_THROWS_AS(read_dataset(dir), CorruptionError);
  CHECK_THROWS_AS(read_dataset(fresh_dir("nothing")), MissingArtifactError);
}

TEST_CASE("idx and cifar readers parse their binary formats") {
  const auto dir = fresh_dir("raw");
  std::filesystem::create_directories(dir);
  {
    std::ofstream img(dir / "train-images-idx3-ubyte", std::ios::binary);
    const unsigned char header[16] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3};
    img.write(reinterpret_cast<const char*>(header), 16);
    for (int i = 0; i < 12; ++i) img.put(static_cast<char>(i * 10));
    std::ofstream lab(dir / "train-labels-idx1-ubyte", std::ios::binary);
    const unsigned char lheader[8] = {0, 0, 8, 1, 0, 0, 0, 2};
    lab.write(reinterpret_cast<const char*>(lheader), 8);
    lab.put(7);
    lab.put(2);
  }
  const SourceImages digits = digit_source(dir, true, 0, 0);
  REQUIRE(digits.size() == 2);
  CHECK(digits.labels == std::vector<int>{7, 2});
  CHECK(digits.images[1].height == 2);
  CHECK(digits.images[1].width == 3);
  CHECK(digits.images[1].pixels[0] == 60);

  const auto batch = dir / "batch.bin";
  {
    std::ofstream out(batch, std::ios::binary);
    out.put(4);
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 1024; ++p) out.put(static_cast<char>(c * 100 + (p % 7)));
  }
  const SourceImages objects = load_cifar10_batches({batch});
  REQUIRE(objects.size() == 1);
  CHECK(objects.labels[0] == 4);
  CHECK(objects.images[0].at(0, 1, 2) == 201);
}

TEST_CASE("procedural sources are balanced and deterministic") {
  const SourceImages d = render_digits(100, 3);
  std::map<int, int> counts;
  for (int l : d.labels) ++counts[l];
  for (auto& [label, count] : counts) CHECK(count == 10);
  CHECK(d.images == render_digits(100, 3).images);
  std::size_t lit = 0;
  for (auto v : d.images[0].pixels) lit += v > 128;
  CHECK(lit > 20);
  const SourceImages o = render_objects(30, 3);
  CHECK(o.images[0].channels == 3);
  CHECK(o.images == render_objects(30, 3).images);
}
