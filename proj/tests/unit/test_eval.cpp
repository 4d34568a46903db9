#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cdvg/core/errors.hpp"
#include "cdvg/eval/eval.hpp"
#include "doctest.h"

using namespace cdvg;
using namespace cdvg::eval;

namespace {

// Emits logits for a fixed label sequence, consumed in call order.
class ScriptedClassifier : public debias::Classifier {
 public:
  explicit ScriptedClassifier(std::vector<int> answers) : answers_(std::move(answers)) {}
  std::size_t num_classes() const override { return 10; }
  Tensor predict_logits(const Tensor& x) override {
    Tensor out(Shape{x.dim(0), 10}, 0.0f);
    for (std::size_t i = 0; i < x.dim(0); ++i) out[i * 10 + answers_.at(next_++)] = 1.0f;
    return out;
  }

 private:
  std::vector<int> answers_;
  std::size_t next_ = 0;
};

data::BiasedDataset balanced_test(std::size_t n) {
  data::SourceImages s;
  for (std::size_t i = 0; i < n; ++i) {
    data::Image8 img(4, 4, 1);
    img.pixels[i % 16] = 200;
    s.images.push_back(img);
    s.labels.push_back(static_cast<int>(i % 10));
  }
  data::DatasetConfig config;
  return data::build_colored_mnist(s, config, data::Split::unbiased_test);
}

RunMetrics run(const std::string& method, double ratio, std::uint64_t seed, std::vector<double> accs,
               const std::string& hash = "h") {
  RunMetrics r;
  r.dataset = "colored_mnist";
  r.ratio = ratio;
  r.method = method;
  r.seed = seed;
  r.config_hash = hash + method;
  for (std::size_t i = 0; i < accs.size(); ++i) r.epochs.push_back({i + 1, 0, 0, 0, accs[i], 0, 0});
  return r;
}

const ReportCell& cell(const AggregateReport& r, const std::string& method, double ratio_percent) {
  return *std::find_if(r.cells.begin(), r.cells.end(), [&](const ReportCell& c) {
    return c.method == method && c.ratio_percent == ratio_percent;
  });
}

}  // namespace

TEST_CASE("unbiased accuracy of perfect and constant predictors") {
  const auto test = balanced_test(100);
  std::vector<int> truth;
  for (const auto& s : test.samples) truth.push_back(s.class_label);
  ScriptedClassifier perfect(truth);
  CHECK(unbiased_accuracy(perfect, test, 7) == 1.0);
  ScriptedClassifier constant(std::vector<int>(100, 3));
  CHECK(unbiased_accuracy(constant, test, 64) == doctest::Approx(0.1).epsilon(1e-12));
  data::BiasedDataset empty;
  CHECK_THROWS_AS(unbiased_accuracy(constant, empty), std::invalid_argument);
}

TEST_CASE("aggregation arithmetic") {
  const auto single = aggregate_runs({run("cdvg", 0.005, 1, {0.4, 0.9, 0.8})});
  REQUIRE(single.cells.size() == 1);
  CHECK(single.cells[0].best_mean == doctest::Approx(90.0));
  CHECK(single.cells[0].last_mean == doctest::Approx(80.0));
  CHECK(single.cells[0].best_std == 0.0);
  CHECK(single.cells[0].last_std == 0.0);
  CHECK(single.cells[0].n_runs == 1);
  CHECK(single.cells[0].ratio_percent == doctest::Approx(0.5));

  const auto three = aggregate_runs({run("vanilla", 0.01, 1, {0.05, 0.10}), run("vanilla", 0.01, 2, {0.20}),
                                     run("vanilla", 0.01, 3, {0.30, 0.30})});
  CHECK(three.cells[0].last_mean == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(three.cells[0].last_std == doctest::Approx(10.0).epsilon(1e-12));

  const auto monotone = aggregate_runs({run("cdvg", 0.0, 1, {0.1, 0.2, 0.5, 0.7})});
  CHECK(monotone.cells[0].best_mean == monotone.cells[0].last_mean);

  RunMetrics ties = run("cdvg", 0.0, 1, {0.3, 0.7, 0.7, 0.2});
  CHECK(ties.best().epoch == 2);
}

TEST_CASE("aggregation is order independent and best dominates last") {
  std::vector<RunMetrics> runs;
  Rng rng(4);
  for (const char* method : {"vanilla", "cdvg", "cdvg-no-g"}) {
    for (double ratio : {0.0, 0.005, 0.02}) {
      for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        std::vector<double> accs;
        for (int e = 0; e < 5; ++e) accs.push_back(rng.uniform());
        runs.push_back(run(method, ratio, seed, accs));
      }
    }
  }
  const auto base = aggregate_runs(runs);
  for (int trial = 0; trial < 5; ++trial) {
    rng.shuffle(runs.begin(), runs.end());
    CHECK(aggregate_runs(runs) == base);
  }
  for (const auto& c : base.cells) CHECK(c.best_mean >= c.last_mean);

  runs.push_back(run("cdvg", 0.0, 9, {0.5}, "other"));
  CHECK_THROWS_AS(aggregate_runs(runs), ProvenanceError);
}

TEST_CASE("report rows follow the ratio order and csv round-trips") {
  std::vector<RunMetrics> runs;
  for (double ratio : {0.05, 0.0, 0.02, 0.005, 0.01}) {
    runs.push_back(run("cdvg", ratio, 1, {0.5, 0.61234}));
    runs.push_back(run("vanilla", ratio, 1, {0.2, 0.1}));
  }
  const auto report = aggregate_runs(runs);
  std::vector<double> order;
  for (const auto& c : report.cells) {
    if (c.method == "cdvg") order.push_back(c.ratio_percent);
  }
  CHECK(order == std::vector<double>{0.0, 0.5, 1.0, 2.0, 5.0});
  CHECK(report.cells[0].method == "vanilla");

  const auto dir = std::filesystem::temp_directory_path() / "cdvg_test_eval";
  std::filesystem::create_directories(dir);
  emit_report(report, ReportFormat::csv, dir / "report.csv");
  CHECK(read_report_csv(dir / "report.csv") == rounded(report));
  CHECK(cell(read_report_csv(dir / "report.csv"), "cdvg", 0.5).last_mean == 61.23);

  const std::string text = render_report(report, ReportFormat::text);
  CHECK(text.find("vanilla") < text.find("cdvg"));
  CHECK(text.find("61.23 +- 0.00") != std::string::npos);

  emit_report({}, ReportFormat::csv, dir / "empty.csv");
  std::ifstream in(dir / "empty.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "dataset,ratio,method,best_mean,best_std,last_mean,last_std,n_runs\n");
  CHECK(read_report_csv(dir / "empty.csv").cells.empty());
  CHECK_THROWS_AS(parse_report_format("xlsx"), ConfigError);
}

TEST_CASE("run metrics must be contiguous and in range") {
  RunMetrics gap = run("cdvg", 0.0, 1, {0.1, 0.2});
  gap.epochs[1].epoch = 3;
  CHECK_THROWS_AS(gap.validate(), CorruptionError);
  RunMetrics out_of_range = run("cdvg", 0.0, 1, {1.5});
  CHECK_THROWS_AS(out_of_range.validate(), CorruptionError);
  CHECK_THROWS_AS(read_run("/nonexistent/run"), MissingArtifactError);
}
