#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cdvg/data/dataset.hpp"
#include "cdvg/debias/model.hpp"
#include "json.hpp"

namespace cdvg::eval {

struct EpochRecord {
  std::size_t epoch = 0;
  double ce_orig = 0.0;
  double ce_trans = 0.0;
  double cl = 0.0;
  double test_acc = 0.0;  // fraction in [0, 1]
  double lr = 0.0;
  double wall_s = 0.0;
};

nlohmann::json to_json(const EpochRecord& record);
EpochRecord epoch_from_json(const nlohmann::json& j);

struct RunMetrics {
  std::string dataset;
  double ratio = 0.0;
  std::string method;
  std::uint64_t seed = 0;
  std::string config_hash;  // identical across seeds of one configuration
  std::vector<EpochRecord> epochs;

  // Epochs contiguous from 1, accuracies in [0, 1]; throws CorruptionError.
  void validate() const;
  // Highest test accuracy and the earliest epoch reaching it.
  const EpochRecord& best() const;
  const EpochRecord& last() const { return epochs.back(); }
};

// Reads run.json and metrics.ndjson from a training run directory.
RunMetrics read_run(const std::filesystem::path& run_dir);

// Top-1 accuracy over the whole set. Throws std::invalid_argument when empty.
double unbiased_accuracy(debias::Classifier& model, const data::BiasedDataset& test, std::size_t batch = 500);

// One (dataset, ratio, method) table cell. Accuracies in percent, ratio in
// percent.
struct ReportCell {
  std::string dataset;
  double ratio_percent = 0.0;
  std::string method;
  double best_mean = 0.0, best_std = 0.0;
  double last_mean = 0.0, last_std = 0.0;
  std::size_t n_runs = 0;

  bool operator==(const ReportCell&) const = default;
};

struct AggregateReport {
  std::vector<ReportCell> cells;  // ordered by dataset, ratio, method
  bool operator==(const AggregateReport&) const = default;
};

// Per run: best = max over epochs, last = final epoch; then mean and sample
// standard deviation (0 for a single run) across runs of a cell. Throws
// ProvenanceError when runs of one cell carry different config hashes.
AggregateReport aggregate_runs(const std::vector<RunMetrics>& runs);

// Rounds every statistic to the two decimals the CSV carries.
AggregateReport rounded(const AggregateReport& report);

enum class ReportFormat { csv, text };
ReportFormat parse_report_format(std::string_view name);

std::string render_report(const AggregateReport& report, ReportFormat format);
void emit_report(const AggregateReport& report, ReportFormat format, const std::filesystem::path& path);
AggregateReport read_report_csv(const std::filesystem::path& path);

}  // namespace cdvg::eval
