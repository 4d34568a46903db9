#include "cdvg/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "cdvg/core/errors.hpp"
#include "cdvg/data/batch.hpp"

namespace cdvg::eval {
namespace {

const std::vector<std::string> kMethodOrder{"vanilla", "cdvg", "cdvg-no-g", "cdvg-no-cl"};

std::size_t method_rank(const std::string& method) {
  const auto it = std::find(kMethodOrder.begin(), kMethodOrder.end(), method);
  return static_cast<std::size_t>(it - kMethodOrder.begin());
}

bool cell_less(const ReportCell& a, const ReportCell& b) {
  if (a.dataset != b.dataset) return a.dataset < b.dataset;
  if (a.ratio_percent != b.ratio_percent) return a.ratio_percent < b.ratio_percent;
  const auto ra = method_rank(a.method), rb = method_rank(b.method);
  if (ra != rb) return ra < rb;
  return a.method < b.method;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

std::string format_ratio(double percent) {
  std::ostringstream ss;
  ss << std::setprecision(6) << percent;
  return ss.str();
}

std::string fixed2(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2) << v;
  return ss.str();
}

}  // namespace

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},       {"ce_orig", r.ce_orig}, {"ce_trans", r.ce_trans}, {"cl", r.cl},
          {"test_acc", r.test_acc}, {"lr", r.lr},           {"wall_s", r.wall_s}};
}

EpochRecord epoch_from_json(const nlohmann::json& j) {
  return {j.at("epoch").get<std::size_t>(), j.at("ce_orig").get<double>(), j.at("ce_trans").get<double>(),
          j.at("cl").get<double>(),         j.at("test_acc").get<double>(), j.at("lr").get<double>(),
          j.at("wall_s").get<double>()};
}

void RunMetrics::validate() const {
  if (epochs.empty()) throw CorruptionError("run " + method + " seed " + std::to_string(seed) + " has no epochs");
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    if (epochs[i].epoch != i + 1) {
      throw CorruptionError("run " + method + " seed " + std::to_string(seed) + ": epochs not contiguous at " +
                            std::to_string(epochs[i].epoch));
    }
    if (!(epochs[i].test_acc >= 0.0 && epochs[i].test_acc <= 1.0)) {
      throw CorruptionError("run " + method + " seed " + std::to_string(seed) + ": test_acc out of [0, 1]");
    }
  }
}

const EpochRecord& RunMetrics::best() const {
  const EpochRecord* best = &epochs.front();
  for (const auto& r : epochs) {
    if (r.test_acc > best->test_acc) best = &r;
  }
  return *best;
}

RunMetrics read_run(const std::filesystem::path& run_dir) {
  const auto run_json = run_dir / "run.json";
  if (!std::filesystem::exists(run_json)) {
    throw MissingArtifactError("no run.json in " + run_dir.string() + " (run `cdvg train` first)");
  }
  const auto meta = nlohmann::json::parse(std::ifstream(run_json));
  RunMetrics run;
  run.dataset = meta.at("dataset").get<std::string>();
  run.ratio = meta.at("ratio").get<double>();
  run.method = meta.at("method").get<std::string>();
  run.seed = meta.at("seed").get<std::uint64_t>();
  run.config_hash = meta.at("config_hash").get<std::string>();
  std::ifstream in(run_dir / "metrics.ndjson");
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) run.epochs.push_back(epoch_from_json(nlohmann::json::parse(line)));
  }
  run.validate();
  return run;
}

double unbiased_accuracy(debias::Classifier& model, const data::BiasedDataset& test, std::size_t batch) {
  if (test.samples.empty()) throw std::invalid_argument("unbiased_accuracy: empty test set");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < test.size(); start += batch) {
    idx.resize(std::min(batch, test.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = model.predict_logits(data::pack_images(test, idx, data::PixelRange::unit));
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const float* row = logits.data() + i * k;
      const auto pred = static_cast<int>(std::max_element(row, row + k) - row);
      if (pred == test.samples[idx[i]].class_label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

AggregateReport aggregate_runs(const std::vector<RunMetrics>& runs) {
  struct Acc {
    std::string hash;
    std::vector<std::pair<std::uint64_t, std::pair<double, double>>> values;  // seed, (best, last)
  };
  std::map<std::tuple<std::string, double, std::string>, Acc> cells;
  for (const auto& run : runs) {
    run.validate();
    auto& cell = cells[{run.dataset, run.ratio * 100.0, run.method}];
    if (cell.values.empty()) {
      cell.hash = run.config_hash;
    } else if (cell.hash != run.config_hash) {
      throw ProvenanceError("cell " + run.dataset + " ratio " + format_ratio(run.ratio * 100.0) + " method " +
                            run.method + " mixes runs with config hashes " + cell.hash + " and " + run.config_hash);
    }
    cell.values.push_back({run.seed, {run.best().test_acc * 100.0, run.last().test_acc * 100.0}});
  }
  AggregateReport report;
  for (auto& [key, acc] : cells) {
    // Seed order makes the floating-point sums independent of input order.
    std::sort(acc.values.begin(), acc.values.end());
    std::vector<double> best, last;
    for (const auto& [seed, v] : acc.values) {
      best.push_back(v.first);
      last.push_back(v.second);
    }
    ReportCell cell{std::get<0>(key), std::get<1>(key), std::get<2>(key)};
    std::tie(cell.best_mean, cell.best_std) = mean_std(best);
    std::tie(cell.last_mean, cell.last_std) = mean_std(last);
    cell.n_runs = acc.values.size();
    report.cells.push_back(cell);
  }
  std::sort(report.cells.begin(), report.cells.end(), cell_less);
  return report;
}

AggregateReport rounded(const AggregateReport& report) {
  AggregateReport out = report;
  for (auto& c : out.cells) {
    c.best_mean = round2(c.best_mean);
    c.best_std = round2(c.best_std);
    c.last_mean = round2(c.last_mean);
    c.last_std = round2(c.last_std);
  }
  return out;
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "csv") return ReportFormat::csv;
  if (name == "text" || name == "txt") return ReportFormat::text;
  throw ConfigError("unknown report format '" + std::string(name) + "' (expected csv or text)");
}

std::string render_report(const AggregateReport& report, ReportFormat format) {
  std::ostringstream out;
  if (format == ReportFormat::csv) {
    out << "dataset,ratio,method,best_mean,best_std,last_mean,last_std,n_runs\n";
    for (const auto& c : report.cells) {
      out << c.dataset << ',' << format_ratio(c.ratio_percent) << ',' << c.method << ',' << fixed2(c.best_mean)
          << ',' << fixed2(c.best_std) << ',' << fixed2(c.last_mean) << ',' << fixed2(c.last_std) << ','
          << c.n_runs << '\n';
    }
    return out.str();
  }

  // Rows (dataset, ratio); columns methods; cells "last ± std (best b)".
  std::vector<std::string> methods;
  for (const auto& c : report.cells) {
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) methods.push_back(c.method);
  }
  std::sort(methods.begin(), methods.end(), [](const std::string& a, const std::string& b) {
    return method_rank(a) != method_rank(b) ? method_rank(a) < method_rank(b) : a < b;
  });
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header{"dataset", "ratio(%)"};
  header.insert(header.end(), methods.begin(), methods.end());
  table.push_back(header);
  for (std::size_t i = 0; i < report.cells.size();) {
    const auto& first = report.cells[i];
    std::vector<std::string> row{first.dataset, format_ratio(first.ratio_percent)};
    row.resize(header.size(), "-");
    for (; i < report.cells.size() && report.cells[i].dataset == first.dataset &&
           report.cells[i].ratio_percent == first.ratio_percent;
         ++i) {
      const auto& c = report.cells[i];
      const auto col = 2 + static_cast<std::size_t>(std::find(methods.begin(), methods.end(), c.method) - methods.begin());
      row[col] = fixed2(c.last_mean) + " +- " + fixed2(c.last_std) + " (best " + fixed2(c.best_mean) + ", n=" +
                 std::to_string(c.n_runs) + ")";
    }
    table.push_back(row);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : table) {
    for (std::size_t j = 0; j < row.size(); ++j) width[j] = std::max(width[j], row[j].size());
  }
  out << "Unbiased test accuracy (%), last epoch mean +- sample std over runs\n";
  for (std::size_t r = 0; r < table.size(); ++r) {
    for (std::size_t j = 0; j < table[r].size(); ++j) {
      out << (j ? "  " : "") << std::left << std::setw(static_cast<int>(width[j])) << table[r][j];
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  return out.str();
}

void emit_report(const AggregateReport& report, ReportFormat format, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write report " + tmp.string());
    out << render_report(report, format);
    if (!out) throw std::runtime_error("failed writing report " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

AggregateReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("no report at " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "dataset,ratio,method,best_mean,best_std,last_mean,last_std,n_runs") {
    throw CorruptionError("unexpected report header in " + path.string());
  }
  AggregateReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 8) throw CorruptionError("malformed report row: " + line);
    report.cells.push_back({f[0], std::stod(f[1]), f[2], std::stod(f[3]), std::stod(f[4]), std::stod(f[5]),
                            std::stod(f[6]), std::stoul(f[7])});
  }
  return report;
}

}  // namespace cdvg::eval
