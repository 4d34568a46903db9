#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cdvg/core/cross_entropy.hpp"
#include "cdvg/core/errors.hpp"
#include "cdvg/data/batch.hpp"
#include "cdvg/diagnostics/diagnostics.hpp"

namespace cdvg::diagnostics {

namespace {

constexpr std::size_t kProbeChunk = 128;

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
  const std::size_t per = t.numel() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = count;
  return Tensor(shape, std::vector<float>(t.data() + begin * per, t.data() + (begin + count) * per));
}

}  // namespace

void ProbeCurve::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i > 0 && points[i].iteration <= points[i - 1].iteration) {
      throw ConfigError("probe curve iterations must be strictly increasing");
    }
    if (!std::isfinite(points[i].bias_loss) || !std::isfinite(points[i].signal_loss)) {
      throw ConfigError("probe curve has a non-finite loss at iteration " + std::to_string(points[i].iteration));
    }
  }
}

ProbeSet make_probe_set(const data::BiasedDataset& dataset, std::size_t n, std::size_t num_domains,
                        std::uint64_t seed) {
  if (dataset.size() == 0) throw ConfigError("probe set needs a non-empty dataset");
  if (num_domains == 0) throw ConfigError("probe set needs at least one domain");
  n = std::min(n, dataset.size());
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0x9B0BE));
  rng.shuffle(order.begin(), order.end());
  order.resize(n);
  ProbeSet probe;
  probe.images = data::pack_images(dataset, order, data::PixelRange::unit);
  probe.targets.resize(n);
  for (auto& t : probe.targets) t = static_cast<int>(rng.below(num_domains));
  return probe;
}

ProbePoint probe_translator(const translator::Translator& g, debias::Classifier& bias_oracle,
                            debias::Classifier& signal_oracle, const ProbeSet& probe) {
  const std::size_t k = g.num_domains();
  if (bias_oracle.num_classes() != k || signal_oracle.num_classes() != k) {
    throw ConfigError("oracles have " + std::to_string(bias_oracle.num_classes()) + "/" +
                      std::to_string(signal_oracle.num_classes()) + " classes but the generator has " +
                      std::to_string(k) + " domains");
  }
  const std::size_t n = probe.images.dim(0);
  if (probe.targets.size() != n) throw ConfigError("probe targets and images differ in count");
  double bias_sum = 0.0, signal_sum = 0.0;
  for (std::size_t begin = 0; begin < n; begin += kProbeChunk) {
    const std::size_t count = std::min(kProbeChunk, n - begin);
    Tensor x = slice_rows(probe.images, begin, count);
    data::to_signed_unit(x);
    const auto targets = std::span(probe.targets).subspan(begin, count);
    Tensor translated = g.translate(x, targets).clone();
    data::to_unit(translated);
    const Tensor bias_logits = bias_oracle.predict_logits(translated);
    const Tensor signal_logits = signal_oracle.predict_logits(translated);
    bias_sum += softmax_cross_entropy<float>(bias_logits.span(), count, k, targets) * static_cast<double>(count);
    signal_sum += softmax_cross_entropy<float>(signal_logits.span(), count, k, targets) * static_cast<double>(count);
  }
  return {0, bias_sum / static_cast<double>(n), signal_sum / static_cast<double>(n)};
}

ProbeCurve measure_bias_signal_losses(const std::vector<std::pair<std::size_t, std::filesystem::path>>& checkpoints,
                                      const translator::TranslatorArch& arch, debias::Classifier& bias_oracle,
                                      debias::Classifier& signal_oracle, const ProbeSet& probe) {
  if (bias_oracle.num_classes() != arch.num_domains || signal_oracle.num_classes() != arch.num_domains) {
    throw ConfigError("oracle class count does not match the translator's " + std::to_string(arch.num_domains) +
                      " domains");
  }
  auto ordered = checkpoints;
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  translator::TranslationModel model(arch, 0);
  ProbeCurve curve;
  for (const auto& [iteration, path] : ordered) {
    model.load_generator(path);
    ProbePoint point = probe_translator(model, bias_oracle, signal_oracle, probe);
    point.iteration = iteration;
    curve.points.push_back(point);
  }
  curve.validate();
  return curve;
}

void write_probe_csv(const ProbeCurve& curve, const std::filesystem::path& path) {
  curve.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ostringstream out;
  out.precision(17);
  out << "iteration,bias_loss,signal_loss\n";
  for (const auto& p : curve.points) out << p.iteration << ',' << p.bias_loss << ',' << p.signal_loss << '\n';
  auto tmp = path;
  tmp += ".tmp";
  std::ofstream(tmp) << out.str();
  std::filesystem::rename(tmp, path);
}

ProbeCurve read_probe_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("no probe curve at " + path.string() + "; run `cdvg diagnose` first");
  std::string line;
  if (!std::getline(in, line) || line != "iteration,bias_loss,signal_loss") {
    throw CorruptionError("bad probe curve header in " + path.string());
  }
  ProbeCurve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    ProbePoint p;
    char c1 = 0, c2 = 0;
    if (!(row >> p.iteration >> c1 >> p.bias_loss >> c2 >> p.signal_loss) || c1 != ',' || c2 != ',') {
      throw CorruptionError("bad probe curve row '" + line + "' in " + path.string());
    }
    curve.points.push_back(p);
  }
  curve.validate();
  return curve;
}

}  // namespace cdvg::diagnostics
