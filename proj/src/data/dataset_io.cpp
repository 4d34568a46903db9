#include "cdvg/data/dataset_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "cdvg/core/errors.hpp"
#include "cdvg/core/hash.hpp"

namespace cdvg::data {
namespace {

std::string image_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "images/%06zu.png", index);
  return buf;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("file not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

nlohmann::json config_to_json(const DatasetConfig& config) {
  nlohmann::json palette = nlohmann::json::array();
  for (const auto& c : config.palette) palette.push_back({c[0], c[1], c[2]});
  return {{"name", to_string(config.name)},
          {"ratio", config.ratio},
          {"canonical_ratio", is_canonical_ratio(config.ratio)},
          {"seed", config.seed},
          {"severity", config.severity},
          {"palette", palette},
          {"color_jitter", config.color_jitter},
          {"construction", config.construction}};
}

DatasetConfig config_from_json(const nlohmann::json& j) {
  try {
    DatasetConfig config;
    config.name = parse_dataset_name(j.at("name").get<std::string>());
    config.ratio = j.at("ratio").get<double>();
    config.seed = j.at("seed").get<std::uint64_t>();
    config.severity = j.value("severity", 4);
    if (j.contains("palette")) {
      config.palette.clear();
      for (const auto& c : j.at("palette")) {
        config.palette.push_back({c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(), c.at(2).get<std::uint8_t>()});
      }
    }
    config.color_jitter = j.value("color_jitter", 0.05);
    config.construction = j.value("construction", std::string("direct"));
    return config;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid dataset config: ") + e.what());
  }
}

std::filesystem::path write_dataset(const BiasedDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::remove(dir / "config.json");
  std::ostringstream manifest;
  manifest << "path,class_label,bias_label,bias_free\n";
  Sha256 images_hash;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& s = dataset.samples[i];
    const std::string name = image_name(i);
    const auto bytes = encode_png(s.image);
    write_file(dir / name, bytes);
    images_hash.update(bytes);
    manifest << name << ',' << s.class_label << ',' << s.bias_label << ',' << (s.bias_free ? 1 : 0) << '\n';
  }
  const std::string manifest_text = manifest.str();
  write_text(dir / "manifest.csv", manifest_text);

  nlohmann::json meta = config_to_json(dataset.config);
  meta["split"] = to_string(dataset.split);
  meta["num_classes"] = dataset.num_classes;
  meta["num_samples"] = dataset.samples.size();
  meta["bias_free_count"] = dataset.bias_free_count();
  meta["source"] = dataset.source_origin;
  if (!dataset.samples.empty()) {
    const Image8& first = dataset.samples.front().image;
    meta["image_shape"] = {first.height, first.width, first.channels};
  }
  meta["content_sha256"] = dataset_fingerprint(dataset);
  meta["manifest_sha256"] = sha256_hex(manifest_text);
  meta["images_sha256"] = images_hash.hex_digest();
  const auto tmp = dir / "config.json.tmp";
  write_text(tmp, meta.dump(2) + "\n");
  std::filesystem::rename(tmp, dir / "config.json");
  return dir / "manifest.csv";
}

std::string dataset_fingerprint(const BiasedDataset& dataset) {
  Sha256 h;
  nlohmann::json head = config_to_json(dataset.config);
  head["split"] = to_string(dataset.split);
  head["num_classes"] = dataset.num_classes;
  h.update(head.dump());
  for (const Sample& s : dataset.samples) {
    const std::int32_t fields[6] = {s.class_label, s.bias_label, s.bias_free ? 1 : 0,
                                    static_cast<std::int32_t>(s.image.height),
                                    static_cast<std::int32_t>(s.image.width),
                                    static_cast<std::int32_t>(s.image.channels)};
    h.update({reinterpret_cast<const unsigned char*>(fields), sizeof(fields)});
    h.update(s.image.pixels);
  }
  return h.hex_digest();
}

nlohmann::json read_dataset_metadata(const std::filesystem::path& dir) {
  const auto path = dir / "config.json";
  if (!std::filesystem::exists(path)) {
    throw MissingArtifactError("no dataset at " + dir.string() + " (config.json missing; run `cdvg synth` first)");
  }
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw CorruptionError("unreadable " + path.string() + ": " + e.what());
  }
}

BiasedDataset read_dataset(const std::filesystem::path& dir) {
  const nlohmann::json meta = read_dataset_metadata(dir);
  const std::string manifest_text = read_text(dir / "manifest.csv");
  if (sha256_hex(manifest_text) != meta.value("manifest_sha256", "")) {
    throw CorruptionError("manifest checksum mismatch in " + dir.string());
  }
  BiasedDataset out;
  out.config = config_from_json(meta);
  out.split = parse_split(meta.at("split").get<std::string>());
  out.num_classes = meta.at("num_classes").get<std::size_t>();
  out.source_origin = meta.value("source", "");

  std::istringstream lines(manifest_text);
  std::string line;
  std::getline(lines, line);
  if (line != "path,class_label,bias_label,bias_free") throw CorruptionError("bad manifest header in " + dir.string());
  struct Row {
    std::string path;
    int cls, bias, free;
  };
  std::vector<Row> rows;
  std::vector<std::string> missing;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    Row row;
    std::istringstream fields(line);
    std::string cls, bias, free;
    if (!std::getline(fields, row.path, ',') || !std::getline(fields, cls, ',') ||
        !std::getline(fields, bias, ',') || !std::getline(fields, free)) {
      throw CorruptionError("malformed manifest row: " + line);
    }
    row.cls = std::stoi(cls);
    row.bias = std::stoi(bias);
    row.free = std::stoi(free);
    if (!std::filesystem::exists(dir / row.path)) missing.push_back((dir / row.path).string());
    rows.push_back(std::move(row));
  }
  if (!missing.empty()) {
    std::string msg = "dataset " + dir.string() + " is missing " + std::to_string(missing.size()) + " image file(s):";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ...";
    throw CorruptionError(msg);
  }
  Sha256 images_hash;
  out.samples.reserve(rows.size());
  for (const Row& row : rows) {
    const auto bytes = read_file(dir / row.path);
    images_hash.update(bytes);
    out.samples.push_back({decode_png(bytes), row.cls, row.bias, row.free != 0});
  }
  if (images_hash.hex_digest() != meta.value("images_sha256", "")) {
    throw CorruptionError("image checksum mismatch in " + dir.string());
  }
  if (out.samples.size() != meta.value("num_samples", out.samples.size())) {
    throw CorruptionError("sample count mismatch in " + dir.string());
  }
  if (meta.contains("content_sha256") && dataset_fingerprint(out) != meta["content_sha256"]) {
    throw CorruptionError("content fingerprint mismatch in " + dir.string());
  }
  return out;
}

}  // namespace cdvg::data
