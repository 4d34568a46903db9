#pragma once

#include <filesystem>

#include "cdvg/data/dataset.hpp"
#include "json.hpp"

namespace cdvg::data {

nlohmann::json config_to_json(const DatasetConfig& config);
DatasetConfig config_from_json(const nlohmann::json& j);

// SHA-256 over the configuration, split, labels and raw pixels. Identifies
// the dataset in downstream sidecars independently of the PNG encoding.
std::string dataset_fingerprint(const BiasedDataset& dataset);

// Writes images/NNNNNN.png, manifest.csv and config.json (written last, so
// its presence marks a complete dataset). Returns the manifest path.
std::filesystem::path write_dataset(const BiasedDataset& dataset, const std::filesystem::path& dir);

// Reads a dataset back, verifying the manifest and image checksums.
// Throws MissingArtifactError when config.json is absent and CorruptionError
// on checksum mismatch or missing image files (all listed in the message).
BiasedDataset read_dataset(const std::filesystem::path& dir);

// config.json of a dataset directory without loading images.
nlohmann::json read_dataset_metadata(const std::filesystem::path& dir);

}  // namespace cdvg::data
