#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbox/tensor.hpp"
#include "bbox/train.hpp"

namespace bbox {

enum class DatasetSource { IdxFiles, RawBinary, Synthetic };

struct DatasetManifest {
  DatasetSource source = DatasetSource::Synthetic;
  std::string generator;          // synthetic only
  nlohmann::json params = nlohmann::json::object();
  std::uint64_t seed = 0;         // synthetic only
  std::vector<std::string> files; // idx / raw only
  Shape shape{};
  std::size_t classes = 0;
  std::vector<std::pair<std::string, std::size_t>> splits;
  std::string checksum;

  /// Throws ChecksumMismatch unless checksum equals dataset_checksum(data),
  /// and InvalidLabel when a label is out of range.
  void verify(const Dataset& data) const;
};

struct LoadedDataset {
  Dataset data;
  DatasetManifest manifest;
};

/// FNV-1a over shape, labels and the IEEE bits of every pixel, as 16 hex digits.
std::string dataset_checksum(const Dataset& data);

/// Reads an IDX image file (magic 0x00000803, dims n x h x w, u8) and an IDX
/// label file (magic 0x00000801, dim n, u8). Pixels are scaled to [0, 1].
LoadedDataset ingest_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
LoadedDataset parse_idx(const std::vector<std::uint8_t>& images, const std::vector<std::uint8_t>& labels);
/// Inverse of parse_idx for single-channel data; pixels are rounded to u8.
std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> encode_idx(const Dataset& data);
void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

/// Raw records of one u8 label followed by c*h*w u8 pixels.
LoadedDataset ingest_raw(const std::filesystem::path& path, const Shape& shape, std::size_t classes);

/// Built-in generators: "blobs" (class-conditional Gaussians around random
/// +-1 prototypes scaled by `separation`) and "shapes" (procedural rectangles,
/// discs, bars, rings, crosses, ...; 4 to 8 classes).
LoadedDataset synth_dataset(const std::string& generator, const nlohmann::json& params, std::uint64_t seed);

const char* to_string(DatasetSource source) noexcept;
nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);

}  // namespace bbox
