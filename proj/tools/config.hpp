#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbox/dataset.hpp"
#include "bbox/harness.hpp"
#include "bbox/taxonomy.hpp"
#include "bbox/train.hpp"

namespace bbox::cli {

struct DatasetSpec {
  DatasetSource source = DatasetSource::Synthetic;
  std::string generator = "shapes";
  nlohmann::json params = nlohmann::json::object();
  std::uint64_t seed = 1;
  std::string images;  // idx-files
  std::string labels;  // idx-files
  std::string path;    // raw-binary
  Shape shape{1, 16, 16};
  std::size_t classes = 0;
  /// Leading fraction used for training; the rest is the seed pool.
  double train_fraction = 0.6;
};

/// A model loaded from a BBNW file or trained from an architecture.
struct ModelSpec {
  std::optional<std::string> path;
  std::string architecture = "conv";
  std::uint64_t seed = 0;
  TrainConfig train{};
};

struct RunConfig {
  std::string command = "bench";
  std::string plan_id = "plan";
  std::uint64_t seed = 0;
  std::string output = "runs/plan";
  DatasetSpec dataset{};
  ModelSpec target{};
  std::optional<ModelSpec> robust_target;
  std::vector<ModelSpec> surrogates;
  ThreatModel threat_model{};
  std::vector<AttackSpec> attacks;
  std::vector<std::string> settings{"untargeted-16"};
  Budget budget{};
  std::size_t seeds_per_run = 20;
  std::size_t batch_size = 5;
  std::optional<std::size_t> representative_iteration;
  bool override_threat_model = false;
  std::string report_input;
};

/// Built-in defaults: shapes data, conv target, one MLP surrogate, I-FGSM.
RunConfig default_config();

/// Parses a run config, or a run manifest wrapping one under "config".
/// Unknown keys anywhere in the schema are rejected.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_from_json(const nlohmann::json& j);

}  // namespace bbox::cli
