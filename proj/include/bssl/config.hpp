#pragma once

#include "bssl/data.hpp"
#include "bssl/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace bssl {

enum class DatasetKind { Gmm, Shapes, Record };
const char* to_string(DatasetKind kind) noexcept;

/// Where the samples come from: a generator with its parameters, or a record file.
struct DatasetConfig {
  DatasetKind kind = DatasetKind::Gmm;
  int classes = 4;
  int samples = 2000;
  int dim = 16;             // gmm
  double separation = 6.0;  // gmm: distance between component means in noise std units
  int image_size = 8;       // shapes
  int channels = 1;         // shapes
  std::uint64_t seed = 0;   // generator seed
  std::string path;         // record

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct SplitConfig {
  int labels_per_class = 4;
  double test_frac = 0.2;
  std::uint64_t seed = 0;

  friend bool operator==(const SplitConfig&, const SplitConfig&) = default;
};

struct OutputConfig {
  std::string dir = "runs/default";
  int checkpoint_every = 0;  // iterations between rolling checkpoints; 0 keeps only the final one

  friend bool operator==(const OutputConfig&, const OutputConfig&) = default;
};

struct ExperimentConfig {
  static constexpr int kSchemaVersion = 1;

  int schema_version = kSchemaVersion;
  DatasetConfig dataset;
  SplitConfig split;
  TrainConfig train;
  OutputConfig output;

  /// Throws Config naming the offending field.
  void validate() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Parses JSON (comments allowed). The `dataset` block is required; every other field
/// has a default. Unknown keys and mistyped values are Config errors naming the field.
ExperimentConfig parse_experiment(std::string_view text);

/// Every field, pretty-printed. parse_experiment(to_json(c)) == c.
std::string to_json(const ExperimentConfig& cfg);

ExperimentConfig load_experiment(const std::filesystem::path& path);

Dataset build_dataset(const DatasetConfig& cfg);

}  // namespace bssl
