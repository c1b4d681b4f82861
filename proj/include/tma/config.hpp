#pragma once

#include "tma/common.hpp"
#include "tma/datasets.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tma {

/// Raised for malformed or invalid configuration; carries every problem found.
class ConfigError : public UsageError {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// ---------------------------------------------------------------- TOML subset

/// Tables, dotted keys, strings, integers, floats, booleans, arrays and
/// inline tables. Arrays of tables and dates are not supported.
nlohmann::json parse_toml(std::string_view text);
nlohmann::json parse_toml_file(const std::filesystem::path& path);
/// Inverse of parse_toml for objects whose leaves are scalars or arrays.
std::string to_toml(const nlohmann::json& doc);

// ---------------------------------------------------------------- experiment

struct OptimizerConfig {
  std::string name = "adam";
  double lr = 1e-3;
  double weight_decay = 1e-4;
};

struct DatasetConfig {
  /// synthetic | synthetic-dir | galaxy10 | galaxymnist
  std::string kind = "synthetic";
  std::filesystem::path path;
  std::filesystem::path taxonomy;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
  SplitMode split_mode = SplitMode::kStratified;
  bool augment_symbols = false;
  SyntheticSpec synthetic;
};

struct EncoderConfig {
  /// toy | pretrained
  std::string kind = "toy";
  std::string descriptor;
  std::filesystem::path weights;
  std::filesystem::path registry;
  int embed_dim = 32;
  int image_size = 32;
};

struct EvalConfig {
  int map_k = 5;
  bool linear_probe = false;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string variant = "full";
  int stage1_epochs = 12;
  int stage2_epochs = 50;
  int convergence_epochs = 50;
  int batch_size = 64;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  int repeats = 1;
  bool symmetric_loss = false;
  bool label_masked_negatives = false;
  double validation_fraction = 0.1;
  int prefetch = 0;
  /// Empty: $TMA_RUNS_DIR, else "runs".
  std::filesystem::path runs_dir;
  DatasetConfig dataset;
  EncoderConfig encoder;
  EvalConfig eval;
};

const std::vector<std::string>& known_variants();

/// Reads a config document, rejecting unknown keys and wrong types. Missing
/// keys keep their defaults. All problems are reported together.
ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const ExperimentConfig& config);

/// Range and consistency checks; empty when the config is usable.
std::vector<std::string> validate(const ExperimentConfig& config);

/// Applies "dotted.key=value"; the value is read as a TOML value, falling
/// back to a bare string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

/// File (optional) plus overrides, parsed and validated; throws ConfigError.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides);

/// Stable hash of the canonical JSON form.
std::string config_digest(const ExperimentConfig& config);

std::filesystem::path resolve_runs_dir(const ExperimentConfig& config);

}  // namespace tma
