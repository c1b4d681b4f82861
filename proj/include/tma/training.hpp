#pragma once

#include "tma/config.hpp"
#include "tma/contrastive.hpp"
#include "tma/datasets.hpp"
#include "tma/encoders.hpp"
#include "tma/evaluation.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tma {

// ---------------------------------------------------------------- variants

enum class PhaseKind { kStage1, kTransfer, kStage2 };
std::string_view phase_name(PhaseKind kind);

struct Phase {
  PhaseKind kind = PhaseKind::kStage1;
  int epochs = 0;
  bool operator==(const Phase&) const = default;
};

struct StagePlan {
  std::string variant;
  std::vector<Phase> phases;
  /// False for "scratch": encoders start from random initialization.
  bool use_pretrained = true;
  /// False for "bimodal": symbols never enter a loss.
  bool include_symbol = true;
  /// True for "v2": stage 2 starts with a freshly initialized symbol encoder.
  bool independent_symbol = false;
};

StagePlan resolve_variant(const ExperimentConfig& config);

// ---------------------------------------------------------------- stages

struct EpochRecord {
  std::string phase;  // "stage1" or "stage2"
  int epoch = 0;      // global index across phases
  std::size_t batches = 0;
  LossBreakdown mean;  // batch-averaged; temperature at epoch end
  std::optional<double> validation_loss;
};

struct StageOptions {
  int epochs = 0;
  int batch_size = 64;
  AdamOptions adam;
  bool symmetric = false;
  bool label_masked_negatives = false;
  bool include_symbol = true;
  bool augment_symbols = false;
  std::uint64_t seed = 0;
  std::size_t prefetch = 0;
  /// Global index of this stage's first epoch.
  int first_epoch = 0;
  /// Validation samples; empty disables validation and best tracking.
  const std::vector<ModalitySample>* validation = nullptr;
  /// Where last_finite.tma goes when a loss turns non-finite; empty skips it.
  std::filesystem::path checkpoint_dir;
  CheckpointInfo checkpoint_info;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct StageOutcome {
  EncoderSet set;
  std::vector<EpochRecord> history;
  std::int64_t optimizer_steps = 0;
  std::size_t prefetch_high_water = 0;
  /// Lowest validation loss seen and the parameters that produced it.
  std::optional<EncoderSet> best;
  int best_epoch = -1;
  double best_validation_loss = 0.0;
};

/// Warm-up: images and symbols share one encoder and are aligned to text.
StageOutcome run_stage1(EncoderSet set, const std::vector<ModalitySample>& train,
                        const StageOptions& options);
/// Joint tri-modal fine-tuning. Needs a stage-2 set unless symbols are excluded.
StageOutcome run_stage2(EncoderSet set, const std::vector<ModalitySample>& train,
                        const StageOptions& options);

/// Mean loss over `samples` in fixed order, without updating anything.
LossBreakdown evaluate_loss(const EncoderSet& set, const std::vector<ModalitySample>& samples,
                            int stage, const StageOptions& options);

// ---------------------------------------------------------------- experiments

struct PreparedData {
  ClassTaxonomy taxonomy;
  std::vector<ModalitySample> train;
  std::vector<ModalitySample> validation;
  std::vector<ModalitySample> test;
};

/// Loads or generates the configured dataset at the encoder's input size and
/// carves test and validation slices.
PreparedData prepare_data(const ExperimentConfig& config);

/// Checks that a pretrained descriptor can drive this config.
std::vector<std::string> check_encoder_compatibility(const ExperimentConfig& config);

/// Initial encoders for one run (toy or pretrained, per the variant).
EncoderSet build_initial_encoders(const ExperimentConfig& config, const ClassTaxonomy& taxonomy,
                                  std::uint64_t seed);

struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<std::string> phases_run;
  std::vector<EpochRecord> history;
  std::map<std::string, double> metrics;
  std::map<std::string, std::map<std::string, double>> final_loss;  // stage -> pair -> value
  std::map<std::string, std::int64_t> optimizer_steps;
  std::map<std::string, std::string> checkpoints;  // label -> file name
  std::optional<double> transfer_max_abs_diff;
  std::optional<ConfusionMatrix> confusion;
  double wall_time_seconds = 0.0;
  std::filesystem::path directory;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<RunRecord> runs;
  nlohmann::json aggregate;
  std::filesystem::path directory;
};

struct ExperimentHooks {
  std::function<void(std::uint64_t seed, const EpochRecord&)> on_epoch;
  std::function<void(const std::string&)> log;
};

/// One full run of the variant pipeline for `seed`, persisted under `dir`.
RunRecord run_single(const ExperimentConfig& config, const PreparedData& data, std::uint64_t seed,
                     const std::filesystem::path& dir, const ExperimentHooks& hooks = {});

/// `repeats` runs with seeds seed..seed+repeats-1 and their mean/std summary
/// in <runs_dir>/<name>/metrics.json.
ExperimentReport run_experiment(const ExperimentConfig& config, const ExperimentHooks& hooks = {});

/// Sample standard deviation; 0 for fewer than two values.
double sample_std(const std::vector<double>& values);

/// Metric name -> value for one evaluation report.
std::map<std::string, double> metric_map(const EvaluationReport& report, const EvalConfig& eval);

}  // namespace tma
