// Experiment orchestration: main runs, the ablation grid, the noise sweep,
// and the report files they emit.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdpr/trainer.hpp"

namespace cdpr {

struct AblationFlags {
  bool no_int = false;
  bool no_rea = false;
  bool no_sim = false;
  bool no_diff = false;
  bool no_uni = false;
  bool no_rea_loss = false;

  void validate() const;
  bool any() const;
  PathwayAblation pathway() const;
  /// Zeroes the weights of removed loss terms. no_rea also drops L_rea.
  LossConfig apply(LossConfig loss) const;
  /// "full" or the single set flag; joined with '+' when several are set.
  std::string name() const;

  bool operator==(const AblationFlags&) const = default;
};

/// The single-flag grid plus the full model, in report order.
std::vector<AblationFlags> ablation_grid();

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;  // feature_dim and num_classes follow the dataset
  TrainConfig train;
  LossConfig loss;
  AblationFlags ablation;
  std::vector<double> sigmas{0.0, 0.1, 0.3, 0.5, 0.7};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string output_dir = "runs";

  void validate() const;
  ModelConfig model_config() const;
};

/// Missing keys keep their defaults; unknown keys are a ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config_file(const std::string& path);

struct SeedRun {
  std::uint64_t seed = 0;
  Metrics metrics;
  double lambda_conflicted = 0.0;
  double lambda_consistent = 0.0;
  TrainHistory history;
};

/// Mean and sample standard deviation (0 for a single value).
struct Summary {
  double mean = 0.0;
  double std = 0.0;
};
Summary summarize(const std::vector<double>& values);

/// Names of the per-seed scalar columns, in CSV order.
const std::vector<std::string>& seed_columns();
std::vector<double> seed_row(const SeedRun& run);

struct MainReport {
  std::string variant;
  std::uint64_t dataset_fingerprint = 0;
  std::vector<SeedRun> runs;
  std::vector<ModelParams> models;
  std::vector<std::vector<ModelOutput>> test_outputs;

  Summary column(const std::string& name) const;
};

/// Trains one model per seed on one dataset and evaluates it on the test split.
SeedRun train_and_evaluate(const ExperimentConfig& cfg, const Dataset& data, const AblationFlags& flags,
                           std::uint64_t seed, ModelParams* model_out = nullptr,
                           std::vector<ModelOutput>* outputs_out = nullptr);

MainReport run_main(const ExperimentConfig& cfg);
MainReport run_main(const ExperimentConfig& cfg, const Dataset& data);

struct AblationReport {
  std::uint64_t dataset_fingerprint = 0;
  std::vector<MainReport> variants;  // ablation_grid() order
};

AblationReport run_ablation(const ExperimentConfig& cfg);

struct RobustnessReport {
  std::uint64_t dataset_fingerprint = 0;
  std::vector<double> sigmas;
  std::vector<std::uint64_t> seeds;
  /// f1[s][k]: macro F1 of seed s at sigmas[k].
  std::vector<std::vector<double>> f1;
  std::vector<std::vector<double>> acc;

  std::vector<double> mean_f1() const;
};

/// Test-time corruption of the text modality; each sample's noise direction is
/// shared across the sigma grid.
std::vector<ModalityBundle> corrupt_text(std::span<const ModalityBundle> samples, double sigma,
                                         std::uint64_t noise_seed);

RobustnessReport run_robustness(const ExperimentConfig& cfg);

// Report serialization. Every function here is a pure function of its input.
std::string main_metrics_csv(const MainReport& r);
std::string gating_csv(std::span<const ModalityBundle> samples, std::span<const ModelOutput> outputs);
nlohmann::json main_summary(const MainReport& r);
std::string ablation_csv(const AblationReport& r);
nlohmann::json ablation_summary(const AblationReport& r);
std::string robustness_csv(const RobustnessReport& r);
nlohmann::json robustness_summary(const RobustnessReport& r);
std::string fingerprint_hex(std::uint64_t fp);

/// Writes the report files under `dir` and returns their paths.
std::vector<std::filesystem::path> write_main_report(const MainReport& r, const ExperimentConfig& cfg,
                                                     const std::filesystem::path& dir);
std::vector<std::filesystem::path> write_ablation_report(const AblationReport& r,
                                                         const std::filesystem::path& dir);
std::vector<std::filesystem::path> write_robustness_report(const RobustnessReport& r,
                                                           const std::filesystem::path& dir);

/// CDPR_OUT_DIR wins over the config file; an explicit flag wins over both.
std::string resolve_output_dir(const ExperimentConfig& cfg, const std::string& flag_value);

}  // namespace cdpr
