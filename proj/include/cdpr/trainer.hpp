// Mini-batch AdamW training with linear warmup and early stopping on
// validation accuracy, plus the finite-difference gradient checker.
#pragma once

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdpr/fusion.hpp"
#include "cdpr/losses.hpp"
#include "cdpr/metrics.hpp"
#include "cdpr/synthdata.hpp"

namespace cdpr {

struct TrainConfig {
  double learning_rate = 1e-3;
  int max_epochs = 40;
  std::size_t batch_size = 16;
  int patience = 5;
  double warmup_proportion = 0.05;
  double weight_decay = 0.1;
  double dropout = 0.2;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  PathwayAblation ablation = PathwayAblation::None;
  /// Test hook: replaces the validation accuracy of (epoch, measured value).
  std::function<double(int, double)> val_metric_hook;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  LossValues train_loss;
  double val_acc = 0.0;
  double val_macro_f1 = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int selected_epoch = 0;  // 1-based; 0 before any epoch completes
  bool early_stopped = false;
};

struct TrainResult {
  ModelParams model;
  TrainHistory history;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::string component, int epoch, std::size_t step);
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

/// Decoupled weight decay: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta),
/// with the decay term skipped for biases, layer-norm gains and alpha.
class AdamW {
 public:
  AdamW(const ModelParams& model, const TrainConfig& config);
  void step(ModelParams& model, const std::vector<Mat>& grads, double learning_rate);
  std::size_t steps() const { return t_; }

  static bool decays(const std::string& param_name);

 private:
  double beta1_;
  double beta2_;
  double epsilon_;
  double weight_decay_;
  std::size_t t_ = 0;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  std::vector<bool> decay_;
};

/// Learning rate after `step` updates: linear ramp over the warmup steps, then flat.
double scheduled_lr(const TrainConfig& config, std::size_t step, std::size_t total_steps);

struct BatchEvaluation {
  LossValues loss;
  std::vector<Mat> grads;  // for_each_param order
  std::uint64_t kink_signature = 0;
};

/// Forward + backward of L_total over one batch. `masks` supplies one dropout
/// mask set per sample in train mode and may be empty in eval mode.
BatchEvaluation evaluate_batch(const ModelParams& model, std::span<const ModalityBundle> batch,
                               const LossConfig& loss, const ForwardOptions& options,
                               std::span<const DropoutMasks> masks = {}, bool with_grads = true);

TrainResult train(ModelParams model, const Dataset& data, const TrainConfig& config,
                  const LossConfig& loss);

std::string history_csv(const TrainHistory& history);

struct GradCheckOptions {
  double epsilon = 1e-5;
  std::size_t coords_per_group = 20;
  std::uint64_t seed = 0;
  LossConfig loss;
  PathwayAblation ablation = PathwayAblation::None;
  /// Test hook: multiplies the analytic gradient of one named tensor.
  std::optional<std::string> corrupt_group;
  double corrupt_scale = 1.0;
};

struct GroupCheck {
  std::string name;
  std::size_t probes = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_group;
  std::vector<GroupCheck> groups;
  std::size_t total_probes = 0;
  /// Probes discarded because the +/- perturbations straddled a non-smooth point.
  std::size_t resampled = 0;
};

/// Central-difference check of dL_total/dtheta, eval mode, on a random subset
/// of coordinates in every parameter tensor.
GradCheckReport grad_check(const ModelParams& model, std::span<const ModalityBundle> batch,
                           const GradCheckOptions& options = {});

}  // namespace cdpr
