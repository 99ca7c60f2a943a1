// Multi-view objective: final/reasoning/unimodal cross-entropy, the
// shared-private difference loss and the CMD similarity loss.
#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "cdpr/fusion.hpp"

namespace cdpr {

struct LossConfig {
  double gamma_rea = 0.1;
  double gamma_uni = 0.1;
  double beta_diff = 0.1;
  double beta_sim = 0.1;
  int cmd_order = 5;
  double prob_floor = 1e-12;

  void validate() const;
};

/// Batch-stacked (N x d_h) shared and private features per modality.
struct BatchFeatures {
  std::array<Mat, 3> shared;
  std::array<Mat, 3> priv;
};

struct LossTerms {
  ad::Var cls;
  ad::Var rea;
  ad::Var uni;  // summed over modalities
  ad::Var diff;
  ad::Var sim;
  ad::Var task;
  ad::Var total;
};

struct LossValues {
  double cls = 0.0;
  double rea = 0.0;
  double uni = 0.0;
  double diff = 0.0;
  double sim = 0.0;
  double task = 0.0;
  double total = 0.0;
};

LossValues values_of(const LossTerms& terms);

ad::Var cross_entropy(ad::Var probs, std::size_t label, double floor = 1e-12);
ad::Var diff_loss(ad::Tape& tape, const std::array<ad::Var, 3>& shared,
                  const std::array<ad::Var, 3>& priv);
ad::Var cmd(ad::Tape& tape, ad::Var a, ad::Var b, int order);
ad::Var sim_loss(ad::Tape& tape, const std::array<ad::Var, 3>& shared, int order);

/// Builds every loss term over a batch of forward graphs. Samples whose
/// ablation removes the reasoning loss should be handled by a zero gamma.
LossTerms build_losses(ad::Tape& tape, std::span<const SampleGraph> batch,
                       std::span<const std::size_t> labels, const LossConfig& config);

// Value-level forms.
double cross_entropy(const Vec& probs, std::size_t label);
double diff_loss(const BatchFeatures& batch);
double cmd(const Mat& a, const Mat& b, int order);
double sim_loss(const BatchFeatures& batch, int order);
/// L_cls + gamma_rea L_rea + gamma_uni sum_m L_uni, batch-averaged.
double task_loss(std::span<const ModelOutput> outputs, std::span<const std::size_t> labels,
                 const LossConfig& config);
double total_loss(double task, double diff, double sim, const LossConfig& config);

/// Number of warnings issued for batches too small for the batch-level losses.
std::size_t small_batch_warnings();

}  // namespace cdpr
