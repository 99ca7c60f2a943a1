// Classification metrics over all C classes, with the 0/0 -> 0 convention.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cdpr/fusion.hpp"

namespace cdpr {

struct Metrics {
  double acc = 0.0;
  double macro_f1 = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double weighted_f1 = 0.0;
  double weighted_precision = 0.0;
  std::vector<double> per_class_f1;
  double conflict_subset_acc = 0.0;
  double consistent_subset_acc = 0.0;
  std::size_t conflict_count = 0;
  std::size_t consistent_count = 0;
};

/// `conflicted` may be empty, in which case both subset accuracies are 0.
Metrics compute_metrics(std::span<const std::size_t> labels, std::span<const std::size_t> preds,
                        std::size_t num_classes, std::span<const std::uint8_t> conflicted = {});

struct Evaluation {
  Metrics metrics;
  std::vector<ModelOutput> outputs;
};

/// Eval-mode forward over every sample.
Evaluation evaluate_outputs(const ModelParams& model, std::span<const ModalityBundle> samples,
                            PathwayAblation ablation = PathwayAblation::None);
Metrics evaluate(const ModelParams& model, std::span<const ModalityBundle> samples,
                 PathwayAblation ablation = PathwayAblation::None);

}  // namespace cdpr
