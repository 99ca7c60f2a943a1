#include "cdpr/metrics.hpp"

namespace cdpr {

namespace {

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

Metrics compute_metrics(std::span<const std::size_t> labels, std::span<const std::size_t> preds,
                        std::size_t num_classes, std::span<const std::uint8_t> conflicted) {
  if (labels.empty()) throw std::invalid_argument("compute_metrics: no samples");
  if (labels.size() != preds.size()) throw ShapeError("compute_metrics: label/prediction count mismatch");
  if (!conflicted.empty() && conflicted.size() != labels.size()) {
    throw ShapeError("compute_metrics: conflict flag count mismatch");
  }
  std::vector<double> tp(num_classes, 0.0);
  std::vector<double> predicted(num_classes, 0.0);
  std::vector<double> support(num_classes, 0.0);
  double correct = 0.0;
  double conflict_correct = 0.0;
  double consistent_correct = 0.0;
  Metrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || preds[i] >= num_classes) {
      throw std::out_of_range("compute_metrics: class index out of range");
    }
    const bool hit = labels[i] == preds[i];
    support[labels[i]] += 1.0;
    predicted[preds[i]] += 1.0;
    if (hit) {
      tp[labels[i]] += 1.0;
      correct += 1.0;
    }
    if (!conflicted.empty()) {
      if (conflicted[i] != 0) {
        ++m.conflict_count;
        conflict_correct += hit ? 1.0 : 0.0;
      } else {
        ++m.consistent_count;
        consistent_correct += hit ? 1.0 : 0.0;
      }
    }
  }
  const double n = static_cast<double>(labels.size());
  m.acc = correct / n;
  m.per_class_f1.assign(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double p = ratio(tp[c], predicted[c]);
    const double r = ratio(tp[c], support[c]);
    const double f1 = ratio(2.0 * p * r, p + r);
    m.per_class_f1[c] = f1;
    m.macro_precision += p;
    m.macro_recall += r;
    m.macro_f1 += f1;
    m.weighted_f1 += support[c] * f1;
    m.weighted_precision += support[c] * p;
  }
  const double k = static_cast<double>(num_classes);
  m.macro_precision /= k;
  m.macro_recall /= k;
  m.macro_f1 /= k;
  m.weighted_f1 /= n;
  m.weighted_precision /= n;
  m.conflict_subset_acc = ratio(conflict_correct, static_cast<double>(m.conflict_count));
  m.consistent_subset_acc = ratio(consistent_correct, static_cast<double>(m.consistent_count));
  return m;
}

Evaluation evaluate_outputs(const ModelParams& model, std::span<const ModalityBundle> samples,
                            PathwayAblation ablation) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  Evaluation ev;
  ev.outputs.reserve(samples.size());
  std::vector<std::size_t> labels;
  std::vector<std::size_t> preds;
  std::vector<std::uint8_t> flags;
  ForwardOptions opts;
  opts.ablation = ablation;
  for (const ModalityBundle& b : samples) {
    ev.outputs.push_back(forward(b, model, opts));
    labels.push_back(b.label);
    preds.push_back(ev.outputs.back().predicted);
    flags.push_back(b.conflicted ? 1 : 0);
  }
  ev.metrics = compute_metrics(labels, preds, model.config.num_classes, flags);
  return ev;
}

Metrics evaluate(const ModelParams& model, std::span<const ModalityBundle> samples,
                 PathwayAblation ablation) {
  return evaluate_outputs(model, samples, ablation).metrics;
}

}  // namespace cdpr
