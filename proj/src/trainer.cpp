#include "cdpr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cdpr/format.hpp"

namespace cdpr {

namespace {

enum Stream : std::uint64_t { kShuffle = 21, kDropout = 22 };

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<Mat*> param_list(ModelParams& model) {
  std::vector<Mat*> out;
  for_each_param(model, [&](const std::string&, Mat& m) { out.push_back(&m); });
  return out;
}

std::vector<std::string> param_names(const ModelParams& model) {
  std::vector<std::string> out;
  for_each_param(model, [&](const std::string& name, const Mat&) { out.push_back(name); });
  return out;
}

/// First non-finite loss component, in computation order.
std::optional<std::string> first_nonfinite(const LossValues& v) {
  const std::pair<const char*, double> parts[] = {{"L_cls", v.cls},   {"L_rea", v.rea},
                                                  {"L_uni", v.uni},   {"L_diff", v.diff},
                                                  {"L_sim", v.sim},   {"L_total", v.total}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) return std::string(name);
  }
  return std::nullopt;
}

LossValues& operator+=(LossValues& a, const LossValues& b) {
  a.cls += b.cls;
  a.rea += b.rea;
  a.uni += b.uni;
  a.diff += b.diff;
  a.sim += b.sim;
  a.task += b.task;
  a.total += b.total;
  return a;
}

LossValues scaled(LossValues v, double s) {
  v.cls *= s;
  v.rea *= s;
  v.uni *= s;
  v.diff *= s;
  v.sim *= s;
  v.task *= s;
  v.total *= s;
  return v;
}

}  // namespace

void TrainConfig::validate() const {
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(warmup_proportion >= 0.0 && warmup_proportion < 1.0)) {
    throw ConfigError("warmup_proportion must lie in [0, 1)");
  }
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

TrainingDiverged::TrainingDiverged(std::string component, int epoch, std::size_t step)
    : std::runtime_error("training diverged: " + component + " became non-finite at epoch " +
                         std::to_string(epoch) + ", step " + std::to_string(step)),
      component_(std::move(component)) {}

AdamW::AdamW(const ModelParams& model, const TrainConfig& config)
    : beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      epsilon_(config.adam_epsilon),
      weight_decay_(config.weight_decay) {
  for_each_param(model, [&](const std::string& name, const Mat& m) {
    m_.emplace_back(m.rows(), m.cols());
    v_.emplace_back(m.rows(), m.cols());
    decay_.push_back(decays(name));
  });
}

bool AdamW::decays(const std::string& name) {
  return !(ends_with(name, ".bias") || ends_with(name, "ln_gain") || ends_with(name, "ln_bias") ||
           ends_with(name, "alpha"));
}

void AdamW::step(ModelParams& model, const std::vector<Mat>& grads, double learning_rate) {
  std::vector<Mat*> params = param_list(model);
  if (grads.size() != params.size()) throw ShapeError("AdamW::step: gradient count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Mat& theta = *params[p];
    const Mat& g = grads[p];
    Mat& m = m_[p];
    Mat& v = v_[p];
    const double wd = decay_[p] ? weight_decay_ : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= learning_rate * (m_hat / (std::sqrt(v_hat) + epsilon_));
      theta[i] -= learning_rate * wd * theta[i];
    }
  }
}

double scheduled_lr(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
  const auto warmup = static_cast<std::size_t>(config.warmup_proportion * static_cast<double>(total_steps));
  if (warmup == 0 || step >= warmup) return config.learning_rate;
  return config.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

BatchEvaluation evaluate_batch(const ModelParams& model, std::span<const ModalityBundle> batch,
                               const LossConfig& loss, const ForwardOptions& options,
                               std::span<const DropoutMasks> masks, bool with_grads) {
  const bool train = options.mode == Mode::Train;
  if (train && !masks.empty() && masks.size() != batch.size()) {
    throw ShapeError("evaluate_batch: one dropout mask set per sample required");
  }
  ad::Tape tape;
  std::vector<SampleGraph> graphs;
  std::vector<std::size_t> labels;
  graphs.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ForwardOptions o = options;
    o.masks = (train && !masks.empty()) ? &masks[i] : nullptr;
    graphs.push_back(build_forward(tape, batch[i], model, o));
    labels.push_back(batch[i].label);
  }
  const LossTerms terms = build_losses(tape, graphs, labels, loss);
  BatchEvaluation out;
  out.loss = values_of(terms);
  out.kink_signature = tape.kink_signature();
  if (with_grads && std::isfinite(out.loss.total)) {
    tape.backward(terms.total);
    for_each_param(model, [&](const std::string&, const Mat& m) { out.grads.push_back(tape.grad_of(m)); });
  }
  return out;
}

TrainResult train(ModelParams model, const Dataset& data, const TrainConfig& config,
                  const LossConfig& loss) {
  config.validate();
  loss.validate();
  if (data.train.empty() || data.val.empty()) {
    throw std::invalid_argument("train: train and validation splits must be non-empty");
  }
  const Rng root(config.seed);
  Rng shuffle_rng = root.substream(kShuffle);
  Rng dropout_rng = root.substream(kDropout);
  const std::vector<std::string> names = param_names(model);

  const std::size_t n = data.train.size();
  const std::size_t batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = batches_per_epoch * static_cast<std::size_t>(config.max_epochs);

  AdamW optimizer(model, config);
  TrainResult result{model, {}};
  double best_acc = -1.0;
  int since_best = 0;
  std::vector<std::size_t> order(n);
  std::vector<ModalityBundle> batch;
  std::vector<DropoutMasks> masks;
  ForwardOptions opts;
  opts.mode = Mode::Train;
  opts.ablation = config.ablation;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.below(i + 1)]);

    LossValues epoch_loss;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(n, begin + config.batch_size);
      batch.clear();
      masks.clear();
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(data.train[order[i]]);
        masks.push_back(DropoutMasks::sample(model.config.hidden_dim, config.dropout, dropout_rng));
      }
      BatchEvaluation ev = evaluate_batch(model, batch, loss, opts, masks);
      if (auto bad = first_nonfinite(ev.loss)) throw TrainingDiverged(*bad, epoch, optimizer.steps());
      for (std::size_t p = 0; p < ev.grads.size(); ++p) {
        if (!all_finite(ev.grads[p].span())) {
          throw TrainingDiverged("gradient of " + names[p], epoch, optimizer.steps());
        }
      }
      optimizer.step(model, ev.grads, scheduled_lr(config, optimizer.steps(), total_steps));
      epoch_loss += ev.loss;
    }

    const Metrics val = evaluate(model, data.val, config.ablation);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = scaled(epoch_loss, 1.0 / static_cast<double>(batches_per_epoch));
    rec.val_acc = config.val_metric_hook ? config.val_metric_hook(epoch, val.acc) : val.acc;
    rec.val_macro_f1 = val.macro_f1;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.history.epochs.push_back(rec);

    if (rec.val_acc > best_acc) {
      best_acc = rec.val_acc;
      since_best = 0;
      result.model = model;
      result.history.selected_epoch = epoch;
    } else if (++since_best >= config.patience) {
      result.history.early_stopped = true;
      break;
    }
  }
  return result;
}

std::string history_csv(const TrainHistory& history) {
  std::ostringstream out;
  out << "epoch,L_cls,L_rea,L_uni,L_diff,L_sim,L_total,val_acc,val_macro_f1,selected\n";
  for (const EpochRecord& r : history.epochs) {
    out << r.epoch;
    for (double x : {r.train_loss.cls, r.train_loss.rea, r.train_loss.uni, r.train_loss.diff,
                     r.train_loss.sim, r.train_loss.total, r.val_acc, r.val_macro_f1}) {
      out << ',' << format_real(x);
    }
    out << ',' << (r.epoch == history.selected_epoch ? 1 : 0) << '\n';
  }
  return out.str();
}

GradCheckReport grad_check(const ModelParams& model, std::span<const ModalityBundle> batch,
                           const GradCheckOptions& options) {
  ForwardOptions fwd;
  fwd.mode = Mode::Eval;
  fwd.ablation = options.ablation;
  const BatchEvaluation base = evaluate_batch(model, batch, options.loss, fwd);
  const std::vector<std::string> names = param_names(model);

  ModelParams work = model;
  std::vector<Mat*> params = param_list(work);
  Rng rng(options.seed);
  GradCheckReport report;

  auto probe_loss = [&](Mat& m, std::size_t i, double value) {
    const double saved = m[i];
    m[i] = value;
    BatchEvaluation ev = evaluate_batch(work, batch, options.loss, fwd, {}, false);
    m[i] = saved;
    return ev;
  };

  for (std::size_t p = 0; p < params.size(); ++p) {
    Mat& tensor = *params[p];
    Mat analytic = base.grads[p];
    if (options.corrupt_group && *options.corrupt_group == names[p]) {
      for (double& g : analytic.span()) g *= options.corrupt_scale;
    }
    // Random visiting order; the first coords_per_group smooth probes are kept.
    std::vector<std::size_t> pool(tensor.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.below(i)]);

    GroupCheck group{names[p], 0, 0.0};
    for (std::size_t k = 0; k < pool.size() && group.probes < options.coords_per_group; ++k) {
      const std::size_t i = pool[k];
      const double x = tensor[i];
      const BatchEvaluation plus = probe_loss(tensor, i, x + options.epsilon);
      const BatchEvaluation minus = probe_loss(tensor, i, x - options.epsilon);
      if (plus.kink_signature != base.kink_signature || minus.kink_signature != base.kink_signature) {
        ++report.resampled;
        continue;
      }
      const double numeric = (plus.loss.total - minus.loss.total) / (2.0 * options.epsilon);
      const double a = analytic[i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      group.max_rel_error = std::max(group.max_rel_error, rel);
      ++group.probes;
    }
    report.total_probes += group.probes;
    if (group.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = group.max_rel_error;
      report.worst_group = group.name;
    }
    report.groups.push_back(std::move(group));
  }
  return report;
}

}  // namespace cdpr
