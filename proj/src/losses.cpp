#include "cdpr/losses.hpp"

#include <atomic>
#include <iostream>

namespace cdpr {

namespace {

std::atomic<std::size_t> g_small_batch_warnings{0};

bool batch_large_enough(std::size_t n, const char* loss) {
  if (n >= 2) return true;
  ++g_small_batch_warnings;
  std::cerr << "warning: " << loss << " needs a batch of at least 2 samples, got " << n
            << "; term skipped\n";
  return false;
}

ad::Var zero(ad::Tape& tape) { return tape.constant(Mat::scalar(0.0)); }

ad::Var mean_of(ad::Tape& tape, const std::vector<ad::Var>& terms) {
  if (terms.empty()) return zero(tape);
  ad::Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = acc + terms[i];
  return (1.0 / static_cast<double>(terms.size())) * acc;
}

std::array<ad::Var, 3> constants(ad::Tape& tape, const std::array<Mat, 3>& mats) {
  return {tape.constant(mats[0]), tape.constant(mats[1]), tape.constant(mats[2])};
}

}  // namespace

void LossConfig::validate() const {
  for (double w : {gamma_rea, gamma_uni, beta_diff, beta_sim}) {
    if (!(w >= 0.0)) throw ConfigError("loss weights must be >= 0");
  }
  if (cmd_order < 1) throw ConfigError("cmd_order must be >= 1");
  if (!(prob_floor > 0.0)) throw ConfigError("prob_floor must be > 0");
}

LossValues values_of(const LossTerms& t) {
  return LossValues{t.cls.scalar(),  t.rea.scalar(),  t.uni.scalar(),  t.diff.scalar(),
                    t.sim.scalar(),  t.task.scalar(), t.total.scalar()};
}

ad::Var cross_entropy(ad::Var probs, std::size_t label, double floor) {
  return ad::nll(probs, label, floor);
}

ad::Var diff_loss(ad::Tape& tape, const std::array<ad::Var, 3>& shared,
                  const std::array<ad::Var, 3>& priv) {
  const std::size_t n = priv[0].value().rows();
  if (!batch_large_enough(n, "diff_loss")) return zero(tape);
  const double width = static_cast<double>(priv[0].value().cols());
  const double norm = 1.0 / ((static_cast<double>(n) * width) * (static_cast<double>(n) * width));
  std::array<ad::Var, 3> s;
  std::array<ad::Var, 3> p;
  for (std::size_t m = 0; m < 3; ++m) {
    s[m] = ad::center_columns(shared[m]);
    p[m] = ad::center_columns(priv[m]);
  }
  std::vector<ad::Var> terms;
  for (std::size_t m = 0; m < 3; ++m) terms.push_back(ad::frob_sq(ad::matmul_tn(p[m], s[m])));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i != j) terms.push_back(ad::frob_sq(ad::matmul_tn(p[i], p[j])));
    }
  }
  ad::Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = acc + terms[i];
  return norm * acc;
}

ad::Var cmd(ad::Tape& tape, ad::Var a, ad::Var b, int order) {
  if (order < 1) throw ConfigError("cmd: order must be >= 1");
  if (!a.value().same_shape(b.value())) throw ShapeError("cmd: batch shapes differ");
  if (!batch_large_enough(a.value().rows(), "cmd")) return zero(tape);
  ad::Var result = ad::norm2(ad::col_mean(a) - ad::col_mean(b));
  if (order >= 2) {
    ad::Var ca = ad::center_columns(a);
    ad::Var cb = ad::center_columns(b);
    for (int k = 2; k <= order; ++k) {
      ad::Var mk_a = ad::col_mean(ad::pow(ca, k));
      ad::Var mk_b = ad::col_mean(ad::pow(cb, k));
      result = result + ad::norm2(mk_a - mk_b);
    }
  }
  return result;
}

ad::Var sim_loss(ad::Tape& tape, const std::array<ad::Var, 3>& shared, int order) {
  if (!batch_large_enough(shared[0].value().rows(), "sim_loss")) return zero(tape);
  ad::Var total = cmd(tape, shared[0], shared[1], order) + cmd(tape, shared[0], shared[2], order) +
                  cmd(tape, shared[1], shared[2], order);
  return (1.0 / 3.0) * total;
}

LossTerms build_losses(ad::Tape& tape, std::span<const SampleGraph> batch,
                       std::span<const std::size_t> labels, const LossConfig& config) {
  if (batch.size() != labels.size()) throw ShapeError("build_losses: label count mismatch");
  if (batch.empty()) throw ShapeError("build_losses: empty batch");
  std::vector<ad::Var> cls;
  std::vector<ad::Var> rea;
  std::vector<ad::Var> uni;
  std::array<std::vector<ad::Var>, 3> shared_rows;
  std::array<std::vector<ad::Var>, 3> priv_rows;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const SampleGraph& g = batch[i];
    cls.push_back(cross_entropy(g.final_probs, labels[i], config.prob_floor));
    rea.push_back(cross_entropy(g.reasoning_probs, labels[i], config.prob_floor));
    uni.push_back(cross_entropy(g.conflict.probs[0], labels[i], config.prob_floor) +
                  cross_entropy(g.conflict.probs[1], labels[i], config.prob_floor) +
                  cross_entropy(g.conflict.probs[2], labels[i], config.prob_floor));
    for (std::size_t m = 0; m < 3; ++m) {
      shared_rows[m].push_back(g.decoupled.shared[m]);
      priv_rows[m].push_back(g.decoupled.priv[m]);
    }
  }
  std::array<ad::Var, 3> shared;
  std::array<ad::Var, 3> priv;
  for (std::size_t m = 0; m < 3; ++m) {
    shared[m] = ad::stack_rows(shared_rows[m]);
    priv[m] = ad::stack_rows(priv_rows[m]);
  }

  LossTerms t;
  t.cls = mean_of(tape, cls);
  t.rea = mean_of(tape, rea);
  t.uni = mean_of(tape, uni);
  t.diff = diff_loss(tape, shared, priv);
  t.sim = sim_loss(tape, shared, config.cmd_order);
  t.task = t.cls + ad::lin(t.rea, config.gamma_rea, 0.0) + ad::lin(t.uni, config.gamma_uni, 0.0);
  t.total = t.task + ad::lin(t.diff, config.beta_diff, 0.0) + ad::lin(t.sim, config.beta_sim, 0.0);
  return t;
}

double cross_entropy(const Vec& probs, std::size_t label) {
  ad::Tape tape;
  return cross_entropy(tape.constant(probs), label).scalar();
}

double diff_loss(const BatchFeatures& batch) {
  ad::Tape tape;
  return diff_loss(tape, constants(tape, batch.shared), constants(tape, batch.priv)).scalar();
}

double cmd(const Mat& a, const Mat& b, int order) {
  ad::Tape tape;
  return cmd(tape, tape.constant(a), tape.constant(b), order).scalar();
}

double sim_loss(const BatchFeatures& batch, int order) {
  ad::Tape tape;
  return sim_loss(tape, constants(tape, batch.shared), order).scalar();
}

double task_loss(std::span<const ModelOutput> outputs, std::span<const std::size_t> labels,
                 const LossConfig& config) {
  if (outputs.size() != labels.size()) throw ShapeError("task_loss: label count mismatch");
  if (outputs.empty()) throw ShapeError("task_loss: empty batch");
  double cls = 0.0;
  double rea = 0.0;
  double uni = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    cls += cross_entropy(outputs[i].final_probs, labels[i]);
    rea += cross_entropy(outputs[i].reasoning_probs, labels[i]);
    for (const Vec& p : outputs[i].report.probs) uni += cross_entropy(p, labels[i]);
  }
  const double n = static_cast<double>(outputs.size());
  return cls / n + config.gamma_rea * (rea / n) + config.gamma_uni * (uni / n);
}

double total_loss(double task, double diff, double sim, const LossConfig& config) {
  return task + config.beta_diff * diff + config.beta_sim * sim;
}

std::size_t small_batch_warnings() { return g_small_batch_warnings.load(); }

}  // namespace cdpr
