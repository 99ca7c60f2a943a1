// Straight-line re-evaluation of the full forward pass with plain loops.
// Shares nothing with the library besides the parameter containers.
#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "cdpr/fusion.hpp"

namespace ref {

using V = std::vector<double>;

inline V affine(const cdpr::Mat& w, const V& x, const cdpr::Mat& b) {
  V y(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double acc = b(r, 0);
    for (std::size_t c = 0; c < w.cols(); ++c) acc += w(r, c) * x[c];
    y[r] = acc;
  }
  return y;
}

inline V affine(const cdpr::AffineParams& p, const V& x) { return affine(p.weight, x, p.bias); }

inline V squash(V x) {
  for (double& v : x) v = std::tanh(v);
  return x;
}

inline V mlp(const cdpr::MlpParams& p, const V& x) { return affine(p.second, squash(affine(p.first, x))); }

inline V cat(const V& a, const V& b, const V& c) {
  V out = a;
  out.insert(out.end(), b.begin(), b.end());
  out.insert(out.end(), c.begin(), c.end());
  return out;
}

inline V probs(const V& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  V e(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) z += (e[i] = std::exp(logits[i] - mx));
  for (double& v : e) v /= z;
  return e;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

struct Trace {
  V shared[3];
  V priv[3];
  V z_raw;
  V z_syn;
  V z_int;
  V centroid;
  V delta[3];
  V e_diff;
  double eta_sem = 0.0;
  V unimodal[3];
  double d_js = 0.0;
  double uncertainty[3] = {};
  double beta_stat = 0.0;
  double eta_conf = 0.0;
  V v_conf;
  double weights[3] = {};
  double lambda = 0.0;
  V z_rea;
  V z_final;
  V final_probs;
  V reasoning_probs;
};

inline Trace run(const cdpr::ModelParams& m, const cdpr::ModalityBundle& b,
                 std::optional<double> lambda_override = std::nullopt) {
  Trace t;
  const std::size_t dh = m.config.hidden_dim;
  const double nc = static_cast<double>(m.config.num_classes);
  V h[3];
  for (int k = 0; k < 3; ++k) h[k] = V(b.features[k].begin(), b.features[k].end());
  for (int k = 0; k < 3; ++k) {
    const auto& enc = m.decoupler.shared.size() == 1 ? m.decoupler.shared[0] : m.decoupler.shared[k];
    t.shared[k] = mlp(enc, h[k]);
    t.priv[k] = mlp(m.decoupler.priv[k], h[k]);
  }

  t.z_raw = squash(affine(m.intuition.raw, cat(h[0], h[1], h[2])));
  V tv(dh), ta(dh), va(dh);
  for (std::size_t i = 0; i < dh; ++i) {
    tv[i] = t.shared[0][i] * t.shared[1][i];
    ta[i] = t.shared[0][i] * t.shared[2][i];
    va[i] = t.shared[1][i] * t.shared[2][i];
  }
  t.z_syn = squash(affine(m.intuition.syn, cat(tv, ta, va)));
  const double alpha = m.intuition.alpha(0, 0);
  V mixed(dh);
  double mean = 0.0;
  for (std::size_t i = 0; i < dh; ++i) mean += (mixed[i] = t.z_raw[i] + alpha * t.z_syn[i]);
  mean /= static_cast<double>(dh);
  double var = 0.0;
  for (double v : mixed) var += (v - mean) * (v - mean);
  var /= static_cast<double>(dh);
  t.z_int.resize(dh);
  for (std::size_t i = 0; i < dh; ++i) {
    t.z_int[i] = m.intuition.ln_gain(i, 0) * (mixed[i] - mean) / std::sqrt(var + m.intuition.ln_eps) +
                 m.intuition.ln_bias(i, 0);
  }

  t.centroid.assign(dh, 0.0);
  for (std::size_t i = 0; i < dh; ++i) t.centroid[i] = (t.priv[0][i] + t.priv[1][i] + t.priv[2][i]) / 3.0;
  for (int k = 0; k < 3; ++k) {
    t.delta[k].resize(dh);
    for (std::size_t i = 0; i < dh; ++i) t.delta[k][i] = std::fabs(t.priv[k][i] - t.centroid[i]);
  }
  const auto& pp = m.perception;
  t.e_diff = squash(affine(pp.inc, cat(t.delta[0], t.delta[1], t.delta[2])));
  double ep = 0.0, ee = 0.0, qq = 0.0;
  for (std::size_t i = 0; i < dh; ++i) {
    ep += t.e_diff[i] * pp.proto(i, 0);
    ee += t.e_diff[i] * t.e_diff[i];
    qq += pp.proto(i, 0) * pp.proto(i, 0);
  }
  t.eta_sem = (ee == 0.0 || qq == 0.0) ? 0.0 : pp.tau * ep / (std::sqrt(ee) * std::sqrt(qq));

  for (int k = 0; k < 3; ++k) {
    t.unimodal[k] = probs(affine(pp.unimodal[k], t.priv[k]));
    double h_sum = 0.0;
    for (double p : t.unimodal[k]) h_sum -= xlogy(p, p);
    t.uncertainty[k] = h_sum / std::log(nc);
  }
  for (std::size_t c = 0; c < m.config.num_classes; ++c) {
    const double avg = (t.unimodal[0][c] + t.unimodal[1][c] + t.unimodal[2][c]) / 3.0;
    for (int k = 0; k < 3; ++k) {
      const double p = t.unimodal[k][c];
      if (p > 0.0) t.d_js += p * std::log(p / avg) / 3.0;
    }
  }
  t.beta_stat = affine(pp.stat, V{t.d_js, t.uncertainty[0], t.uncertainty[1], t.uncertainty[2]})[0];
  t.eta_conf = t.eta_sem + t.beta_stat;
  const double gate = logistic(t.eta_conf);
  t.v_conf.resize(dh);
  double vnorm = 0.0;
  for (std::size_t i = 0; i < dh; ++i) {
    t.v_conf[i] = gate * t.e_diff[i];
    vnorm += t.v_conf[i] * t.v_conf[i];
  }
  vnorm = std::sqrt(vnorm);

  V lifted = affine(pp.unc, V{t.uncertainty[0], t.uncertainty[1], t.uncertainty[2]});
  for (std::size_t i = 0; i < dh; ++i) lifted[i] += t.v_conf[i];
  const V w = probs(mlp(pp.trust, lifted));
  for (int k = 0; k < 3; ++k) t.weights[k] = w[k];
  t.lambda = logistic(std::tanh(vnorm) + affine(pp.con, V{t.d_js})[0]);
  const double lam = t.lambda = lambda_override.value_or(t.lambda);

  t.z_rea.assign(dh, 0.0);
  t.z_final.resize(dh);
  for (std::size_t i = 0; i < dh; ++i) {
    for (int k = 0; k < 3; ++k) t.z_rea[i] += t.weights[k] * t.priv[k][i];
    t.z_final[i] = (1.0 - lam) * t.z_int[i] + lam * t.z_rea[i];
  }
  t.final_probs = probs(affine(m.fusion.classifier, t.z_final));
  t.reasoning_probs = probs(affine(m.fusion.reasoning_head, t.z_rea));
  return t;
}

/// Largest absolute difference between the library output and the trace.
inline double max_deviation(const cdpr::ModelOutput& out, const Trace& t) {
  double worst = 0.0;
  auto cmp = [&](const cdpr::Vec& a, const V& b) {
    for (std::size_t i = 0; i < b.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  };
  auto cmp1 = [&](double a, double b) { worst = std::max(worst, std::fabs(a - b)); };
  cmp(out.z_int, t.z_int);
  cmp(out.z_rea, t.z_rea);
  cmp(out.z_final, t.z_final);
  cmp(out.final_probs, t.final_probs);
  cmp(out.reasoning_probs, t.reasoning_probs);
  const auto& r = out.report;
  cmp(r.centroid, t.centroid);
  cmp(r.e_diff, t.e_diff);
  cmp(r.v_conf, t.v_conf);
  for (int k = 0; k < 3; ++k) {
    cmp(r.delta[k], t.delta[k]);
    cmp(r.probs[k], t.unimodal[k]);
    cmp1(r.uncertainty[k], t.uncertainty[k]);
    cmp1(r.weights[k], t.weights[k]);
  }
  cmp1(r.eta_sem, t.eta_sem);
  cmp1(r.d_js, t.d_js);
  cmp1(r.beta_stat, t.beta_stat);
  cmp1(r.eta_conf, t.eta_conf);
  cmp1(r.lambda, t.lambda);
  return worst;
}

/// Random bundle with N(0, scale^2) features.
inline cdpr::ModalityBundle random_bundle(std::size_t d, std::size_t num_classes, cdpr::Rng& rng,
                                          double scale = 1.0) {
  cdpr::ModalityBundle b;
  for (auto& f : b.features) {
    f = cdpr::Vec(d);
    for (double& x : f.span()) x = scale * rng.normal();
  }
  b.label = static_cast<std::size_t>(rng.below(num_classes));
  return b;
}

/// Perturbs every parameter of a fresh model so no tensor sits at its init value
/// (alpha, layer-norm gain/bias and biases are otherwise exactly 0 or 1).
inline void jitter(cdpr::ModelParams& m, cdpr::Rng& rng, double scale = 0.3) {
  cdpr::for_each_param(m, [&](const std::string&, cdpr::Mat& t) {
    for (double& x : t.span()) x += scale * rng.normal();
  });
}

}  // namespace ref
