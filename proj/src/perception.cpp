#include "cdpr/perception.hpp"

#include <cmath>

#include "cdpr/format.hpp"

namespace cdpr {

PerceptionParams PerceptionParams::init(std::size_t hidden_dim, std::size_t num_classes,
                                        double tau, Rng& rng) {
  if (!(tau > 0.0)) throw ConfigError("temperature tau must be > 0");
  PerceptionParams p;
  p.inc = AffineParams::init(hidden_dim, 3 * hidden_dim, rng);
  p.proto = Mat(hidden_dim, 1);
  const double proto_scale = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (double& x : p.proto.span()) x = proto_scale * rng.normal();
  for (AffineParams& a : p.unimodal) a = AffineParams::init(num_classes, hidden_dim, rng);
  p.stat = AffineParams::init(1, 4, rng);
  p.unc = AffineParams::init(hidden_dim, 3, rng);
  p.trust = MlpParams::init(3, hidden_dim, hidden_dim, rng);
  p.con = AffineParams::init(1, 1, rng);
  p.tau = tau;
  return p;
}

Deviations deviations(const std::array<ad::Var, 3>& priv) {
  const auto& [p_t, p_v, p_a] = priv;
  Deviations d;
  d.centroid = (1.0 / 3.0) * (p_t + p_v + p_a);
  for (std::size_t i = 0; i < 3; ++i) d.delta[i] = ad::abs(priv[i] - d.centroid);
  return d;
}

ad::Var difference_vector(ad::Tape& tape, const std::array<ad::Var, 3>& delta,
                          const PerceptionParams& params) {
  ad::Var x = ad::concat({delta[0], delta[1], delta[2]});
  if (x.value().size() != params.inc.in_dim()) throw ShapeError("difference_vector: dimension mismatch");
  return activate(apply(tape, params.inc, x), params.activation);
}

ad::Var semantic_energy(ad::Tape& tape, ad::Var e_diff, const PerceptionParams& params) {
  return params.tau * ad::cosine(e_diff, tape.param(params.proto));
}

ad::Var unimodal_predict(ad::Tape& tape, ad::Var priv, Modality m, const PerceptionParams& params) {
  return ad::softmax(apply(tape, params.unimodal[index_of(m)], priv));
}

ad::Var statistical_bias(ad::Tape& tape, ad::Var d_js, const std::array<ad::Var, 3>& uncertainty,
                         const PerceptionParams& params) {
  ad::Var stats = ad::concat({d_js, uncertainty[0], uncertainty[1], uncertainty[2]});
  return apply(tape, params.stat, stats);
}

ConflictGate conflict_vector(ad::Var eta_sem, ad::Var beta_stat, ad::Var e_diff) {
  ConflictGate g;
  g.eta_conf = eta_sem + beta_stat;
  g.v_conf = ad::scale_by(ad::sigmoid(g.eta_conf), e_diff);
  return g;
}

ad::Var reliability_weights(ad::Tape& tape, ad::Var v_conf,
                            const std::array<ad::Var, 3>& uncertainty,
                            const PerceptionParams& params) {
  ad::Var u = ad::concat({uncertainty[0], uncertainty[1], uncertainty[2]});
  ad::Var lifted = apply(tape, params.unc, u);
  ad::Var logits = apply(tape, params.trust, v_conf + lifted, params.activation);
  return ad::softmax(logits);
}

ad::Var gating_factor(ad::Tape& tape, ad::Var v_conf, ad::Var d_js, const PerceptionParams& params) {
  return ad::sigmoid(ad::tanh(ad::norm2(v_conf)) + apply(tape, params.con, d_js));
}

ConflictVars perceive(ad::Tape& tape, const std::array<ad::Var, 3>& priv,
                      const PerceptionParams& params) {
  ConflictVars v;
  v.deviations = deviations(priv);
  v.e_diff = difference_vector(tape, v.deviations.delta, params);
  v.eta_sem = semantic_energy(tape, v.e_diff, params);
  for (Modality m : kModalities) {
    const std::size_t i = index_of(m);
    v.probs[i] = unimodal_predict(tape, priv[i], m, params);
    v.uncertainty[i] = ad::normalized_entropy(v.probs[i]);
  }
  v.d_js = ad::js_divergence(v.probs[0], v.probs[1], v.probs[2]);
  v.beta_stat = statistical_bias(tape, v.d_js, v.uncertainty, params);
  v.gate = conflict_vector(v.eta_sem, v.beta_stat, v.e_diff);
  v.weights = reliability_weights(tape, v.gate.v_conf, v.uncertainty, params);
  v.lambda = gating_factor(tape, v.gate.v_conf, v.d_js, params);
  return v;
}

ConflictReport to_report(const ConflictVars& v) {
  ConflictReport r;
  r.centroid = v.deviations.centroid.value().to_vec();
  for (std::size_t i = 0; i < 3; ++i) {
    r.delta[i] = v.deviations.delta[i].value().to_vec();
    r.probs[i] = v.probs[i].value().to_vec();
    r.uncertainty[i] = v.uncertainty[i].scalar();
    r.weights[i] = v.weights.value()[i];
  }
  r.e_diff = v.e_diff.value().to_vec();
  r.eta_sem = v.eta_sem.scalar();
  r.d_js = v.d_js.scalar();
  r.beta_stat = v.beta_stat.scalar();
  r.eta_conf = v.gate.eta_conf.scalar();
  r.v_conf = v.gate.v_conf.value().to_vec();
  r.lambda = v.lambda.scalar();
  return r;
}

double js_divergence(const Vec& p_t, const Vec& p_v, const Vec& p_a) {
  ad::Tape tape;
  return ad::js_divergence(tape.constant(p_t), tape.constant(p_v), tape.constant(p_a)).scalar();
}

double normalized_entropy(const Vec& p) {
  ad::Tape tape;
  return ad::normalized_entropy(tape.constant(p)).scalar();
}

std::string conflict_csv_header() {
  return "eta_sem,d_js,u_t,u_v,u_a,beta_stat,eta_conf,w_t,w_v,w_a,lambda";
}

std::string conflict_csv_row(const ConflictReport& r) {
  std::string row;
  for (double x : {r.eta_sem, r.d_js, r.uncertainty[0], r.uncertainty[1], r.uncertainty[2],
                   r.beta_stat, r.eta_conf, r.weights[0], r.weights[1], r.weights[2], r.lambda}) {
    if (!row.empty()) row += ',';
    row += format_real(x);
  }
  return row;
}

}  // namespace cdpr
