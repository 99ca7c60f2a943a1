// Inconsistency perception: deviation geometry over private features,
// prototype-matched conflict energy, statistical calibration from unimodal
// predictions, per-modality reliability weights and the global gate lambda.
#pragma once

#include <array>
#include <string>

#include "cdpr/autodiff.hpp"
#include "cdpr/layers.hpp"
#include "cdpr/synthdata.hpp"

namespace cdpr {

struct PerceptionParams {
  AffineParams inc;                      // 3d_h -> d_h
  Mat proto;                             // d_h x 1 conflict prototype
  std::array<AffineParams, 3> unimodal;  // d_h -> C each
  AffineParams stat;                     // 4 -> 1
  AffineParams unc;                      // 3 -> d_h
  MlpParams trust;                       // d_h -> d_h -> 3
  AffineParams con;                      // 1 -> 1
  double tau = 1.0;
  Activation activation = Activation::Tanh;

  static PerceptionParams init(std::size_t hidden_dim, std::size_t num_classes, double tau,
                               Rng& rng);
};

template <class Params, class F>
void visit_perception(Params& p, F&& f) {
  visit_affine("perception.inc", p.inc, f);
  f("perception.proto", p.proto);
  for (Modality m : kModalities) {
    visit_affine(std::string("perception.unimodal.") + modality_code(m), p.unimodal[index_of(m)], f);
  }
  visit_affine("perception.stat", p.stat, f);
  visit_affine("perception.unc", p.unc, f);
  visit_mlp("perception.trust", p.trust, f);
  visit_affine("perception.con", p.con, f);
}

struct Deviations {
  ad::Var centroid;
  std::array<ad::Var, 3> delta;
};

struct ConflictGate {
  ad::Var eta_conf;
  ad::Var v_conf;
};

struct ConflictVars {
  Deviations deviations;
  ad::Var e_diff;
  ad::Var eta_sem;
  std::array<ad::Var, 3> probs;
  ad::Var d_js;
  std::array<ad::Var, 3> uncertainty;
  ad::Var beta_stat;
  ConflictGate gate;
  ad::Var weights;  // 3 x 1
  ad::Var lambda;
};

/// Every intermediate of the perception chain for one sample.
struct ConflictReport {
  Vec centroid;
  std::array<Vec, 3> delta;
  Vec e_diff;
  double eta_sem = 0.0;
  std::array<Vec, 3> probs;
  double d_js = 0.0;
  std::array<double, 3> uncertainty{};
  double beta_stat = 0.0;
  double eta_conf = 0.0;
  Vec v_conf;
  std::array<double, 3> weights{};
  double lambda = 0.0;
};

/// c = mean of the private features, delta_m = |P_m - c|.
Deviations deviations(const std::array<ad::Var, 3>& priv);
ad::Var difference_vector(ad::Tape& tape, const std::array<ad::Var, 3>& delta,
                          const PerceptionParams& params);
/// tau * cos(E_diff, v_proto).
ad::Var semantic_energy(ad::Tape& tape, ad::Var e_diff, const PerceptionParams& params);
ad::Var unimodal_predict(ad::Tape& tape, ad::Var priv, Modality m, const PerceptionParams& params);
/// W_stat [D_JS; U_t; U_v; U_a] + b_stat.
ad::Var statistical_bias(ad::Tape& tape, ad::Var d_js, const std::array<ad::Var, 3>& uncertainty,
                         const PerceptionParams& params);
/// eta_conf = eta_sem + beta_stat, V_conf = sigmoid(eta_conf) * E_diff.
ConflictGate conflict_vector(ad::Var eta_sem, ad::Var beta_stat, ad::Var e_diff);
/// softmax(MLP_trust(V_conf + MLP_unc([U_t; U_v; U_a]))).
ad::Var reliability_weights(ad::Tape& tape, ad::Var v_conf,
                            const std::array<ad::Var, 3>& uncertainty,
                            const PerceptionParams& params);
/// sigmoid(tanh(||V_conf||) + MLP_con(D_JS)).
ad::Var gating_factor(ad::Tape& tape, ad::Var v_conf, ad::Var d_js, const PerceptionParams& params);

ConflictVars perceive(ad::Tape& tape, const std::array<ad::Var, 3>& priv,
                      const PerceptionParams& params);

ConflictReport to_report(const ConflictVars& vars);

// Value-level forms of the parameter-free measures.
double js_divergence(const Vec& p_t, const Vec& p_v, const Vec& p_a);
double normalized_entropy(const Vec& p);

/// Column names of the per-sample gating diagnostic row.
std::string conflict_csv_header();
std::string conflict_csv_row(const ConflictReport& r);

}  // namespace cdpr
