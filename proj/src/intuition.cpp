#include "cdpr/intuition.hpp"

namespace cdpr {

IntuitionParams IntuitionParams::init(std::size_t feature_dim, std::size_t hidden_dim, Rng& rng) {
  IntuitionParams p;
  p.raw = AffineParams::init(hidden_dim, 3 * feature_dim, rng);
  p.syn = AffineParams::init(hidden_dim, 3 * hidden_dim, rng);
  p.alpha = Mat::scalar(0.0);
  p.ln_gain = Mat(hidden_dim, 1, 1.0);
  p.ln_bias = Mat(hidden_dim, 1, 0.0);
  return p;
}

ad::Var fuse_raw(ad::Tape& tape, const std::array<ad::Var, 3>& features,
                 const IntuitionParams& params) {
  ad::Var x = ad::concat({features[0], features[1], features[2]});
  if (x.value().size() != params.raw.in_dim()) {
    throw ShapeError("fuse_raw: concatenated features have length " +
                     std::to_string(x.value().size()) + ", expected " +
                     std::to_string(params.raw.in_dim()));
  }
  return activate(apply(tape, params.raw, x), params.activation);
}

ad::Var synergy(ad::Tape& tape, const std::array<ad::Var, 3>& shared,
                const IntuitionParams& params) {
  const auto& [s_t, s_v, s_a] = shared;
  ad::Var x = ad::concat({s_t * s_v, s_t * s_a, s_v * s_a});
  if (x.value().size() != params.syn.in_dim()) throw ShapeError("synergy: dimension mismatch");
  return activate(apply(tape, params.syn, x), params.activation);
}

ad::Var residual_fuse(ad::Tape& tape, ad::Var z_raw, ad::Var z_syn,
                      const IntuitionParams& params) {
  ad::Var mixed = z_raw + ad::scale_by(tape.param(params.alpha), z_syn);
  return ad::layer_norm(mixed, tape.param(params.ln_gain), tape.param(params.ln_bias),
                        params.ln_eps);
}

IntuitionVars intuition_forward(ad::Tape& tape, const std::array<ad::Var, 3>& features,
                                const DecoupledVars& decoupled, const IntuitionParams& params) {
  IntuitionVars v;
  v.z_raw = fuse_raw(tape, features, params);
  v.z_syn = synergy(tape, decoupled.shared, params);
  v.z_int = residual_fuse(tape, v.z_raw, v.z_syn, params);
  return v;
}

Vec fuse_raw(const Vec& h_t, const Vec& h_v, const Vec& h_a, const IntuitionParams& params) {
  ad::Tape tape;
  return fuse_raw(tape, {tape.constant(h_t), tape.constant(h_v), tape.constant(h_a)}, params)
      .value()
      .to_vec();
}

Vec synergy(const Vec& s_t, const Vec& s_v, const Vec& s_a, const IntuitionParams& params) {
  ad::Tape tape;
  return synergy(tape, {tape.constant(s_t), tape.constant(s_v), tape.constant(s_a)}, params)
      .value()
      .to_vec();
}

}  // namespace cdpr
