// Intuition pathway: raw-context projection, shared-feature synergy and the
// alpha-gated residual fusion, layer-normalized.
#pragma once

#include <array>

#include "cdpr/autodiff.hpp"
#include "cdpr/decoupler.hpp"
#include "cdpr/layers.hpp"

namespace cdpr {

struct IntuitionParams {
  AffineParams raw;  // 3d -> d_h
  AffineParams syn;  // 3d_h -> d_h
  Mat alpha;         // 1 x 1, starts at exactly 0
  Mat ln_gain;
  Mat ln_bias;
  Activation activation = Activation::Tanh;
  double ln_eps = 1e-5;

  static IntuitionParams init(std::size_t feature_dim, std::size_t hidden_dim, Rng& rng);
};

template <class Params, class F>
void visit_intuition(Params& p, F&& f) {
  visit_affine("intuition.raw", p.raw, f);
  visit_affine("intuition.syn", p.syn, f);
  f("intuition.alpha", p.alpha);
  f("intuition.ln_gain", p.ln_gain);
  f("intuition.ln_bias", p.ln_bias);
}

struct IntuitionVars {
  ad::Var z_raw;
  ad::Var z_syn;
  ad::Var z_int;
};

/// Z_raw = act(W [H_t; H_v; H_a] + b).
ad::Var fuse_raw(ad::Tape& tape, const std::array<ad::Var, 3>& features,
                 const IntuitionParams& params);
/// Z_syn = act(W [S_t*S_v; S_t*S_a; S_v*S_a] + b).
ad::Var synergy(ad::Tape& tape, const std::array<ad::Var, 3>& shared,
                const IntuitionParams& params);
/// LayerNorm(Z_raw + alpha * Z_syn).
ad::Var residual_fuse(ad::Tape& tape, ad::Var z_raw, ad::Var z_syn, const IntuitionParams& params);

/// Raw features feed the context projection; only shared features feed the synergy.
IntuitionVars intuition_forward(ad::Tape& tape, const std::array<ad::Var, 3>& features,
                                const DecoupledVars& decoupled, const IntuitionParams& params);

Vec fuse_raw(const Vec& h_t, const Vec& h_v, const Vec& h_a, const IntuitionParams& params);
Vec synergy(const Vec& s_t, const Vec& s_v, const Vec& s_a, const IntuitionParams& params);

}  // namespace cdpr
