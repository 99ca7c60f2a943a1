// Shared / private projection of each modality feature.
#pragma once

#include <array>
#include <vector>

#include "cdpr/autodiff.hpp"
#include "cdpr/layers.hpp"
#include "cdpr/synthdata.hpp"

namespace cdpr {

struct DecouplerParams {
  /// One encoder per modality, or a single encoder when shared weights are on.
  std::vector<MlpParams> shared;
  std::array<MlpParams, 3> priv;
  Activation activation = Activation::Tanh;

  static DecouplerParams init(std::size_t feature_dim, std::size_t hidden_dim,
                              bool share_shared_weights, Rng& rng);

  bool shares_weights() const { return shared.size() == 1; }
  const MlpParams& shared_for(Modality m) const {
    return shares_weights() ? shared.front() : shared[index_of(m)];
  }
};

template <class Params, class F>
void visit_decoupler(Params& p, F&& f) {
  if (p.shared.size() == 1) {
    visit_mlp("decoupler.shared", p.shared.front(), f);
  } else {
    for (Modality m : kModalities) {
      visit_mlp(std::string("decoupler.shared.") + modality_code(m), p.shared[index_of(m)], f);
    }
  }
  for (Modality m : kModalities) {
    visit_mlp(std::string("decoupler.private.") + modality_code(m), p.priv[index_of(m)], f);
  }
}

/// Inverted-dropout multipliers on the hidden layer of each encoder.
struct DropoutMasks {
  std::array<Vec, 3> shared;
  std::array<Vec, 3> priv;

  static DropoutMasks sample(std::size_t hidden_dim, double rate, Rng& rng);
};

struct DecoupledFeatures {
  std::array<Vec, 3> shared;
  std::array<Vec, 3> priv;
};

struct DecoupledVars {
  std::array<ad::Var, 3> shared;
  std::array<ad::Var, 3> priv;
};

DecoupledVars decouple(ad::Tape& tape, const std::array<ad::Var, 3>& inputs,
                       const DecouplerParams& params, const DropoutMasks* masks = nullptr);

/// Evaluation-mode convenience form.
DecoupledFeatures decouple(const ModalityBundle& bundle, const DecouplerParams& params);

}  // namespace cdpr
