#include "cdpr/decoupler.hpp"

namespace cdpr {

DecouplerParams DecouplerParams::init(std::size_t feature_dim, std::size_t hidden_dim,
                                      bool share_shared_weights, Rng& rng) {
  DecouplerParams p;
  const std::size_t n_shared = share_shared_weights ? 1 : 3;
  for (std::size_t i = 0; i < n_shared; ++i) {
    p.shared.push_back(MlpParams::init(hidden_dim, hidden_dim, feature_dim, rng));
  }
  for (MlpParams& m : p.priv) m = MlpParams::init(hidden_dim, hidden_dim, feature_dim, rng);
  return p;
}

DropoutMasks DropoutMasks::sample(std::size_t hidden_dim, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  const double keep_scale = 1.0 / (1.0 - rate);
  auto draw = [&] {
    Vec mask(hidden_dim);
    for (double& x : mask) x = rng.uniform() < rate ? 0.0 : keep_scale;
    return mask;
  };
  DropoutMasks masks;
  for (Vec& v : masks.shared) v = draw();
  for (Vec& v : masks.priv) v = draw();
  return masks;
}

DecoupledVars decouple(ad::Tape& tape, const std::array<ad::Var, 3>& inputs,
                       const DecouplerParams& params, const DropoutMasks* masks) {
  DecoupledVars out;
  for (Modality m : kModalities) {
    const std::size_t i = index_of(m);
    const MlpParams& enc_shared = params.shared_for(m);
    if (inputs[i].value().size() != enc_shared.first.in_dim()) {
      throw ShapeError("decouple: feature length " + std::to_string(inputs[i].value().size()) +
                       " does not match encoder input " +
                       std::to_string(enc_shared.first.in_dim()));
    }
    out.shared[i] = apply(tape, enc_shared, inputs[i], params.activation,
                          masks ? &masks->shared[i] : nullptr);
    out.priv[i] = apply(tape, params.priv[i], inputs[i], params.activation,
                        masks ? &masks->priv[i] : nullptr);
  }
  return out;
}

DecoupledFeatures decouple(const ModalityBundle& bundle, const DecouplerParams& params) {
  ad::Tape tape;
  std::array<ad::Var, 3> inputs;
  for (Modality m : kModalities) inputs[index_of(m)] = tape.constant(bundle[m]);
  const DecoupledVars vars = decouple(tape, inputs, params);
  DecoupledFeatures f;
  for (std::size_t i = 0; i < 3; ++i) {
    f.shared[i] = vars.shared[i].value().to_vec();
    f.priv[i] = vars.priv[i].value().to_vec();
  }
  return f;
}

}  // namespace cdpr
