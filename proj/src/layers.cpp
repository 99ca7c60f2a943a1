#include "cdpr/layers.hpp"

#include <cmath>

namespace cdpr {

AffineParams AffineParams::init(std::size_t out, std::size_t in, Rng& rng) {
  AffineParams p = zeros(out, in);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : p.weight.span()) w = scale * rng.normal();
  return p;
}

AffineParams AffineParams::zeros(std::size_t out, std::size_t in) {
  return AffineParams{Mat(out, in), Mat(out, 1)};
}

MlpParams MlpParams::init(std::size_t out, std::size_t hidden, std::size_t in, Rng& rng) {
  MlpParams m;
  m.first = AffineParams::init(hidden, in, rng);
  m.second = AffineParams::init(out, hidden, rng);
  return m;
}

ad::Var apply(ad::Tape& tape, const AffineParams& p, ad::Var x) {
  return ad::affine(tape.param(p.weight), x, tape.param(p.bias));
}

ad::Var activate(ad::Var x, Activation act) {
  switch (act) {
    case Activation::Tanh:
      return ad::tanh(x);
    case Activation::Identity:
      return x;
  }
  return x;
}

ad::Var apply(ad::Tape& tape, const MlpParams& p, ad::Var x, Activation act, const Vec* mask) {
  ad::Var h = activate(apply(tape, p.first, x), act);
  if (mask != nullptr) h = h * tape.constant(*mask);
  return apply(tape, p.second, h);
}

}  // namespace cdpr
