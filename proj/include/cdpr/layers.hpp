// Parameter containers shared by the model blocks.
#pragma once

#include <string>
#include <string_view>

#include "cdpr/autodiff.hpp"
#include "cdpr/numerics.hpp"

namespace cdpr {

enum class Activation { Tanh, Identity };

struct AffineParams {
  Mat weight;  // out x in
  Mat bias;    // out x 1

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }

  /// Weights ~ N(0, 1/in), zero bias.
  static AffineParams init(std::size_t out, std::size_t in, Rng& rng);
  static AffineParams zeros(std::size_t out, std::size_t in);
};

/// affine -> activation -> affine.
struct MlpParams {
  AffineParams first;
  AffineParams second;

  static MlpParams init(std::size_t out, std::size_t hidden, std::size_t in, Rng& rng);
};

ad::Var apply(ad::Tape& tape, const AffineParams& p, ad::Var x);
ad::Var activate(ad::Var x, Activation act);
/// `mask`, when given, multiplies the hidden activation (inverted dropout).
ad::Var apply(ad::Tape& tape, const MlpParams& p, ad::Var x, Activation act,
              const Vec* mask = nullptr);

template <class Affine, class F>
void visit_affine(std::string_view prefix, Affine& a, F&& f) {
  f(std::string(prefix) + ".weight", a.weight);
  f(std::string(prefix) + ".bias", a.bias);
}

template <class Mlp, class F>
void visit_mlp(std::string_view prefix, Mlp& m, F&& f) {
  visit_affine(std::string(prefix) + ".first", m.first, f);
  visit_affine(std::string(prefix) + ".second", m.second, f);
}

}  // namespace cdpr
