// Full model: both pathways, the gate, the final classifier, and checkpoints.
#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "cdpr/decoupler.hpp"
#include "cdpr/intuition.hpp"
#include "cdpr/perception.hpp"

namespace cdpr {

struct ModelConfig {
  std::size_t feature_dim = 16;
  std::size_t hidden_dim = 16;
  std::size_t num_classes = 4;
  bool share_shared_weights = false;
  double tau = 1.0;
  double ln_eps = 1e-5;

  void validate() const;
};

struct FusionParams {
  AffineParams classifier;      // d_h -> C, on Z_final
  AffineParams reasoning_head;  // d_h -> C, on Z_rea (auxiliary supervision only)
};

struct ModelParams {
  ModelConfig config;
  DecouplerParams decoupler;
  IntuitionParams intuition;
  PerceptionParams perception;
  FusionParams fusion;

  static ModelParams init(const ModelConfig& config, Rng rng);
  /// Switches every squashing nonlinearity; Identity exists for tests.
  void set_activation(Activation act);
};

/// Calls f(name, Mat&) for every learnable tensor in a fixed order.
template <class Params, class F>
void for_each_param(Params& p, F&& f) {
  visit_decoupler(p.decoupler, f);
  visit_intuition(p.intuition, f);
  visit_perception(p.perception, f);
  visit_affine("fusion.classifier", p.fusion.classifier, f);
  visit_affine("fusion.reasoning_head", p.fusion.reasoning_head, f);
}

std::size_t parameter_count(const ModelParams& p);

enum class Mode { Train, Eval };

/// "w/o P_int" pins lambda to 1, "w/o P_rea" pins it to 0; the graph is otherwise unchanged.
enum class PathwayAblation { None, NoIntuition, NoReasoning };

struct ForwardOptions {
  Mode mode = Mode::Eval;
  /// Ignored in eval mode.
  const DropoutMasks* masks = nullptr;
  PathwayAblation ablation = PathwayAblation::None;
};

std::optional<double> forced_lambda(PathwayAblation ablation);

struct SampleGraph {
  std::array<ad::Var, 3> features;
  DecoupledVars decoupled;
  IntuitionVars intuition;
  ConflictVars conflict;
  ad::Var z_rea;
  ad::Var lambda;  // after any ablation override
  ad::Var z_final;
  ad::Var final_probs;
  ad::Var reasoning_probs;
};

/// sum_m w_m P_m, with w a 3 x 1 node.
ad::Var reasoning_aggregate(ad::Var weights, const std::array<ad::Var, 3>& priv);
/// (1 - lambda) Z_int + lambda Z_rea.
ad::Var final_fuse(ad::Var z_int, ad::Var z_rea, ad::Var lambda);

SampleGraph build_forward(ad::Tape& tape, const ModalityBundle& bundle, const ModelParams& params,
                          const ForwardOptions& options = {});

struct ModelOutput {
  Vec z_int;
  Vec z_rea;
  Vec z_final;
  Vec final_probs;
  Vec reasoning_probs;
  ConflictReport report;
  std::size_t predicted = 0;
};

ModelOutput forward(const ModalityBundle& bundle, const ModelParams& params,
                    const ForwardOptions& options = {});
ModelOutput to_output(const SampleGraph& g);

Vec reasoning_aggregate(const std::array<double, 3>& w, const Vec& p_t, const Vec& p_v,
                        const Vec& p_a);
Vec final_fuse(const Vec& z_int, const Vec& z_rea, double lambda);

// Checkpoints; layout documented in docs/formats.md.
inline constexpr char kCheckpointMagic[8] = {'C', 'D', 'P', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(std::ostream& out, const ModelParams& params);
ModelParams load_checkpoint(std::istream& in);
void save_checkpoint_file(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint_file(const std::string& path);

}  // namespace cdpr
