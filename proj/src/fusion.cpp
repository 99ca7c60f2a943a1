#include "cdpr/fusion.hpp"

#include <fstream>

#include "binary_io.hpp"

namespace cdpr {

namespace {

enum Stream : std::uint64_t { kDecoupler = 11, kIntuition = 12, kPerception = 13, kFusion = 14 };

}  // namespace

void ModelConfig::validate() const {
  if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  if (hidden_dim < 2) throw ConfigError("hidden_dim must be >= 2");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be > 0");
}

ModelParams ModelParams::init(const ModelConfig& config, Rng rng) {
  config.validate();
  ModelParams p;
  p.config = config;
  Rng dec_rng = rng.substream(kDecoupler);
  p.decoupler = DecouplerParams::init(config.feature_dim, config.hidden_dim,
                                      config.share_shared_weights, dec_rng);
  Rng int_rng = rng.substream(kIntuition);
  p.intuition = IntuitionParams::init(config.feature_dim, config.hidden_dim, int_rng);
  p.intuition.ln_eps = config.ln_eps;
  Rng per_rng = rng.substream(kPerception);
  p.perception = PerceptionParams::init(config.hidden_dim, config.num_classes, config.tau, per_rng);
  Rng fus_rng = rng.substream(kFusion);
  p.fusion.classifier = AffineParams::init(config.num_classes, config.hidden_dim, fus_rng);
  p.fusion.reasoning_head = AffineParams::init(config.num_classes, config.hidden_dim, fus_rng);
  return p;
}

void ModelParams::set_activation(Activation act) {
  decoupler.activation = act;
  intuition.activation = act;
  perception.activation = act;
}

std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  for_each_param(p, [&](const std::string&, const Mat& m) { n += m.size(); });
  return n;
}

std::optional<double> forced_lambda(PathwayAblation ablation) {
  switch (ablation) {
    case PathwayAblation::NoIntuition:
      return 1.0;
    case PathwayAblation::NoReasoning:
      return 0.0;
    case PathwayAblation::None:
      break;
  }
  return std::nullopt;
}

ad::Var reasoning_aggregate(ad::Var weights, const std::array<ad::Var, 3>& priv) {
  if (weights.value().size() != 3) throw ShapeError("reasoning_aggregate: expected 3 weights");
  ad::Var out = ad::scale_by(ad::element(weights, 0), priv[0]);
  out = out + ad::scale_by(ad::element(weights, 1), priv[1]);
  return out + ad::scale_by(ad::element(weights, 2), priv[2]);
}

ad::Var final_fuse(ad::Var z_int, ad::Var z_rea, ad::Var lambda) {
  return ad::scale_by(ad::lin(lambda, -1.0, 1.0), z_int) + ad::scale_by(lambda, z_rea);
}

SampleGraph build_forward(ad::Tape& tape, const ModalityBundle& bundle, const ModelParams& params,
                          const ForwardOptions& options) {
  const bool train = options.mode == Mode::Train;
  SampleGraph g;
  for (Modality m : kModalities) g.features[index_of(m)] = tape.constant(bundle[m]);
  g.decoupled = decouple(tape, g.features, params.decoupler, train ? options.masks : nullptr);
  g.intuition = intuition_forward(tape, g.features, g.decoupled, params.intuition);
  g.conflict = perceive(tape, g.decoupled.priv, params.perception);
  g.z_rea = reasoning_aggregate(g.conflict.weights, g.decoupled.priv);
  if (auto pinned = forced_lambda(options.ablation)) {
    g.lambda = tape.constant(Mat::scalar(*pinned));
  } else {
    g.lambda = g.conflict.lambda;
  }
  g.z_final = final_fuse(g.intuition.z_int, g.z_rea, g.lambda);
  g.final_probs = ad::softmax(apply(tape, params.fusion.classifier, g.z_final));
  g.reasoning_probs = ad::softmax(apply(tape, params.fusion.reasoning_head, g.z_rea));
  return g;
}

ModelOutput to_output(const SampleGraph& g) {
  ModelOutput out;
  out.z_int = g.intuition.z_int.value().to_vec();
  out.z_rea = g.z_rea.value().to_vec();
  out.z_final = g.z_final.value().to_vec();
  out.final_probs = g.final_probs.value().to_vec();
  out.reasoning_probs = g.reasoning_probs.value().to_vec();
  out.report = to_report(g.conflict);
  out.report.lambda = g.lambda.scalar();
  std::size_t best = 0;
  for (std::size_t c = 1; c < out.final_probs.size(); ++c) {
    if (out.final_probs[c] > out.final_probs[best]) best = c;
  }
  out.predicted = best;
  return out;
}

ModelOutput forward(const ModalityBundle& bundle, const ModelParams& params,
                    const ForwardOptions& options) {
  ad::Tape tape;
  return to_output(build_forward(tape, bundle, params, options));
}

Vec reasoning_aggregate(const std::array<double, 3>& w, const Vec& p_t, const Vec& p_v,
                        const Vec& p_a) {
  ad::Tape tape;
  ad::Var weights = tape.constant(Vec{w[0], w[1], w[2]});
  return reasoning_aggregate(weights, {tape.constant(p_t), tape.constant(p_v), tape.constant(p_a)})
      .value()
      .to_vec();
}

Vec final_fuse(const Vec& z_int, const Vec& z_rea, double lambda) {
  ad::Tape tape;
  return final_fuse(tape.constant(z_int), tape.constant(z_rea), tape.constant(Mat::scalar(lambda)))
      .value()
      .to_vec();
}

void save_checkpoint(std::ostream& out, const ModelParams& params) {
  using binary::put;
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const ModelConfig& c = params.config;
  put<std::uint64_t>(out, c.feature_dim);
  put<std::uint64_t>(out, c.hidden_dim);
  put<std::uint64_t>(out, c.num_classes);
  put<std::uint8_t>(out, c.share_shared_weights ? 1 : 0);
  put<double>(out, c.tau);
  put<double>(out, c.ln_eps);
  std::uint32_t count = 0;
  for_each_param(params, [&](const std::string&, const Mat&) { ++count; });
  put<std::uint32_t>(out, count);
  for_each_param(params, [&](const std::string& name, const Mat& m) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, m.rows());
    put<std::uint64_t>(out, m.cols());
    for (double x : m.span()) put<double>(out, x);
  });
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

ModelParams load_checkpoint(std::istream& in) {
  constexpr const char* kWhat = "checkpoint";
  using binary::get;
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto version = get<std::uint32_t>(in, kWhat);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelConfig c;
  c.feature_dim = get<std::uint64_t>(in, kWhat);
  c.hidden_dim = get<std::uint64_t>(in, kWhat);
  c.num_classes = get<std::uint64_t>(in, kWhat);
  c.share_shared_weights = get<std::uint8_t>(in, kWhat) != 0;
  c.tau = get<double>(in, kWhat);
  c.ln_eps = get<double>(in, kWhat);
  ModelParams p = ModelParams::init(c, Rng(0));
  std::uint32_t expected = 0;
  for_each_param(p, [&](const std::string&, const Mat&) { ++expected; });
  const auto count = get<std::uint32_t>(in, kWhat);
  if (count != expected) throw std::runtime_error("checkpoint: tensor count mismatch");
  for_each_param(p, [&](const std::string& name, Mat& m) {
    const auto len = get<std::uint32_t>(in, kWhat);
    std::string stored(len, '\0');
    if (!in.read(stored.data(), len)) throw std::runtime_error("checkpoint: truncated");
    if (stored != name) {
      throw std::runtime_error("checkpoint: expected section '" + name + "', found '" + stored + "'");
    }
    const auto rows = get<std::uint64_t>(in, kWhat);
    const auto cols = get<std::uint64_t>(in, kWhat);
    if (rows != m.rows() || cols != m.cols()) {
      throw std::runtime_error("checkpoint: shape mismatch in section '" + name + "'");
    }
    for (double& x : m.span()) x = get<double>(in, kWhat);
  });
  return p;
}

void save_checkpoint_file(const std::string& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  save_checkpoint(out, params);
}

ModelParams load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return load_checkpoint(in);
}

}  // namespace cdpr
