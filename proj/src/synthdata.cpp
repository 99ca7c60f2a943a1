#include "cdpr/synthdata.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cdpr {

namespace {

using binary::get;
using binary::put;

enum Stream : std::uint64_t { kAnchors = 1, kMaps = 2, kTrain = 3, kVal = 4, kTest = 5 };

constexpr double kMaxAnchorCosine = 0.5;
constexpr int kAnchorAttempts = 100000;

Vec random_unit(std::size_t d, Rng& rng) {
  Vec v(d);
  for (double& x : v) x = rng.normal();
  const double n = norm2(v);
  return (1.0 / n) * v;
}

Mat random_orthogonal(std::size_t d, Rng& rng) {
  // Modified Gram-Schmidt over Gaussian rows.
  Mat m(d, d);
  for (double& x : m.span()) x = rng.normal();
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double proj = 0.0;
      for (std::size_t k = 0; k < d; ++k) proj += m(i, k) * m(j, k);
      for (std::size_t k = 0; k < d; ++k) m(i, k) -= proj * m(j, k);
    }
    double n = 0.0;
    for (std::size_t k = 0; k < d; ++k) n += m(i, k) * m(i, k);
    n = std::sqrt(n);
    for (std::size_t k = 0; k < d; ++k) m(i, k) /= n;
  }
  return m;
}

std::vector<ModalityBundle> generate_split(const DatasetConfig& cfg, const GenerativeModel& gm,
                                           std::size_t count, Rng split_rng) {
  std::vector<ModalityBundle> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = split_rng.substream(i);
    ModalityBundle b;
    b.label = rng.below(cfg.num_classes);
    std::array<std::size_t, 3> source{b.label, b.label, b.label};
    if (rng.uniform() < cfg.conflict_rate) {
      const auto m = static_cast<Modality>(rng.below(3));
      std::size_t other = rng.below(cfg.num_classes - 1);
      if (other >= b.label) ++other;
      b.conflicted = true;
      b.conflicted_modality = m;
      source[index_of(m)] = other;
    }
    for (Modality m : kModalities) {
      Vec h = gm.clean_feature(source[index_of(m)], m);
      for (double& x : h) x += cfg.noise_std * rng.normal();
      b[m] = std::move(h);
    }
    out.push_back(std::move(b));
  }
  return out;
}

constexpr std::uint8_t kNoModality = 0xFF;

}  // namespace

char modality_code(Modality m) {
  switch (m) {
    case Modality::Text:
      return 't';
    case Modality::Video:
      return 'v';
    case Modality::Audio:
      return 'a';
  }
  return '?';
}

Modality parse_modality(const std::string& s) {
  if (s == "t" || s == "text") return Modality::Text;
  if (s == "v" || s == "video") return Modality::Video;
  if (s == "a" || s == "audio") return Modality::Audio;
  throw ConfigError("unknown modality '" + s + "'");
}

void DatasetConfig::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (feature_dim < 4) throw ConfigError("feature_dim must be >= 4");
  if (feature_dim < 63 && num_classes > (std::size_t{1} << feature_dim)) {
    throw ConfigError("num_classes exceeds 2^feature_dim; anchors cannot be separated");
  }
  if (!(conflict_rate >= 0.0 && conflict_rate <= 1.0)) {
    throw ConfigError("conflict_rate must lie in [0, 1]");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
}

Vec GenerativeModel::clean_feature(std::size_t label, Modality m) const {
  return matvec(maps[index_of(m)], anchors.at(label));
}

GenerativeModel make_generative_model(const DatasetConfig& config) {
  config.validate();
  const Rng root(config.seed);
  GenerativeModel gm;
  Rng anchor_rng = root.substream(kAnchors);
  for (std::size_t c = 0; c < config.num_classes; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kAnchorAttempts && !placed; ++attempt) {
      Vec z = random_unit(config.feature_dim, anchor_rng);
      bool separated = true;
      for (const Vec& other : gm.anchors) {
        if (dot(z, other) >= kMaxAnchorCosine) {
          separated = false;
          break;
        }
      }
      if (separated) {
        gm.anchors.push_back(std::move(z));
        placed = true;
      }
    }
    if (!placed) {
      throw ConfigError("could not place " + std::to_string(config.num_classes) +
                        " anchors with pairwise cosine < 0.5 in dimension " +
                        std::to_string(config.feature_dim));
    }
  }
  Rng map_rng = root.substream(kMaps);
  for (Mat& a : gm.maps) a = random_orthogonal(config.feature_dim, map_rng);
  return gm;
}

Dataset generate(const DatasetConfig& config) {
  const GenerativeModel gm = make_generative_model(config);
  const Rng root(config.seed);
  Dataset d;
  d.config = config;
  d.train = generate_split(config, gm, config.n_train, root.substream(kTrain));
  d.val = generate_split(config, gm, config.n_val, root.substream(kVal));
  d.test = generate_split(config, gm, config.n_test, root.substream(kTest));
  return d;
}

ModalityBundle inject_noise(const ModalityBundle& bundle, double sigma, Modality modality,
                            Rng& rng) {
  if (!(sigma >= 0.0)) throw ConfigError("inject_noise: sigma must be >= 0");
  ModalityBundle out = bundle;
  if (sigma == 0.0) return out;
  for (double& x : out[modality]) x += sigma * rng.normal();
  return out;
}

void write_split(std::ostream& out, const SplitFile& split) {
  out.write(kDatasetMagic, sizeof(kDatasetMagic));
  put<std::uint32_t>(out, kDatasetVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(split.num_classes));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(split.feature_dim));
  put<std::uint64_t>(out, split.samples.size());
  for (const ModalityBundle& b : split.samples) {
    if (b.label >= split.num_classes) throw std::out_of_range("write_split: label out of range");
    if (b.conflicted != b.conflicted_modality.has_value()) {
      throw std::invalid_argument("write_split: conflict flag and conflicted modality disagree");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.label));
    put<std::uint8_t>(out, b.conflicted ? 1 : 0);
    put<std::uint8_t>(out, b.conflicted_modality
                               ? static_cast<std::uint8_t>(*b.conflicted_modality)
                               : kNoModality);
    for (Modality m : kModalities) {
      if (b[m].size() != split.feature_dim) throw ShapeError("write_split: feature length mismatch");
      for (double x : b[m]) put<double>(out, x);
    }
  }
  if (!out) throw std::runtime_error("dataset file: write failed");
}

SplitFile read_split(std::istream& in) {
  char magic[sizeof(kDatasetMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("dataset file: bad magic");
  }
  const auto version = get<std::uint32_t>(in, "dataset file");
  if (version != kDatasetVersion) {
    throw std::runtime_error("dataset file: unsupported version " + std::to_string(version));
  }
  SplitFile split;
  split.num_classes = get<std::uint32_t>(in, "dataset file");
  split.feature_dim = get<std::uint32_t>(in, "dataset file");
  const auto count = get<std::uint64_t>(in, "dataset file");
  split.samples.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 16)));
  for (std::uint64_t i = 0; i < count; ++i) {
    ModalityBundle b;
    b.label = get<std::uint32_t>(in, "dataset file");
    if (b.label >= split.num_classes) throw std::runtime_error("dataset file: label out of range");
    b.conflicted = get<std::uint8_t>(in, "dataset file") != 0;
    const auto m = get<std::uint8_t>(in, "dataset file");
    if (m != kNoModality) {
      if (m > 2) throw std::runtime_error("dataset file: bad modality code");
      b.conflicted_modality = static_cast<Modality>(m);
    }
    if (b.conflicted != b.conflicted_modality.has_value()) {
      throw std::runtime_error("dataset file: conflict flag and modality disagree");
    }
    for (Modality mod : kModalities) {
      Vec h(split.feature_dim);
      for (double& x : h) x = get<double>(in, "dataset file");
      b[mod] = std::move(h);
    }
    split.samples.push_back(std::move(b));
  }
  return split;
}

void write_split_file(const std::string& path, const SplitFile& split) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_split(out, split);
}

SplitFile read_split_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_split(in);
}

std::uint64_t fingerprint(const Dataset& data) {
  std::ostringstream buf;
  for (const auto* samples : {&data.train, &data.val, &data.test}) {
    write_split(buf, SplitFile{data.config.num_classes, data.config.feature_dim, *samples});
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : buf.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace cdpr
