// Synthetic three-modality classification data with controllable conflict.
//
// Each class y owns a unit-norm latent anchor z_y. Modality m observes
// H_m = A_m z_y + noise, with A_m a fixed random orthogonal map. A conflicted
// sample has exactly one modality regenerated from another class's anchor.
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cdpr/numerics.hpp"

namespace cdpr {

enum class Modality : std::uint8_t { Text = 0, Video = 1, Audio = 2 };

inline constexpr std::array<Modality, 3> kModalities{Modality::Text, Modality::Video,
                                                     Modality::Audio};

inline std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }
char modality_code(Modality m);
/// Accepts "t", "v", "a" or the full names.
Modality parse_modality(const std::string& s);

struct DatasetConfig {
  std::size_t num_classes = 4;
  std::size_t feature_dim = 16;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 1000;
  double conflict_rate = 0.3;
  double noise_std = 0.1;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

struct ModalityBundle {
  std::array<Vec, 3> features;
  std::size_t label = 0;
  bool conflicted = false;
  std::optional<Modality> conflicted_modality;

  const Vec& operator[](Modality m) const { return features[index_of(m)]; }
  Vec& operator[](Modality m) { return features[index_of(m)]; }

  bool operator==(const ModalityBundle&) const = default;
};

struct Dataset {
  DatasetConfig config;
  std::vector<ModalityBundle> train;
  std::vector<ModalityBundle> val;
  std::vector<ModalityBundle> test;
};

/// The frozen per-seed generative quantities.
struct GenerativeModel {
  std::vector<Vec> anchors;
  std::array<Mat, 3> maps;

  /// A_m z_y, the noise-free observation of class y in modality m.
  Vec clean_feature(std::size_t label, Modality m) const;
};

GenerativeModel make_generative_model(const DatasetConfig& config);
Dataset generate(const DatasetConfig& config);

/// Copy of `bundle` with N(0, sigma^2 I) added to one modality.
ModalityBundle inject_noise(const ModalityBundle& bundle, double sigma, Modality modality,
                            Rng& rng);

// Binary split files; layout documented in docs/formats.md.
inline constexpr char kDatasetMagic[8] = {'C', 'D', 'P', 'R', 'D', 'A', 'T', 'A'};
inline constexpr std::uint32_t kDatasetVersion = 1;

struct SplitFile {
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  std::vector<ModalityBundle> samples;
};

void write_split(std::ostream& out, const SplitFile& split);
SplitFile read_split(std::istream& in);
void write_split_file(const std::string& path, const SplitFile& split);
SplitFile read_split_file(const std::string& path);

/// FNV-1a over the serialized bytes of all three splits.
std::uint64_t fingerprint(const Dataset& data);

}  // namespace cdpr
