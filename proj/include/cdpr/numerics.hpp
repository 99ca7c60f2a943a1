// Dense double-precision vectors and matrices, elementary functions, and a
// counter-based random generator.
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdpr {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Vec {
 public:
  Vec() = default;
  explicit Vec(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  Vec(std::initializer_list<double> values) : data_(values) {}
  explicit Vec(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool operator==(const Vec&) const = default;

 private:
  std::vector<double> data_;
};

/// Row-major dense matrix. Column vectors are n x 1, scalars 1 x 1.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Mat column(const Vec& v);
  static Mat scalar(double x) { return Mat(1, 1, x); }
  static Mat identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  /// Flattened copy as a vector; meaningful for n x 1 and 1 x n shapes.
  Vec to_vec() const { return Vec(data_); }
  bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool operator==(const Mat&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Mat& m);

// Vector arithmetic. Binary ops throw ShapeError on length mismatch.
Vec operator+(const Vec& a, const Vec& b);
Vec operator-(const Vec& a, const Vec& b);
Vec operator*(double s, const Vec& a);
Vec hadamard(const Vec& a, const Vec& b);
double dot(const Vec& a, const Vec& b);
double norm2(const Vec& a);
Vec concat(std::initializer_list<const Vec*> parts);

// Matrix arithmetic.
Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& a);
Vec matvec(const Mat& a, const Vec& x);
Vec affine(const Mat& weight, const Vec& x, const Mat& bias);

double sigmoid(double x);
double tanh(double x);
Vec softmax(const Vec& v);

/// (v - mean) / sqrt(var + eps), population variance; gain = 1, bias = 0.
Vec layer_norm(const Vec& v, double eps);
Vec layer_norm(const Vec& v, double eps, const Vec& gain, const Vec& bias);

/// Returns 0 when either argument has zero norm.
double cosine_similarity(const Vec& a, const Vec& b);
double frobenius_norm_sq(const Mat& m);

bool all_finite(std::span<const double> values);

/// Counter-based generator: draw i is a pure function of (seed, i), so streams
/// are reproducible across platforms and cheap to split.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  /// Independent stream keyed by `stream_id`.
  Rng substream(std::uint64_t stream_id) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in (0, 1].
  double uniform_open0();
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace cdpr
