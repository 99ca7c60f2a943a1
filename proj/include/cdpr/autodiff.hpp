// Reverse-mode differentiation over a linear computation record.
//
// Every differentiable computation in the model is expressed as a sequence of
// vector/matrix operations recorded on a Tape. Nodes are appended in
// evaluation order, so reverse creation order is a valid topological order for
// the backward sweep. Leaves are either constants (no gradient), inputs
// (gradient requested), or parameters bound to a caller-owned Mat, so that
// gradients can be read back per parameter after `backward`.
//
// Non-smooth points follow the subgradient-0 convention: |x| at 0, ||x|| at 0,
// and the probability floor of `nll`. The tape records a signature of which
// side of each such point the forward pass landed on, so that a
// finite-difference checker can detect probes that straddle one.
#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "cdpr/numerics.hpp"

namespace cdpr::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  const Mat& value() const;
  /// Value of a 1 x 1 node.
  double scalar() const;
  std::size_t rows() const { return value().rows(); }
};

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Lin,
  ScaleBy,
  Affine,
  MatMul,
  MatMulTN,
  Tanh,
  Sigmoid,
  Abs,
  Concat,
  Softmax,
  LayerNorm,
  Dot,
  Norm2,
  Cosine,
  Sum,
  Element,
  StackRows,
  CenterColumns,
  Pow,
  ColMean,
  FrobSq,
  Nll,
  JsDivergence,
  NormalizedEntropy,
};

class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  Var constant(const Vec& v) { return constant(Mat::column(v)); }
  /// Leaf whose gradient is tracked; read it back with `grad(var)`.
  Var input(Mat value);
  Var input(const Vec& v) { return input(Mat::column(v)); }
  /// Leaf bound to a parameter. Repeated calls with the same object reuse the
  /// node, so a parameter used by many samples accumulates one gradient.
  Var param(const Mat& parameter);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient after `backward`; zeros when the node did not influence the output.
  Mat grad(Var v) const;
  /// Gradient of a bound parameter; zeros when it was never used.
  Mat grad_of(const Mat& parameter) const;
  bool uses(const Mat& parameter) const { return params_.contains(&parameter); }

  /// Seeds d(out)/d(out) = 1 for a 1 x 1 node and sweeps backwards.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }
  /// Hash of the branch taken at every non-smooth point.
  std::uint64_t kink_signature() const { return kink_signature_; }
  /// Smallest distance of any non-smooth argument from its kink.
  double kink_margin() const { return kink_margin_; }

  // Recording interface used by the op functions below.
  struct Node {
    Op op = Op::Leaf;
    bool requires_grad = false;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::int32_t c = -1;
    double k0 = 0.0;
    double k1 = 0.0;
    std::vector<std::int32_t> many;
    Mat value;
    Mat grad;
    Mat aux;
  };
  Var push(Node node);
  const Node& node(std::int32_t id) const { return nodes_[id]; }
  void note_kink(double distance, bool branch);

 private:
  Mat& grad_ref(std::int32_t id);
  void backward_node(std::int32_t id);

  std::vector<Node> nodes_;
  std::unordered_map<const Mat*, std::int32_t> params_;
  std::uint64_t kink_signature_ = 0x84222325cbf29ce4ULL;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
/// Element-wise product.
Var operator*(Var a, Var b);
Var operator*(double s, Var a);
Var operator-(Var a);

/// mul * a + add, element-wise with scalar constants.
Var lin(Var a, double mul, double add);
/// Scales a tensor by a 1 x 1 node.
Var scale_by(Var s, Var a);
/// weight * x + bias for a column vector x.
Var affine(Var weight, Var x, Var bias);
Var matmul(Var a, Var b);
/// a^T * b.
Var matmul_tn(Var a, Var b);
Var tanh(Var a);
Var sigmoid(Var a);
Var abs(Var a);
/// Vertical concatenation of blocks with equal column count.
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
/// Softmax of a column vector, max-subtracted.
Var softmax(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps);
Var dot(Var a, Var b);
Var norm2(Var a);
/// Cosine similarity; 0 with zero gradient when either norm vanishes.
Var cosine(Var a, Var b);
Var sum(Var a);
Var element(Var a, std::size_t index);
/// Stacks n x 1 columns as the rows of an N x n matrix.
Var stack_rows(std::span<const Var> rows);
/// Subtracts each column's mean.
Var center_columns(Var x);
Var pow(Var x, int exponent);
/// Per-column mean as a 1 x cols row.
Var col_mean(Var x);
Var frob_sq(Var x);
/// -ln(max(probs[label], floor)).
Var nll(Var probs, std::size_t label, double floor);
/// (1/3) sum_m KL(p_m || mean), with 0 ln 0 = 0.
Var js_divergence(Var p_t, Var p_v, Var p_a);
/// Shannon entropy divided by ln(len(p)).
Var normalized_entropy(Var p);

}  // namespace cdpr::ad
