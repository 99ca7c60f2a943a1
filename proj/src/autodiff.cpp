#include "cdpr/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace cdpr::ad {

namespace {

using Node = Tape::Node;

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw std::logic_error("ad: variable is not attached to a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("ad: variables live on different tapes");
  return tape_of(a);
}

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

void require_column(const Mat& a, const char* op) {
  if (a.cols() != 1) throw ShapeError(std::string(op) + ": expected a column, got " + shape_string(a));
}

void require_scalar(const Mat& a, const char* op) {
  if (a.rows() != 1 || a.cols() != 1) {
    throw ShapeError(std::string(op) + ": expected 1x1, got " + shape_string(a));
  }
}

Node make(Op op, Mat value, std::initializer_list<Var> inputs) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  auto it = inputs.begin();
  if (it != inputs.end()) n.a = (it++)->id;
  if (it != inputs.end()) n.b = (it++)->id;
  if (it != inputs.end()) n.c = (it++)->id;
  return n;
}

Var unary_map(Var a, Op op, double (*f)(double)) {
  Tape& t = tape_of(a);
  Mat out = a.value();
  for (double& x : out.span()) x = f(x);
  return t.push(make(op, std::move(out), {a}));
}

}  // namespace

const Mat& Var::value() const { return tape->value(*this); }

double Var::scalar() const {
  const Mat& v = value();
  require_scalar(v, "Var::scalar");
  return v[0];
}

Var Tape::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::input(Mat value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::param(const Mat& parameter) {
  if (auto it = params_.find(&parameter); it != params_.end()) return Var{this, it->second};
  Var v = input(parameter);
  params_.emplace(&parameter, v.id);
  return v;
}

Var Tape::push(Node node) {
  for (std::int32_t in : {node.a, node.b, node.c}) {
    if (in >= 0 && nodes_[in].requires_grad) node.requires_grad = true;
  }
  for (std::int32_t in : node.many) {
    if (nodes_[in].requires_grad) node.requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

void Tape::note_kink(double distance, bool branch) {
  kink_margin_ = std::min(kink_margin_, distance);
  kink_signature_ = (kink_signature_ ^ (branch ? 0x9dULL : 0x3bULL)) * 0x100000001b3ULL;
}

Mat Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Mat(n.value.rows(), n.value.cols());
  return n.grad;
}

Mat Tape::grad_of(const Mat& parameter) const {
  auto it = params_.find(&parameter);
  if (it == params_.end()) return Mat(parameter.rows(), parameter.cols());
  return grad(Var{const_cast<Tape*>(this), it->second});
}

Mat& Tape::grad_ref(std::int32_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0 && n.value.size() != 0) n.grad = Mat(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var out) {
  require_scalar(value(out), "backward");
  for (Node& n : nodes_) n.grad = Mat();
  grad_ref(out.id)[0] = 1.0;
  for (std::int32_t id = out.id; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (n.op == Op::Leaf || !n.requires_grad || n.grad.size() == 0) continue;
    backward_node(id);
  }
}

void Tape::backward_node(std::int32_t id) {
  const Node& n = nodes_[id];
  const Mat& g = n.grad;
  const Mat& y = n.value;
  auto wants = [&](std::int32_t in) { return in >= 0 && nodes_[in].requires_grad; };

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Add:
    case Op::Sub: {
      const double sign = n.op == Op::Add ? 1.0 : -1.0;
      if (wants(n.a)) {
        Mat& ga = grad_ref(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(n.b)) {
        Mat& gb = grad_ref(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
      }
      break;
    }
    case Op::Mul: {
      const Mat& av = nodes_[n.a].value;
      const Mat& bv = nodes_[n.b].value;
      if (wants(n.a)) {
        Mat& ga = grad_ref(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (wants(n.b)) {
        Mat& gb = grad_ref(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
      break;
    }
    case Op::Lin: {
      Mat& ga = grad_ref(n.a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.k0 * g[i];
      break;
    }
    case Op::ScaleBy: {
      const double s = nodes_[n.a].value[0];
      const Mat& xv = nodes_[n.b].value;
      if (wants(n.a)) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
        grad_ref(n.a)[0] += acc;
      }
      if (wants(n.b)) {
        Mat& gx = grad_ref(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
      }
      break;
    }
    case Op::Affine: {
      const Mat& w = nodes_[n.a].value;
      const Mat& x = nodes_[n.b].value;
      const std::size_t rows = w.rows();
      const std::size_t cols = w.cols();
      if (wants(n.a)) {
        Mat& gw = grad_ref(n.a);
        for (std::size_t i = 0; i < rows; ++i) {
          const double gi = g[i];
          double* row = gw.data() + i * cols;
          for (std::size_t j = 0; j < cols; ++j) row[j] += gi * x[j];
        }
      }
      if (wants(n.b)) {
        Mat& gx = grad_ref(n.b);
        for (std::size_t i = 0; i < rows; ++i) {
          const double gi = g[i];
          const double* row = w.data() + i * cols;
          for (std::size_t j = 0; j < cols; ++j) gx[j] += gi * row[j];
        }
      }
      if (wants(n.c)) {
        Mat& gb = grad_ref(n.c);
        for (std::size_t i = 0; i < rows; ++i) gb[i] += g[i];
      }
      break;
    }
    case Op::MatMul: {
      const Mat& av = nodes_[n.a].value;
      const Mat& bv = nodes_[n.b].value;
      if (wants(n.a)) {
        Mat d = matmul(g, transpose(bv));
        Mat& ga = grad_ref(n.a);
        for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i];
      }
      if (wants(n.b)) {
        Mat d = matmul(transpose(av), g);
        Mat& gb = grad_ref(n.b);
        for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i];
      }
      break;
    }
    case Op::MatMulTN: {
      // y = a^T b: da = b g^T, db = a g.
      const Mat& av = nodes_[n.a].value;
      const Mat& bv = nodes_[n.b].value;
      if (wants(n.a)) {
        Mat d = matmul(bv, transpose(g));
        Mat& ga = grad_ref(n.a);
        for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i];
      }
      if (wants(n.b)) {
        Mat d = matmul(av, g);
        Mat& gb = grad_ref(n.b);
        for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i];
      }
      break;
    }
    case Op::Tanh: {
      Mat& ga = grad_ref(n.a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    }
    case Op::Sigmoid: {
      Mat& ga = grad_ref(n.a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    }
    case Op::Abs: {
      const Mat& xv = nodes_[n.a].value;
      Mat& ga = grad_ref(n.a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
        ga[i] += s * g[i];
      }
      break;
    }
    case Op::Concat:
    case Op::StackRows: {
      std::size_t offset = 0;
      for (std::int32_t in : n.many) {
        const std::size_t len = nodes_[in].value.size();
        if (wants(in)) {
          Mat& gi = grad_ref(in);
          for (std::size_t i = 0; i < len; ++i) gi[i] += g[offset + i];
        }
        offset += len;
      }
      break;
    }
    case Op::Softmax: {
      double gy = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
      Mat& ga = grad_ref(n.a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += y[i] * (g[i] - gy);
      break;
    }
    case Op::LayerNorm: {
      // aux holds the normalized input, k0 the inverse standard deviation.
      const Mat& xhat = n.aux;
      const Mat& gain = nodes_[n.b].value;
      const std::size_t len = g.size();
      if (wants(n.b)) {
        Mat& gg = grad_ref(n.b);
        for (std::size_t i = 0; i < len; ++i) gg[i] += g[i] * xhat[i];
      }
      if (wants(n.c)) {
        Mat& gb = grad_ref(n.c);
        for (std::size_t i = 0; i < len; ++i) gb[i] += g[i];
      }
      if (wants(n.a)) {
        double mean_d = 0.0;
        double mean_dx = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
          const double d = g[i] * gain[i];
          mean_d += d;
          mean_dx += d * xhat[i];
        }
        mean_d /= static_cast<double>(len);
        mean_dx /= static_cast<double>(len);
        Mat& ga = grad_ref(n.a);
        for (std::size_t i = 0; i < len; ++i) {
          ga[i] += n.k0 * (g[i] * gain[i] - mean_d - xhat[i] * mean_dx);
        }
      }
      break;
    }
    case Op::Dot: {
      const double s = g[0];
      const Mat& av = nodes_[n.a].value;
      const Mat& bv = nodes_[n.b].value;
      if (wants(n.a)) {
        Mat& ga = grad_ref(n.a);
        for (std::size_t i = 0; i < av.size(); ++i) ga[i] += s * bv[i];
      }
      if (wants(n.b)) {
        Mat& gb = grad_ref(n.b);
        for (std::size_t i = 0; i < bv.size(); ++i) gb[i] += s * av[i];
      }
      break;
    }
    case Op::Norm2: {
      const double norm = y[0];
      if (norm == 0.0) break;
      const Mat& av = nodes_[n.a].value;
      Mat& ga = grad_ref(n.a);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g[0] * av[i] / norm;
      break;
    }
    case Op::Cosine: {
      // k0 = |a|, k1 = |b|.
      const double na = n.k0;
      const double nb = n.k1;
      if (na == 0.0 || nb == 0.0) break;
      const double cos = y[0];
      const Mat& av = nodes_[n.a].value;
      const Mat& bv = nodes_[n.b].value;
      const double s = g[0];
      if (wants(n.a)) {
        Mat& ga = grad_ref(n.a);
        for (std::size_t i = 0; i < av.size(); ++i) {
          ga[i] += s * (bv[i] / (na * nb) - cos * av[i] / (na * na));
        }
      }
      if (wants(n.b)) {
        Mat& gb = grad_ref(n.b);
        for (std::size_t i = 0; i < bv.size(); ++i) {
          gb[i] += s * (av[i] / (na * nb) - cos * bv[i] / (nb * nb));
        }
      }
      break;
    }
    case Op::Sum: {
      Mat& ga = grad_ref(n.a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
      break;
    }
    case Op::Element: {
      grad_ref(n.a)[static_cast<std::size_t>(n.k0)] += g[0];
      break;
    }
    case Op::CenterColumns: {
      const std::size_t rows = g.rows();
      const std::size_t cols = g.cols();
      Mat& ga = grad_ref(n.a);
      for (std::size_t j = 0; j < cols; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < rows; ++i) mean += g(i, j);
        mean /= static_cast<double>(rows);
        for (std::size_t i = 0; i < rows; ++i) ga(i, j) += g(i, j) - mean;
      }
      break;
    }
    case Op::Pow: {
      const int k = static_cast<int>(n.k0);
      const Mat& xv = nodes_[n.a].value;
      Mat& ga = grad_ref(n.a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * k * std::pow(xv[i], k - 1);
      }
      break;
    }
    case Op::ColMean: {
      Mat& ga = grad_ref(n.a);
      const double inv = 1.0 / static_cast<double>(ga.rows());
      for (std::size_t i = 0; i < ga.rows(); ++i)
        for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g[j] * inv;
      break;
    }
    case Op::FrobSq: {
      const Mat& xv = nodes_[n.a].value;
      Mat& ga = grad_ref(n.a);
      for (std::size_t i = 0; i < xv.size(); ++i) ga[i] += 2.0 * g[0] * xv[i];
      break;
    }
    case Op::Nll: {
      const auto label = static_cast<std::size_t>(n.k0);
      const double p = nodes_[n.a].value[label];
      if (p > n.k1) grad_ref(n.a)[label] += -g[0] / p;
      break;
    }
    case Op::JsDivergence: {
      // aux holds the mean distribution.
      const Mat& q = n.aux;
      for (std::int32_t in : {n.a, n.b, n.c}) {
        if (!wants(in)) continue;
        const Mat& p = nodes_[in].value;
        Mat& gp = grad_ref(in);
        for (std::size_t c = 0; c < p.size(); ++c) {
          if (p[c] > 0.0) gp[c] += g[0] * (std::log(p[c]) - std::log(q[c])) / 3.0;
        }
      }
      break;
    }
    case Op::NormalizedEntropy: {
      const Mat& p = nodes_[n.a].value;
      Mat& gp = grad_ref(n.a);
      for (std::size_t c = 0; c < p.size(); ++c) {
        if (p[c] > 0.0) gp[c] += -g[0] * (std::log(p[c]) + 1.0) / n.k0;
      }
      break;
    }
  }
}

Var operator+(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Mat out = a.value();
  const Mat& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.push(make(Op::Add, std::move(out), {a, b}));
}

Var operator-(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Mat out = a.value();
  const Mat& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return t.push(make(Op::Sub, std::move(out), {a, b}));
}

Var operator*(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Mat out = a.value();
  const Mat& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.push(make(Op::Mul, std::move(out), {a, b}));
}

Var operator*(double s, Var a) { return lin(a, s, 0.0); }

Var operator-(Var a) { return lin(a, -1.0, 0.0); }

Var lin(Var a, double mul, double add) {
  Tape& t = tape_of(a);
  Mat out = a.value();
  for (double& x : out.span()) x = mul * x + add;
  Node n = make(Op::Lin, std::move(out), {a});
  n.k0 = mul;
  n.k1 = add;
  return t.push(std::move(n));
}

Var scale_by(Var s, Var a) {
  Tape& t = tape_of(s, a);
  require_scalar(s.value(), "scale_by");
  const double k = s.value()[0];
  Mat out = a.value();
  for (double& x : out.span()) x *= k;
  return t.push(make(Op::ScaleBy, std::move(out), {s, a}));
}

Var affine(Var weight, Var x, Var bias) {
  Tape& t = tape_of(weight, x);
  tape_of(x, bias);
  const Mat& w = weight.value();
  const Mat& xv = x.value();
  const Mat& bv = bias.value();
  require_column(xv, "affine");
  if (w.cols() != xv.rows() || bv.size() != w.rows()) {
    throw ShapeError("affine: weight " + shape_string(w) + ", input " + shape_string(xv) +
                     ", bias " + shape_string(bv));
  }
  Mat out(w.rows(), 1);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const double* row = w.data() + i * w.cols();
    double s = bv[i];
    for (std::size_t j = 0; j < w.cols(); ++j) s += row[j] * xv[j];
    out[i] = s;
  }
  return t.push(make(Op::Affine, std::move(out), {weight, x, bias}));
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.push(make(Op::MatMul, cdpr::matmul(a.value(), b.value()), {a, b}));
}

Var matmul_tn(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Mat& av = a.value();
  const Mat& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw ShapeError("matmul_tn: " + shape_string(av) + "^T * " + shape_string(bv));
  }
  Mat out(av.cols(), bv.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t i = 0; i < av.cols(); ++i) {
      const double ari = av(r, i);
      for (std::size_t j = 0; j < bv.cols(); ++j) out(i, j) += ari * bv(r, j);
    }
  return t.push(make(Op::MatMulTN, std::move(out), {a, b}));
}

Var tanh(Var a) { return unary_map(a, Op::Tanh, [](double x) { return std::tanh(x); }); }

Var sigmoid(Var a) { return unary_map(a, Op::Sigmoid, [](double x) { return cdpr::sigmoid(x); }); }

Var abs(Var a) {
  Tape& t = tape_of(a);
  for (double x : a.value().span()) t.note_kink(std::fabs(x), x > 0.0);
  return unary_map(a, Op::Abs, [](double x) { return std::fabs(x); });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  Tape& t = tape_of(parts.front());
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    tape_of(p, parts.front());
    if (p.value().cols() != cols) throw ShapeError("concat: column count mismatch");
    rows += p.value().rows();
  }
  Mat out(rows, cols);
  std::size_t offset = 0;
  Node n;
  n.op = Op::Concat;
  for (Var p : parts) {
    const Mat& v = p.value();
    std::copy(v.span().begin(), v.span().end(), out.span().begin() + offset);
    offset += v.size();
    n.many.push_back(p.id);
  }
  n.value = std::move(out);
  return t.push(std::move(n));
}

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var softmax(Var a) {
  Tape& t = tape_of(a);
  require_column(a.value(), "softmax");
  Mat out = Mat::column(cdpr::softmax(a.value().to_vec()));
  return t.push(make(Op::Softmax, std::move(out), {a}));
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x, gain);
  tape_of(x, bias);
  const Mat& xv = x.value();
  require_column(xv, "layer_norm");
  if (xv.size() < 2) throw ShapeError("layer_norm: need at least 2 entries");
  require_same_shape(xv, gain.value(), "layer_norm gain");
  require_same_shape(xv, bias.value(), "layer_norm bias");
  const double n = static_cast<double>(xv.size());
  double mean = 0.0;
  for (double v : xv.span()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : xv.span()) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  Mat xhat(xv.rows(), 1);
  Mat out(xv.rows(), 1);
  const Mat& gv = gain.value();
  const Mat& bv = bias.value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    xhat[i] = (xv[i] - mean) * inv;
    out[i] = gv[i] * xhat[i] + bv[i];
  }
  Node node = make(Op::LayerNorm, std::move(out), {x, gain, bias});
  node.aux = std::move(xhat);
  node.k0 = inv;
  return t.push(std::move(node));
}

Var dot(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i] * b.value()[i];
  return t.push(make(Op::Dot, Mat::scalar(s), {a, b}));
}

Var norm2(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double x : a.value().span()) s += x * x;
  const double norm = std::sqrt(s);
  t.note_kink(norm, norm > 0.0);
  return t.push(make(Op::Norm2, Mat::scalar(norm), {a}));
}

Var cosine(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Mat& av = a.value();
  const Mat& bv = b.value();
  require_same_shape(av, bv, "cosine");
  double ab = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    ab += av[i] * bv[i];
    aa += av[i] * av[i];
    bb += bv[i] * bv[i];
  }
  const double na = std::sqrt(aa);
  const double nb = std::sqrt(bb);
  t.note_kink(std::min(na, nb), na > 0.0 && nb > 0.0);
  const double cos = (na == 0.0 || nb == 0.0) ? 0.0 : ab / (na * nb);
  Node n = make(Op::Cosine, Mat::scalar(cos), {a, b});
  n.k0 = na;
  n.k1 = nb;
  return t.push(std::move(n));
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double x : a.value().span()) s += x;
  return t.push(make(Op::Sum, Mat::scalar(s), {a}));
}

Var element(Var a, std::size_t index) {
  Tape& t = tape_of(a);
  if (index >= a.value().size()) throw ShapeError("element: index out of range");
  Node n = make(Op::Element, Mat::scalar(a.value()[index]), {a});
  n.k0 = static_cast<double>(index);
  return t.push(std::move(n));
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  Tape& t = tape_of(rows.front());
  const std::size_t width = rows.front().value().size();
  Mat out(rows.size(), width);
  Node n;
  n.op = Op::StackRows;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Mat& v = rows[r].value();
    tape_of(rows[r], rows.front());
    if (v.size() != width || v.cols() != 1) throw ShapeError("stack_rows: rows must be equal-length columns");
    std::copy(v.span().begin(), v.span().end(), out.span().begin() + r * width);
    n.many.push_back(rows[r].id);
  }
  n.value = std::move(out);
  return t.push(std::move(n));
}

Var center_columns(Var x) {
  Tape& t = tape_of(x);
  Mat out = x.value();
  const std::size_t rows = out.rows();
  for (std::size_t j = 0; j < out.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < rows; ++i) mean += out(i, j);
    mean /= static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i) out(i, j) -= mean;
  }
  return t.push(make(Op::CenterColumns, std::move(out), {x}));
}

Var pow(Var x, int exponent) {
  Tape& t = tape_of(x);
  if (exponent < 1) throw std::invalid_argument("pow: exponent must be >= 1");
  Mat out = x.value();
  for (double& v : out.span()) v = std::pow(v, exponent);
  Node n = make(Op::Pow, std::move(out), {x});
  n.k0 = exponent;
  return t.push(std::move(n));
}

Var col_mean(Var x) {
  Tape& t = tape_of(x);
  const Mat& xv = x.value();
  if (xv.rows() == 0) throw ShapeError("col_mean: no rows");
  Mat out(1, xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out[j] += xv(i, j);
  for (double& v : out.span()) v /= static_cast<double>(xv.rows());
  return t.push(make(Op::ColMean, std::move(out), {x}));
}

Var frob_sq(Var x) {
  Tape& t = tape_of(x);
  return t.push(make(Op::FrobSq, Mat::scalar(frobenius_norm_sq(x.value())), {x}));
}

Var nll(Var probs, std::size_t label, double floor) {
  Tape& t = tape_of(probs);
  const Mat& p = probs.value();
  if (label >= p.size()) throw ShapeError("nll: label out of range");
  const double py = p[label];
  t.note_kink(std::fabs(py - floor), py > floor);
  Node n = make(Op::Nll, Mat::scalar(-std::log(std::max(py, floor))), {probs});
  n.k0 = static_cast<double>(label);
  n.k1 = floor;
  return t.push(std::move(n));
}

Var js_divergence(Var p_t, Var p_v, Var p_a) {
  Tape& t = tape_of(p_t, p_v);
  tape_of(p_t, p_a);
  const Mat& a = p_t.value();
  const Mat& b = p_v.value();
  const Mat& c = p_a.value();
  require_same_shape(a, b, "js_divergence");
  require_same_shape(a, c, "js_divergence");
  Mat q(a.rows(), a.cols());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = (a[i] + b[i] + c[i]) / 3.0;
  double total = 0.0;
  for (const Mat* p : {&a, &b, &c}) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double pi = (*p)[i];
      if (pi > 0.0) total += pi * (std::log(pi) - std::log(q[i]));
    }
  }
  Node n = make(Op::JsDivergence, Mat::scalar(std::max(total / 3.0, 0.0)), {p_t, p_v, p_a});
  n.aux = std::move(q);
  return t.push(std::move(n));
}

Var normalized_entropy(Var p) {
  Tape& t = tape_of(p);
  const Mat& pv = p.value();
  if (pv.size() < 2) throw ConfigError("normalized_entropy: need at least 2 classes");
  const double log_c = std::log(static_cast<double>(pv.size()));
  double h = 0.0;
  for (double x : pv.span()) {
    if (x > 0.0) h -= x * std::log(x);
  }
  Node n = make(Op::NormalizedEntropy, Mat::scalar(h / log_c), {p});
  n.k0 = log_c;
  return t.push(std::move(n));
}

}  // namespace cdpr::ad
