#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "cdpr/autodiff.hpp"

using namespace cdpr;
using ad::Tape;
using ad::Var;

namespace {

using Builder = std::function<Var(Tape&, std::vector<Var>&)>;

Mat random_mat(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Mat m(r, c);
  for (double& x : m.span()) x = scale * rng.normal();
  return m;
}

double eval(const Builder& f, const std::vector<Mat>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const Mat& m : inputs) vars.push_back(tape.constant(m));
  return f(tape, vars).scalar();
}

/// Max relative error between reverse-mode and central differences over every
/// input coordinate.
double check_op(const Builder& f, std::vector<Mat> inputs, double eps = 1e-6) {
  Tape tape;
  std::vector<Var> vars;
  for (const Mat& m : inputs) vars.push_back(tape.input(m));
  Var out = f(tape, vars);
  tape.backward(out);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Mat g = tape.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x = inputs[k].span()[i];
      inputs[k].span()[i] = x + eps;
      const double up = eval(f, inputs);
      inputs[k].span()[i] = x - eps;
      const double down = eval(f, inputs);
      inputs[k].span()[i] = x;
      const double fd = (up - down) / (2.0 * eps);
      const double denom = std::max({std::fabs(g[i]), std::fabs(fd), 1e-8});
      worst = std::max(worst, std::fabs(g[i] - fd) / denom);
    }
  }
  return worst;
}

/// Weighted sum with fixed random weights, so every output coordinate matters.
Var project(Tape& tape, Var x, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ad::sum(x * tape.constant(random_mat(rng, x.value().rows(), x.value().cols())));
}

}  // namespace

TEST_CASE("elementwise and affine ops match finite differences") {
  Rng rng(1);
  const Mat a = random_mat(rng, 4, 1);
  const Mat b = random_mat(rng, 4, 1);
  const Mat w = random_mat(rng, 3, 4);
  const Mat bias = random_mat(rng, 3, 1);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, v[0] + v[1]); }, {a, b}) < 1e-7);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, v[0] - v[1]); }, {a, b}) < 1e-7);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, v[0] * v[1]); }, {a, b}) < 1e-7);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, ad::lin(v[0], -2.0, 0.5)); }, {a}) < 1e-7);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, ad::affine(v[0], v[1], v[2])); }, {w, a, bias}) < 1e-7);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, ad::tanh(v[0])); }, {a}) < 1e-7);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, ad::sigmoid(v[0])); }, {a}) < 1e-7);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, ad::abs(v[0])); }, {a}) < 1e-7);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, ad::concat({v[0], v[1]})); }, {a, b}) < 1e-7);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, ad::scale_by(ad::element(v[0], 2), v[1])); }, {a, b}) <
        1e-7);
}

TEST_CASE("normalizing ops match finite differences") {
  Rng rng(2);
  const Mat a = random_mat(rng, 5, 1);
  const Mat b = random_mat(rng, 5, 1);
  const Mat gain = random_mat(rng, 5, 1);
  const Mat bias = random_mat(rng, 5, 1);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, ad::softmax(v[0])); }, {a}) < 1e-6);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, ad::layer_norm(v[0], v[1], v[2], 1e-5)); },
                 {a, gain, bias}) < 1e-6);
  CHECK(check_op([](Tape&, auto& v) { return ad::dot(v[0], v[1]); }, {a, b}) < 1e-7);
  CHECK(check_op([](Tape&, auto& v) { return ad::norm2(v[0]); }, {a}) < 1e-7);
  CHECK(check_op([](Tape&, auto& v) { return ad::cosine(v[0], v[1]); }, {a, b}) < 1e-6);
  CHECK(check_op([](Tape&, auto& v) { return ad::normalized_entropy(ad::softmax(v[0])); }, {a}) < 1e-6);
  CHECK(check_op([](Tape&, auto& v) {
          return ad::js_divergence(ad::softmax(v[0]), ad::softmax(v[1]), ad::softmax(v[2]));
        },
                 {a, b, gain}) < 1e-6);
  CHECK(check_op([](Tape&, auto& v) { return ad::nll(ad::softmax(v[0]), 2, 1e-12); }, {a}) < 1e-6);
}

TEST_CASE("batch ops match finite differences") {
  Rng rng(3);
  const Mat x = random_mat(rng, 6, 3);
  const Mat y = random_mat(rng, 6, 3);
  CHECK(check_op([](Tape&, auto& v) { return ad::frob_sq(ad::matmul_tn(v[0], v[1])); }, {x, y}) < 1e-6);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, ad::matmul(v[0], ad::matmul_tn(v[0], v[1]))); },
                 {x, y}) < 1e-6);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, ad::center_columns(v[0])); }, {x}) < 1e-7);
  CHECK(check_op([](Tape& t, auto& v) { return project(t, ad::col_mean(ad::pow(v[0], 3))); }, {x}) < 1e-6);
  CHECK(check_op([](Tape& t, auto& v) {
          const Var r0 = ad::concat({ad::element(v[0], 0), ad::element(v[0], 1)});
          const Var r1 = ad::concat({ad::element(v[0], 2), ad::element(v[0], 3)});
          const std::vector<Var> rows{r0, r1};
          return project(t, ad::stack_rows(rows));
        },
                 {x}) < 1e-7);
}

TEST_CASE("reused nodes accumulate gradients") {
  Tape tape;
  Var x = tape.input(Mat::scalar(3.0));
  Var y = x * x + x;  // dy/dx = 2x + 1
  tape.backward(y);
  CHECK(tape.grad(x)[0] == 7.0);
}

TEST_CASE("parameters are keyed by address") {
  Mat w = Mat::from_rows({{2.0}});
  Tape tape;
  Var a = tape.param(w);
  Var b = tape.param(w);
  CHECK(a.id == b.id);
  tape.backward(a * b);
  CHECK(tape.grad_of(w)[0] == 4.0);
  const Mat unused(2, 2, 1.0);
  CHECK(tape.grad_of(unused) == Mat(2, 2));
}

TEST_CASE("non-smooth points use the zero subgradient") {
  SUBCASE("abs at 0") {
    Tape tape;
    Var x = tape.input(Vec(std::vector<double>{0.0, -2.0, 3.0}));
    tape.backward(ad::sum(ad::abs(x)));
    CHECK(tape.grad(x) == Mat::from_rows({{0.0}, {-1.0}, {1.0}}));
  }
  SUBCASE("norm at the origin") {
    Tape tape;
    Var x = tape.input(Vec(3, 0.0));
    Var n = ad::norm2(x);
    CHECK(n.scalar() == 0.0);
    tape.backward(n);
    CHECK(tape.grad(x) == Mat(3, 1));
  }
  SUBCASE("clamped probability") {
    Tape tape;
    Var p = tape.input(Vec(std::vector<double>{1.0, 0.0}));
    Var loss = ad::nll(p, 1, 1e-12);
    CHECK(loss.scalar() == doctest::Approx(-std::log(1e-12)));
    tape.backward(loss);
    CHECK(tape.grad(p) == Mat(2, 1));
  }
  SUBCASE("kink signature tracks the branch taken") {
    auto signature = [](double x) {
      Tape tape;
      ad::abs(tape.input(Vec(std::vector<double>{x, 1.0})));
      return tape.kink_signature();
    };
    CHECK(signature(0.5) == signature(0.25));
    CHECK(signature(0.5) != signature(-0.5));
  }
}

TEST_CASE("shape errors") {
  Tape tape;
  Var a = tape.constant(Mat(3, 1));
  Var b = tape.constant(Mat(2, 1));
  CHECK_THROWS_AS(a + b, ShapeError);
  CHECK_THROWS_AS(ad::dot(a, b), ShapeError);
  CHECK_THROWS_AS(tape.backward(a), ShapeError);
  CHECK_THROWS_AS(ad::normalized_entropy(tape.constant(Mat(1, 1, 1.0))), ConfigError);
}
