#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "mtbrn/error.hpp"
#include "mtbrn/grad_check.hpp"
#include "mtbrn/tape.hpp"

using namespace mtbrn;
using namespace mtbrn::tensor;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Reduces an op output to a scalar through fixed random weights so every
// output element contributes a distinct gradient.
using UnaryOp = std::function<Var(Var)>;

double weighted_output(const UnaryOp& op, const Tensor& x, const Tensor& weights) {
  Tape tape(false);
  const Tensor out = op(tape.constant(x)).value();
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
  return s;
}

// Max |analytic - central difference| over all input elements, scaled by
// max(1, |analytic|).
double primitive_grad_error(const UnaryOp& op, const Tensor& x, std::mt19937_64& rng) {
  Tensor weights;
  {
    Tape probe(false);
    const auto& out = op(probe.constant(x)).value();
    weights = random_tensor(rng, out.rows(), out.cols());
  }
  Tape tape;
  Var in = tape.variable(x);
  Var loss = sum(mul(op(in), tape.constant(weights)));
  tape.backward(loss);
  const Tensor analytic = in.grad();

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor plus = x, minus = x;
    plus[i] += h;
    minus[i] -= h;
    const double numeric = (weighted_output(op, plus, weights) - weighted_output(op, minus, weights)) / (2 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace

// ---------------------------------------------------------------------------
// Worked examples

TEST(TensorOps, SigmoidOfZeroIsHalf) {
  Tape tape;
  EXPECT_EQ(sigmoid(tape.constant(Tensor::scalar(0.0))).value()[0], 0.5);
}

TEST(TensorOps, SoftmaxOfSingleElementIsOne) {
  Tape tape;
  EXPECT_EQ(softmax(tape.constant(Tensor::scalar(-37.5))).value()[0], 1.0);
}

TEST(TensorOps, MatmulWorkedExample) {
  Tape tape;
  const auto out = matmul(tape.constant(Tensor::from_rows({{1, 2}, {3, 4}})), tape.constant(Tensor::from_rows({{1}, {1}})));
  EXPECT_EQ(out.value(), Tensor::from_rows({{3}, {7}}));
}

TEST(TensorOps, SquareGradientAtThree) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(3.0));
  tape.backward(mul(x, x));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(TensorOps, SumOfSigmoidGradientAtZero) {
  Tape tape;
  Var x = tape.variable(Tensor::from_rows({{0.0, 0.0, 0.0}}));
  tape.backward(sum(sigmoid(x)));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(x.grad()[i], 0.25);
}

TEST(TensorOps, ReluSubgradientAtZeroIsZero) {
  Tape tape;
  Var x = tape.variable(Tensor::from_rows({{-1.0, 0.0, 2.0}}));
  tape.backward(sum(relu(x)));
  EXPECT_EQ(x.grad(), Tensor::from_rows({{0.0, 0.0, 1.0}}));
}

TEST(TensorOps, UnusedVariableHasZeroGradient) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(1.0));
  Var y = tape.variable(Tensor::from_rows({{1.0, 2.0}}));
  tape.backward(scale(x, 2.0));
  EXPECT_EQ(y.grad(), Tensor(1, 2));
}

TEST(TensorOps, SegmentOpsHandleEmptySegments) {
  Tape tape;
  Var v = tape.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  const std::vector<std::size_t> offsets{0, 0, 2};
  EXPECT_EQ(segment_mean(v, offsets).value(), Tensor::from_rows({{0, 0}, {2, 3}}));
  Var w = segment_softmax(tape.constant(Tensor::from_rows({{5}, {5}})), offsets);
  EXPECT_EQ(w.value(), Tensor::from_rows({{0.5}, {0.5}}));
  EXPECT_EQ(segment_weighted_sum(w, v, offsets).value(), Tensor::from_rows({{0, 0}, {2, 3}}));
}

TEST(TensorOps, PairwiseProductsOrder) {
  Tape tape;
  Var v = tape.constant(Tensor::from_rows({{1}, {2}, {3}, {5}}));
  std::vector<std::size_t> out_offsets;
  const auto out = pairwise_products(v, {0, 3, 4}, out_offsets);
  EXPECT_EQ(out.value(), Tensor::from_rows({{2}, {3}, {6}}));
  EXPECT_EQ(out_offsets, (std::vector<std::size_t>{0, 3, 3}));
}

TEST(TensorOps, EmbeddingLookupScalesAndMarksRows) {
  Parameter table("emb", Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}}), true);
  Tape tape;
  Var out = embedding_lookup(tape, table, {2, kNoRow, 0}, {2.5, 1.0, 1.0});
  EXPECT_EQ(out.value(), Tensor::from_rows({{12.5, 15}, {0, 0}, {1, 2}}));
  tape.backward(sum(out));
  EXPECT_EQ(table.grad, Tensor::from_rows({{1, 1}, {0, 0}, {2.5, 2.5}}));
  EXPECT_EQ(table.touched_rows, (std::vector<std::uint8_t>{1, 0, 1}));
}

TEST(TensorOps, BceWorkedValues) {
  Tape tape;
  EXPECT_NEAR(bce_loss(tape.constant(Tensor::scalar(0.5)), {1.0}).value()[0], 0.693147, 1e-6);
  EXPECT_NEAR(bce_loss(tape.constant(Tensor::scalar(0.2)), {0.0}).value()[0], 0.223144, 1e-6);
  // Clamped: log(1e-12) instead of log(0).
  EXPECT_NEAR(bce_loss(tape.constant(Tensor::scalar(0.0)), {1.0}).value()[0], -std::log(kLogClamp), 1e-9);
}

// ---------------------------------------------------------------------------
// Errors

TEST(TensorErrors, ShapeMismatchThrows) {
  Tape tape;
  Var a = tape.constant(Tensor(2, 3));
  Var b = tape.constant(Tensor(3, 2));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(mul(a, b), ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_THROW(softmax(a), ShapeError);
  EXPECT_THROW(reshape(a, 4, 2), ShapeError);
  EXPECT_THROW(Tensor(2, 2, {1.0}), ShapeError);
}

TEST(TensorErrors, NonFiniteValueThrows) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(std::numeric_limits<double>::quiet_NaN()));
  EXPECT_THROW(sigmoid(x), NumericError);
  Var big = tape.variable(Tensor::scalar(1e200));
  EXPECT_THROW(mul(big, big), NumericError);
}

TEST(TensorErrors, BackwardNeedsScalarLoss) {
  Tape tape;
  Var x = tape.variable(Tensor(1, 2));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

// ---------------------------------------------------------------------------
// Properties

TEST(TensorProperty, PrimitiveGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(41);
  for (int c = 0; c < 100; ++c) {
    const std::size_t r = 1 + rng() % 3, k = 1 + rng() % 4;
    const Tensor other = random_tensor(rng, r, k);
    const Tensor right = random_tensor(rng, k, 1 + rng() % 3);
    const Tensor row = random_tensor(rng, 1, k);
    // Keep relu inputs away from the kink.
    Tensor relu_in = random_tensor(rng, r, k);
    for (auto& v : relu_in.data()) v = v >= 0 ? v + 0.1 : v - 0.1;
    const std::vector<std::size_t> segs{0, r / 2, r};
    std::vector<std::size_t> gather;
    for (std::size_t i = 0; i < 4; ++i) gather.push_back(rng() % r);

    const std::vector<std::pair<const char*, UnaryOp>> ops{
        {"matmul_left", [&](Var x) { return matmul(x, x.tape()->constant(right)); }},
        {"transpose", [](Var x) { return transpose(x); }},
        {"reshape", [&](Var x) { return reshape(x, k, r); }},
        {"add", [&](Var x) { return add(x, x.tape()->constant(other)); }},
        {"sub", [&](Var x) { return sub(x.tape()->constant(other), x); }},
        {"mul", [&](Var x) { return mul(x, x.tape()->constant(other)); }},
        {"mul_self", [](Var x) { return mul(x, x); }},
        {"scale", [](Var x) { return scale(x, -1.75); }},
        {"concat_cols", [](Var x) { return concat_cols(std::vector<Var>{x, x}); }},
        {"concat_rows", [](Var x) { return concat_rows(std::vector<Var>{x, x}); }},
        {"sigmoid", [](Var x) { return sigmoid(x); }},
        {"tanh", [](Var x) { return tensor::tanh(x); }},
        {"sum", [](Var x) { return sum(x); }},
        {"mean", [](Var x) { return mean(x); }},
        {"row_sum", [](Var x) { return row_sum(x); }},
        {"gather_rows", [&](Var x) { return gather_rows(x, gather); }},
        {"softmax", [](Var x) { return softmax(reshape(x, 1, x.value().size())); }},
        {"segment_softmax", [&](Var x) { return segment_softmax(reshape(row_sum(x), r, 1), segs); }},
        {"segment_mean", [&](Var x) { return segment_mean(x, segs); }},
        {"segment_weighted_sum_w",
         [&](Var x) { return segment_weighted_sum(row_sum(x), x.tape()->constant(other), segs); }},
        {"pairwise_products",
         [&](Var x) {
           std::vector<std::size_t> out;
           return pairwise_products(x, segs, out);
         }},
    };
    const Tensor x = random_tensor(rng, r, k);
    for (const auto& [name, op] : ops) {
      ASSERT_LE(primitive_grad_error(op, x, rng), 1e-6) << name << " case " << c;
    }
    const Tensor left = random_tensor(rng, 2, r);
    const Tensor seg_w = random_tensor(rng, r, 1);
    ASSERT_LE(primitive_grad_error([&](Var v) { return matmul(v.tape()->constant(left), v); }, x, rng), 1e-6);
    ASSERT_LE(primitive_grad_error([&](Var v) { return segment_weighted_sum(v.tape()->constant(seg_w), v, segs); }, x,
                                   rng),
              1e-6);
    ASSERT_LE(primitive_grad_error([](Var v) { return relu(v); }, relu_in, rng), 1e-6);
    ASSERT_LE(primitive_grad_error([&](Var v) { return repeat_rows(v, 3); }, row, rng), 1e-6);
    Tensor probs = random_tensor(rng, r, 1, 0.05, 0.95);
    std::vector<double> labels(r);
    for (auto& l : labels) l = static_cast<double>(rng() % 2);
    ASSERT_LE(primitive_grad_error([&](Var v) { return bce_loss(v, labels); }, probs, rng), 1e-6);
  }
}

TEST(TensorProperty, SoftmaxSumsToOne) {
  std::mt19937_64 rng(42);
  for (int c = 0; c < 200; ++c) {
    Tape tape;
    const Tensor x = random_tensor(rng, 1, 1 + rng() % 60, -50.0, 50.0);
    const Tensor p = softmax(tape.constant(x)).value();
    double s = 0.0;
    for (double v : p.data()) {
      ASSERT_GE(v, 0.0);
      s += v;
    }
    ASSERT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(TensorProperty, ForwardIsBitwiseDeterministic) {
  std::mt19937_64 rng(43);
  for (int c = 0; c < 100; ++c) {
    const Tensor a = random_tensor(rng, 3, 5), b = random_tensor(rng, 5, 4);
    auto run = [&] {
      Tape tape;
      Var h = tensor::tanh(matmul(tape.constant(a), tape.constant(b)));
      return softmax(reshape(sigmoid(h), 1, 12)).value();
    };
    const Tensor first = run();
    ASSERT_EQ(first, run());
  }
}

// ---------------------------------------------------------------------------
// grad_check

TEST(GradCheck, DotProductPassesTightTolerance) {
  Parameter w("w", Tensor::from_rows({{0.3, -1.2, 2.0}}));
  GradCheckOptions options;
  options.tolerance = 1e-6;
  const auto report = grad_check([&](Tape& t) {
    Var v = t.param(w);
    return sum(mul(v, v));
  }, {&w}, options);
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.checked, 3u);
  EXPECT_LE(report.max_rel_error, 1e-6);
}

TEST(GradCheck, ReluAtZeroIsReportedAsKink) {
  Parameter w("w", Tensor::from_rows({{0.0, 1.0}}));
  const auto report = grad_check([&](Tape& t) { return sum(relu(t.param(w))); }, {&w});
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.excluded_kinks, 1u);
  EXPECT_EQ(report.checked, 1u);
}

TEST(GradCheck, WrongGradientFails) {
  Parameter w("w", Tensor::from_rows({{0.7}}));
  const auto report = grad_check([&](Tape& t) {
    Var v = t.param(w);
    // Correct value, gradient doubled.
    Tensor out = Tensor::scalar(v.value()[0] * v.value()[0]);
    return t.record("bad_square", out, {v}, [v](Tape& tape, const Tensor& g) {
      (*tape.grad_sink(v.index()))[0] += g[0] * 4.0 * v.value()[0];
    });
  }, {&w});
  EXPECT_FALSE(report.passed);
  EXPECT_NEAR(report.max_rel_error, 0.5, 1e-6);
}

TEST(GradCheck, RelativeErrorUsesFloor) {
  EXPECT_EQ(relative_error(0.0, 0.0, 1e-6), 0.0);
  EXPECT_NEAR(relative_error(1e-9, 0.0, 1e-6), 1e-3, 1e-15);
  EXPECT_NEAR(relative_error(2.0, 1.0, 1e-6), 0.5, 1e-15);
}
