#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "h4d/adam.hpp"
#include "h4d/autodiff.hpp"
#include "h4d/recurrent.hpp"
#include "oracles/finite_difference.hpp"
#include "oracles/random.hpp"

using namespace h4d;
using oracle::random_tensor;

namespace {

GateWeights constant_gates(Tape& tape, std::size_t d_in, std::size_t hid, float bias_z = 0.0f) {
  Tensor b_ih(Shape{3 * hid});
  for (std::size_t i = 0; i < hid; ++i) b_ih[hid + i] = bias_z;
  return GateWeights{tape.constant(Tensor(Shape{d_in, 3 * hid})), tape.constant(Tensor(Shape{hid, 3 * hid})),
                     tape.constant(b_ih), tape.constant(Tensor(Shape{3 * hid}))};
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  EXPECT_EQ(Tensor(Shape{2, 3}).size(), 6u);
  EXPECT_THROW(Tensor(Shape{2, 3}).reshaped(Shape{4}), DimensionError);
}

TEST(Matmul, IdentityIsNeutral) {
  Tape tape;
  std::mt19937_64 rng(3);
  Tensor a = random_tensor({3, 4}, rng);
  Var out = matmul(tape.constant(Tensor::identity(3)), tape.constant(a));
  EXPECT_EQ(out.value(), a);
}

TEST(Matmul, HandArithmetic) {
  Tape tape;
  Var out = matmul(tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4})), tape.constant(Tensor::matrix(2, 1, {1, 1})));
  EXPECT_EQ(out.value(), Tensor::matrix(2, 1, {3, 7}));
}

TEST(Matmul, ShapeMismatchThrows) {
  Tape tape;
  EXPECT_THROW(matmul(tape.constant(Tensor(Shape{2, 3})), tape.constant(Tensor(Shape{2, 3}))), DimensionError);
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  std::mt19937_64 rng(11);
  Tensor a = random_tensor({5, 4}, rng), b = random_tensor({4, 3}, rng);
  Tape tape;
  Var va = tape.leaf(a), vb = tape.leaf(b);
  tape.backward(sum(matmul(va, vb)));
  Tensor ga = tape.grad(va);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      const float expected = b.at(k, 0) + b.at(k, 1) + b.at(k, 2);
      EXPECT_NEAR(ga.at(i, k), expected, 1e-6);
    }
  }
  auto check = oracle::gradient_check([](Tape&, const std::vector<Var>& v) { return sum(matmul(v[0], v[1])); },
                                      {a, b});
  EXPECT_LT(check.max_rel_error, 1e-3);
}

TEST(Backward, SumOfLinearMapGivesBroadcastInput) {
  Tape tape;
  Tensor x = Tensor::matrix(3, 1, {0.5f, -2.0f, 4.0f});
  Var w = tape.leaf(Tensor(Shape{2, 3}, 1.0f));
  tape.backward(sum(matmul(w, tape.constant(x))));
  Tensor g = tape.grad(w);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_FLOAT_EQ(g.at(r, c), x[c]);
}

TEST(Backward, ConstantLossGivesZeroGradient) {
  Tape tape;
  Var w = tape.leaf(Tensor(Shape{3}, 2.0f));
  Var c = tape.constant(Tensor::scalar(5.0f));
  Var unrelated = sum(w);
  (void)unrelated;
  tape.backward(c);
  EXPECT_EQ(tape.grad(w), Tensor(Shape{3}));
}

TEST(Backward, UnreachableLeafGetsZeros) {
  Tape tape;
  Var a = tape.leaf(Tensor(Shape{2}, 1.0f));
  Var b = tape.leaf(Tensor(Shape{4}, 1.0f));
  tape.backward(sum(square(a)));
  EXPECT_EQ(tape.grad(b), Tensor(Shape{4}));
  EXPECT_EQ(tape.grad(a), Tensor(Shape{2}, 2.0f));
}

TEST(Backward, NonScalarLossThrows) {
  Tape tape;
  Var a = tape.leaf(Tensor(Shape{2}, 1.0f));
  EXPECT_THROW(tape.backward(square(a)), DimensionError);
}

TEST(Backward, IsLinearInTheLoss) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({4, 3}, rng);
  auto grad_of = [&](float ca, float cb) {
    Tape tape;
    Var v = tape.leaf(x);
    Var l1 = sum(tanh(v));
    Var l2 = mean(square(v));
    tape.backward(add(scale(l1, ca), scale(l2, cb)));
    return tape.grad(v);
  };
  Tensor g1 = grad_of(1, 0), g2 = grad_of(0, 1), g = grad_of(2.5f, -0.75f);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g[i], 2.5f * g1[i] - 0.75f * g2[i], 1e-6);
}

// Every primitive against central differences on 20 random seeds.
TEST(Primitives, GradientsMatchFiniteDifferences) {
  using oracle::LossBuilder;
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    LossBuilder build;
  };
  const std::vector<std::size_t> rows = {2, 0, 1};
  std::vector<Case> cases = {
      {"matmul", {{3, 4}, {4, 2}}, [](Tape&, auto& v) { return sum(tanh(matmul(v[0], v[1]))); }},
      {"add", {{3, 2}, {3, 2}}, [](Tape&, auto& v) { return sum(square(add(v[0], v[1]))); }},
      {"sub", {{3, 2}, {3, 2}}, [](Tape&, auto& v) { return sum(square(sub(v[0], v[1]))); }},
      {"mul", {{5}, {5}}, [](Tape&, auto& v) { return sum(mul(v[0], v[1])); }},
      {"scale", {{4}}, [](Tape&, auto& v) { return sum(square(scale(v[0], -1.7f))); }},
      {"add_row", {{3, 4}, {4}}, [](Tape&, auto& v) { return sum(tanh(add_row(v[0], v[1]))); }},
      {"relu", {{6}}, [](Tape&, auto& v) { return sum(mul(relu(v[0]), v[0])); }},
      {"sigmoid", {{6}}, [](Tape&, auto& v) { return sum(sigmoid(v[0])); }},
      {"tanh", {{6}}, [](Tape&, auto& v) { return sum(tanh(v[0])); }},
      {"mean", {{2, 3}}, [](Tape&, auto& v) { return mean(square(v[0])); }},
      {"reshape", {{2, 3}}, [](Tape&, auto& v) { return sum(tanh(matmul(reshape(v[0], {3, 2}), v[0]))); }},
      {"concat", {{2}, {3}}, [](Tape&, auto& v) { return sum(square(concat({v[0], v[1], v[0]}))); }},
      {"concat_cols", {{2, 2}, {2, 3}},
       [](Tape&, auto& v) { return sum(tanh(concat_cols(v[0], v[1]))); }},
      {"slice", {{6}}, [](Tape&, auto& v) { return sum(square(slice(v[0], 1, 4))); }},
      {"slice_cols", {{3, 5}}, [](Tape&, auto& v) { return sum(square(slice_cols(v[0], 1, 4))); }},
      {"gather_rows", {{4, 2}},
       [rows](Tape&, auto& v) { return sum(square(gather_rows(v[0], rows))); }},
      {"row", {{3, 4}}, [](Tape&, auto& v) { return sum(square(row(v[0], 1))); }},
      {"stack_rows", {{3}, {3}},
       [](Tape&, auto& v) {
         std::vector<Var> r = {v[0], v[1], v[0]};
         return sum(tanh(stack_rows(r)));
       }},
      {"repeat_segments", {{2, 3}}, [](Tape&, auto& v) { return sum(tanh(repeat_segments(v[0], 3))); }},
      {"segment_max", {{6, 3}}, [](Tape&, auto& v) { return sum(square(segment_max(v[0], 2))); }},
      {"outer_add_rows", {{2, 3}, {4, 3}},
       [](Tape&, auto& v) { return sum(tanh(outer_add_rows(v[0], v[1]))); }},
  };
  for (const Case& c : cases) {
    for (int seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(1000 + seed);
      std::vector<Tensor> inputs;
      for (const Shape& s : c.shapes) inputs.push_back(random_tensor(s, rng));
      auto res = oracle::gradient_check(c.build, inputs);
      EXPECT_LT(res.max_rel_error, 1e-3) << c.name << " seed " << seed;
    }
  }
}

TEST(Primitives, DeterministicGivenInputs) {
  std::mt19937_64 rng(9);
  Tensor a = random_tensor({16, 8}, rng), b = random_tensor({8, 5}, rng);
  auto run = [&] {
    Tape tape;
    Var va = tape.leaf(a);
    Var loss = sum(tanh(matmul(va, tape.constant(b))));
    tape.backward(loss);
    return std::make_pair(loss.value(), tape.grad(va));
  };
  EXPECT_EQ(run(), run());
}

TEST(GruCell, ZeroParametersGiveZeroState) {
  Tape tape;
  GateWeights w = constant_gates(tape, 3, 2);
  Var h = gru_cell(tape.constant(Tensor::vector({0.3f, -1.0f, 2.0f})), tape.constant(Tensor(Shape{2})), w);
  EXPECT_EQ(h.value(), Tensor(Shape{2}));
}

TEST(GruCell, SaturatedUpdateGateKeepsState) {
  Tape tape;
  GateWeights w = constant_gates(tape, 3, 2, 40.0f);
  Tensor h0 = Tensor::vector({0.4f, -0.8f});
  Var h = gru_cell(tape.constant(Tensor::vector({1.0f, 2.0f, 3.0f})), tape.constant(h0), w);
  EXPECT_LT(max_abs_diff(h.value(), h0), 1e-4);
}

TEST(GruCell, ShapeMismatchThrows) {
  Tape tape;
  GateWeights w = constant_gates(tape, 3, 2);
  EXPECT_THROW(gru_cell(tape.constant(Tensor(Shape{4})), tape.constant(Tensor(Shape{2})), w), DimensionError);
  EXPECT_THROW(gru_cell(tape.constant(Tensor(Shape{3})), tape.constant(Tensor(Shape{3})), w), DimensionError);
}

TEST(GruCell, BackpropThroughTimeMatchesFiniteDifferences) {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(77 + seed);
    std::vector<Tensor> inputs = {random_tensor({4, 3}, rng),  random_tensor({3, 6}, rng),
                                  random_tensor({2, 6}, rng),  random_tensor({6}, rng),
                                  random_tensor({6}, rng)};
    auto build = [](Tape& tape, const std::vector<Var>& v) {
      GateWeights w{v[1], v[2], v[3], v[4]};
      Var h = tape.constant(Tensor(Shape{2}));
      Var loss = tape.constant(Tensor::scalar(0.0f));
      for (std::size_t t = 0; t < 4; ++t) {
        h = gru_cell(row(v[0], t), h, w);
        loss = add(loss, sum(mul(h, h)));
      }
      return loss;
    };
    EXPECT_LT(oracle::gradient_check(build, inputs).max_rel_error, 1e-3) << "seed " << seed;
  }
}

TEST(StackedGru, SingleStepIsTwoChainedCells) {
  std::mt19937_64 rng(4);
  ParameterSet params;
  init_gru(params, "g", 5, 4, 2, rng);
  Tensor x = random_tensor({1, 5}, rng);
  Tape tape;
  Binding bind(tape, params);
  auto layers = bind_gru(bind, "g", 2);
  Var out = stacked_gru(tape.constant(x), layers);
  Var h0 = tape.constant(Tensor(Shape{4}));
  Var h1 = gru_cell(reshape(tape.constant(x), {5}), h0, layers[0]);
  Var h2 = gru_cell(h1, h0, layers[1]);
  EXPECT_EQ(out.value().reshaped({4}), h2.value());
}

TEST(StackedGru, StepOrderMatters) {
  std::mt19937_64 rng(8);
  ParameterSet params;
  init_gru(params, "g", 3, 6, 2, rng);
  Tensor x = random_tensor({5, 3}, rng);
  Tensor reversed(Shape{5, 3});
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t j = 0; j < 3; ++j) reversed.at(t, j) = x.at(4 - t, j);
  Tape tape;
  Binding bind(tape, params);
  auto layers = bind_gru(bind, "g", 2);
  Var a = stacked_gru(tape.constant(x), layers);
  Var b = stacked_gru(tape.constant(reversed), layers);
  EXPECT_GT(max_abs_diff(row(a, 4).value(), row(b, 4).value()), 1e-4);
}

TEST(StackedGru, OutputShapeFollowsHiddenSize) {
  std::mt19937_64 rng(2);
  for (std::size_t hid : {8u, 16u}) {
    ParameterSet params;
    init_gru(params, "g", 3, hid, 2, rng);
    Tape tape;
    Binding bind(tape, params);
    Var out = stacked_gru(tape.constant(random_tensor({7, 3}, rng)), bind_gru(bind, "g", 2));
    EXPECT_EQ(out.shape(), (Shape{7, hid}));
  }
}

TEST(StackedGru, EmptySequenceThrows) {
  std::mt19937_64 rng(2);
  ParameterSet params;
  init_gru(params, "g", 3, 4, 2, rng);
  Tape tape;
  Binding bind(tape, params);
  EXPECT_THROW(stacked_gru(tape.constant(Tensor(Shape{0, 3})), bind_gru(bind, "g", 2)), DimensionError);
}

TEST(Adam, ZeroGradientLeavesParametersAndCountsStep) {
  ParameterSet p;
  p.set("x", Tensor::vector({1.0f, -2.0f}));
  Adam adam(AdamOptions{0.1f});
  adam.step(p, {{"x", Tensor(Shape{2})}});
  EXPECT_EQ(p.get("x"), Tensor::vector({1.0f, -2.0f}));
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet p;
  p.set("x", Tensor::scalar(1.0f));
  Adam adam(AdamOptions{0.1f});
  adam.step(p, {{"x", Tensor::scalar(1.0f)}});
  // Closed form: m̂ = g, v̂ = g², so x -= lr·g/(|g| + eps).
  const double expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
  EXPECT_NEAR(p.get("x").item(), expected, 1e-7);
}

TEST(Adam, MinimizesParabola) {
  ParameterSet p;
  p.set("x", Tensor::scalar(1.0f));
  Adam adam(AdamOptions{3e-2f});
  for (int i = 0; i < 200; ++i) {
    Tape tape;
    Binding bind(tape, p);
    Var loss = sum(square(bind["x"]));
    tape.backward(loss);
    adam.step(p, bind.gradients());
  }
  EXPECT_LT(std::abs(p.get("x").item()), 1e-2);
}

TEST(Adam, ZeroLearningRateIsIdentity) {
  std::mt19937_64 rng(1);
  ParameterSet p;
  p.set("w", random_tensor({3, 3}, rng));
  const ParameterSet before = p;
  Adam adam(AdamOptions{0.0f});
  for (int i = 0; i < 5; ++i) adam.step(p, {{"w", random_tensor({3, 3}, rng)}});
  EXPECT_EQ(p, before);
}

TEST(Adam, NonFiniteGradientThrows) {
  ParameterSet p;
  p.set("x", Tensor::scalar(1.0f));
  Adam adam;
  EXPECT_THROW(adam.step(p, {{"x", Tensor::scalar(std::nanf(""))}}), NumericError);
  EXPECT_EQ(p.get("x").item(), 1.0f);
}
