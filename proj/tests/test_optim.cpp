#include <sintra/nn/optim.hpp>

#include <gtest/gtest.h>

using namespace sintra;
using namespace sintra::nn;

namespace {

std::vector<Param<double>> scalar_params(std::vector<double> values) {
  const std::size_t n = values.size();
  return {{"w", parameter(Tensor<double>(1, n, std::move(values)))}};
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto params = scalar_params({0.3, -1.0});
  auto state = OptimizerState<double>::for_parameters(params);
  adam_step(params, state, 0.1);
  EXPECT_EQ(params[0].var->value[0], 0.3);
  EXPECT_EQ(params[0].var->value[1], -1.0);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, FirstStepIsLearningRate) {
  auto params = scalar_params({0.0});
  auto state = OptimizerState<double>::for_parameters(params);
  params[0].var->grad_buffer()[0] = 1.0;
  adam_step(params, state, 0.1);
  // Bias-corrected m = v = 1: update = -0.1 / (1 + 1e-8).
  EXPECT_NEAR(params[0].var->value[0], -0.09999999900000002, 1e-15);
}

TEST(Adam, ThreeStepTrajectory) {
  // Reference trajectory from a float64 NumPy evaluation of the same recurrences
  // (beta1 0.5, beta2 0.999, eps 1e-8, lr 0.01).
  auto params = scalar_params({0.3, -1.2});
  auto state = OptimizerState<double>::for_parameters(params);
  const std::vector<std::vector<double>> grads{{1.0, -2.0}, {-0.5, 0.25}, {2.0, 0.0}};
  const std::vector<std::vector<double>> expected{
      {0.2900000001, -1.19000000005}, {0.2900000001, -1.1864909171911295}, {0.2813632813435278, -1.184648571427855}};
  for (std::size_t s = 0; s < 3; ++s) {
    params[0].var->grad_buffer()[0] = grads[s][0];
    params[0].var->grad_buffer()[1] = grads[s][1];
    adam_step(params, state, 0.01);
    EXPECT_NEAR(params[0].var->value[0], expected[s][0], 1e-14) << s;
    EXPECT_NEAR(params[0].var->value[1], expected[s][1], 1e-14) << s;
  }
}

TEST(Adam, DeterministicAndShapeChecked) {
  auto a = scalar_params({1.0, 2.0}), b = scalar_params({1.0, 2.0});
  auto sa = OptimizerState<double>::for_parameters(a), sb = OptimizerState<double>::for_parameters(b);
  for (auto* p : {&a, &b}) {
    (*p)[0].var->grad_buffer()[0] = 0.7;
    (*p)[0].var->grad_buffer()[1] = -0.2;
  }
  adam_step(a, sa, 0.05);
  adam_step(b, sb, 0.05);
  EXPECT_EQ(a[0].var->value, b[0].var->value);
  EXPECT_EQ(sa, sb);
  OptimizerState<double> empty;
  EXPECT_THROW(adam_step(a, empty, 0.1), UsageError);
}

TEST(LrSchedule, Endpoints) {
  EXPECT_EQ(lr_schedule(0, 2000, 2e-4, 200), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(100, 2000, 2e-4, 200), 1e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(200, 2000, 2e-4, 200), 2e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(2000, 2000, 2e-4, 200), 2e-6);
  EXPECT_DOUBLE_EQ(lr_schedule(2500, 2000, 2e-4, 200), 2e-6);
  // Cosine midpoint and a quarter point.
  EXPECT_NEAR(lr_schedule(1100, 2000, 2e-4, 200), 0.000101, 1e-18);
  EXPECT_NEAR(lr_schedule(700, 2000, 2e-4, 200), 0.00016463597335896743, 1e-18);
  EXPECT_THROW(lr_schedule(-1, 10, 1.0, 0), UsageError);
}

TEST(LrSchedule, MonotoneAfterWarmup) {
  double prev = lr_schedule(200, 2000, 2e-4, 200);
  for (int s = 201; s <= 2000; ++s) {
    double cur = lr_schedule(s, 2000, 2e-4, 200);
    EXPECT_LE(cur, prev);
    prev = cur;
  }
  EXPECT_DOUBLE_EQ(lr_schedule(0, 10, 1.0, 0), 1.0);
}
