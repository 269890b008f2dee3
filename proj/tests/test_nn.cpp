#include <gtest/gtest.h>

#include <random>
#include <utility>
#include <sstream>

#include "g3/errors.hpp"
#include "g3/nn.hpp"
#include "support/gradcheck.hpp"

using namespace g3;
using namespace g3::nn;

namespace {

template <typename T>
Mlp<T> random_mlp(const MlpSpec& spec, std::uint64_t seed) {
  Mlp<T> m(spec);
  std::mt19937_64 rng(seed);
  m.init_kaiming_uniform(rng);
  return m;
}

template <typename T>
Matrix<T> random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix<T> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(g(rng));
  return m;
}

// Scalar objective sum(output .* R) so the upstream gradient is R.
template <typename T>
test_support::GradCheckResult check_random_net(std::uint64_t seed, T h, double floor) {
  std::mt19937_64 rng(seed);
  MlpSpec spec{{4, 6, 5, 3}, {Activation::kRelu, Activation::kRelu, Activation::kNone}};
  auto mlp = random_mlp<T>(spec, seed);
  const auto x = random_matrix<T>(5, 4, rng);
  const auto r = random_matrix<T>(5, 3, rng);
  const auto fwd = mlp_forward(mlp, x);
  const auto back = mlp_backward(mlp, fwd.cache, r);
  const auto mask = [&] {
    std::vector<bool> m;
    for (const auto& pre : mlp_forward(mlp, x).cache.pre_activations) {
      for (Eigen::Index i = 0; i < pre.size(); ++i) m.push_back(pre.data()[i] > T(0));
    }
    return m;
  };
  const auto base = mask();
  bool crossed = false;
  const std::function<T()> f = [&] {
    crossed = crossed || mask() != base;
    return (mlp_infer(mlp, x).array() * r.array()).sum();
  };
  const std::function<bool()> kinked = [&] { return std::exchange(crossed, false); };
  test_support::GradCheckResult res;
  test_support::check_mlp(mlp, back.grads, h, floor, f, res, kinked);
  return res;
}

}  // namespace

TEST(MlpSpec, Validation) {
  EXPECT_THROW((MlpSpec{{4}, {}}.validate()), UsageError);
  EXPECT_THROW((MlpSpec{{4, 0}, {Activation::kNone}}.validate()), UsageError);
  EXPECT_THROW((MlpSpec{{4, 3}, {}}.validate()), UsageError);
  EXPECT_NO_THROW(MlpSpec::two_layer(768, 768, 512).validate());
  const auto s = MlpSpec::two_layer(2, 3, 4);
  EXPECT_EQ(s.activations, (std::vector<Activation>{Activation::kRelu, Activation::kNone}));
}

TEST(MlpForward, IdentityLayerPassesInputThrough) {
  Mlp<float> m(MlpSpec{{3, 3}, {Activation::kNone}});
  m.mutable_layers()[0].weight = Matrix<float>::Identity(3, 3);
  Matrix<float> x(2, 3);
  x << 1, -2, 3, 0.5f, 0, -7;
  EXPECT_EQ(mlp_infer(m, x), x);
}

TEST(MlpForward, ReluClampsNegativeInput) {
  Mlp<float> m(MlpSpec{{1, 1}, {Activation::kRelu}});
  m.mutable_layers()[0].weight(0, 0) = 1.0f;
  Matrix<float> x(1, 1);
  x << -1.0f;
  EXPECT_EQ(mlp_infer(m, x)(0, 0), 0.0f);
}

TEST(MlpForward, TwoLayerHandComputed) {
  Mlp<double> m(MlpSpec::two_layer(2, 3, 1));
  auto& L = m.mutable_layers();
  L[0].weight.resize(3, 2);
  L[0].weight << 1, -1, 0.5, 2, -1, 0;
  L[0].bias.resize(3);
  L[0].bias << 0.1, -0.2, 0.3;
  L[1].weight.resize(1, 3);
  L[1].weight << 1, 2, -1;
  L[1].bias.resize(1);
  L[1].bias << 0.5;
  Matrix<double> x(3, 2);
  x << 1, 2, -1, 0.5, 0, -3;
  const auto y = mlp_forward(m, x).output;
  ASSERT_EQ(y.rows(), 3);
  ASSERT_EQ(y.cols(), 1);
  EXPECT_NEAR(y(0, 0), 9.1, 1e-12);
  EXPECT_NEAR(y(1, 0), -0.2, 1e-12);
  EXPECT_NEAR(y(2, 0), 3.3, 1e-12);
}

TEST(MlpForward, WidthMismatchThrows) {
  Mlp<float> m(MlpSpec::two_layer(3, 4, 2));
  EXPECT_THROW(mlp_forward(m, Matrix<float>(Matrix<float>::Zero(2, 5))), UsageError);
}

TEST(MlpForward, Deterministic) {
  const auto m = random_mlp<float>(MlpSpec::two_layer(8, 16, 4), 5);
  std::mt19937_64 rng(1);
  const auto x = random_matrix<float>(10, 8, rng);
  EXPECT_EQ(mlp_infer(m, x), mlp_infer(m, x));
  EXPECT_EQ(mlp_infer(m, x), mlp_forward(m, x).output);
}

TEST(MlpBackward, ZeroUpstreamGivesZeroGradients) {
  const auto m = random_mlp<double>(MlpSpec::two_layer(4, 5, 3), 2);
  std::mt19937_64 rng(2);
  const auto fwd = mlp_forward(m, random_matrix<double>(6, 4, rng));
  const auto b = mlp_backward(m, fwd.cache, Matrix<double>(Matrix<double>::Zero(6, 3)));
  for (const auto& w : b.grads.weight) EXPECT_EQ(w.norm(), 0.0);
  for (const auto& v : b.grads.bias) EXPECT_EQ(v.norm(), 0.0);
  EXPECT_EQ(b.input_grad.norm(), 0.0);
}

TEST(MlpBackward, LinearLayerClosedForm) {
  const auto m = random_mlp<double>(MlpSpec{{4, 3}, {Activation::kNone}}, 3);
  std::mt19937_64 rng(3);
  const auto x = random_matrix<double>(5, 4, rng);
  const auto g = random_matrix<double>(5, 3, rng);
  const auto b = mlp_backward(m, mlp_forward(m, x).cache, g);
  EXPECT_LT((b.grads.weight[0] - g.transpose() * x).norm(), 1e-12);
  EXPECT_LT((b.grads.bias[0] - g.colwise().sum().transpose()).norm(), 1e-12);
  EXPECT_LT((b.input_grad - g * m.layers()[0].weight).norm(), 1e-12);
}

TEST(MlpBackward, RejectsStaleOrForeignCache) {
  auto m = random_mlp<double>(MlpSpec::two_layer(3, 4, 2), 4);
  std::mt19937_64 rng(4);
  const auto fwd = mlp_forward(m, random_matrix<double>(2, 3, rng));
  const Matrix<double> g = Matrix<double>::Ones(2, 2);

  const Mlp<double> copy = m;
  EXPECT_THROW(mlp_backward(copy, fwd.cache, g), UsageError);
  EXPECT_THROW(mlp_backward(m, fwd.cache, Matrix<double>(Matrix<double>::Ones(3, 2))), UsageError);
  m.mutable_layers()[0].weight(0, 0) += 1.0;
  EXPECT_THROW(mlp_backward(m, fwd.cache, g), UsageError);
}

TEST(MlpBackward, MatchesFiniteDifferencesDouble) {
  std::size_t checked = 0, skipped = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = check_random_net<double>(seed, 1e-5, 1e-8);
    EXPECT_LT(r.max_rel_error, 1e-5) << "seed " << seed;
    checked += r.n_checked;
    skipped += r.n_skipped;
  }
  EXPECT_GT(checked, 19 * skipped);
}

// In 32-bit the objective itself carries ~1e-7 rounding, so the error is
// taken relative to max(|a|, |n|, 1), i.e. allclose with atol = rtol.
TEST(MlpBackward, MatchesFiniteDifferencesFloat) {
  std::size_t checked = 0, skipped = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = check_random_net<float>(seed, 1e-3f, 1.0);
    EXPECT_LT(r.max_rel_error, 1e-2) << "seed " << seed;
    checked += r.n_checked;
    skipped += r.n_skipped;
  }
  EXPECT_GT(checked, 4 * skipped);
}

TEST(AdamW, ZeroGradientZeroDecayLeavesParams) {
  std::vector<double> p{0.5, -1.25}, g{0.0, 0.0};
  AdamW<double> opt({.lr = 0.1, .weight_decay = 0.0});
  std::vector<ParamSlot<double>> slots{{p, g}};
  for (int i = 0; i < 3; ++i) opt.step(slots);
  EXPECT_EQ(p, (std::vector<double>{0.5, -1.25}));
}

TEST(AdamW, OneStepScalarHandComputed) {
  // m = 0.1, v = 0.001, both bias-corrected to 1:
  // p = 0.5 * (1 - 0.1 * 0.01) - 0.1 * 1 / (1 + 1e-8)
  std::vector<double> p{0.5}, g{1.0};
  AdamW<double> opt({.lr = 0.1, .weight_decay = 0.01});
  std::vector<ParamSlot<double>> slots{{p, g}};
  opt.step(slots);
  EXPECT_NEAR(p[0], 0.39950000099999999, 1e-15);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(AdamW, WeightDecayOnly) {
  std::vector<double> p{2.0}, g{0.0};
  AdamW<double> opt({.lr = 1.0, .weight_decay = 0.1});
  std::vector<ParamSlot<double>> slots{{p, g}};
  opt.step(slots);
  EXPECT_NEAR(p[0], 1.8, 1e-15);
}

TEST(AdamW, ZeroLearningRateIsIdentity) {
  auto m = random_mlp<float>(MlpSpec::two_layer(3, 4, 2), 9);
  const auto before = m.layers();
  std::mt19937_64 rng(9);
  const auto fwd = mlp_forward(m, random_matrix<float>(4, 3, rng));
  const auto b = mlp_backward(m, fwd.cache, Matrix<float>(Matrix<float>::Ones(4, 2)));
  std::vector<ParamSlot<float>> slots;
  collect_slots(m, b.grads, slots);
  AdamW<float> opt({.lr = 0.0});
  opt.step(slots);
  for (std::size_t l = 0; l < before.size(); ++l) {
    EXPECT_EQ(m.layers()[l].weight, before[l].weight);
    EXPECT_EQ(m.layers()[l].bias, before[l].bias);
  }
}

TEST(StepLr, Schedule) {
  const StepLrSchedule s;
  EXPECT_EQ(s.lr_at(0), 3e-5);
  EXPECT_DOUBLE_EQ(s.lr_at(1), 3e-5 * 0.87);
  EXPECT_DOUBLE_EQ(s.lr_at(3), 3e-5 * 0.87 * 0.87 * 0.87);
  const StepLrSchedule flat{1e-3, 1.0};
  EXPECT_EQ(flat.lr_at(7), 1e-3);
  EXPECT_THROW(s.lr_at(-1), UsageError);
  EXPECT_THROW((StepLrSchedule{1e-3, 1.5}.lr_at(1)), UsageError);
}

TEST(Checkpoint, RoundTripsMlp) {
  const auto m = random_mlp<float>(MlpSpec::two_layer(5, 7, 3), 12);
  Checkpoint ck;
  ck.metadata_json = R"({"k":1})";
  append_mlp(ck, "head", m);
  std::stringstream buf;
  write_checkpoint(buf, ck);
  EXPECT_EQ(buf.str().substr(0, 4), "G3NN");

  const auto back = read_checkpoint(buf);
  EXPECT_EQ(back.metadata_json, ck.metadata_json);
  Mlp<float> m2(MlpSpec::two_layer(5, 7, 3));
  read_mlp(back, "head", m2);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(m2.layers()[l].weight, m.layers()[l].weight);
    EXPECT_EQ(m2.layers()[l].bias, m.layers()[l].bias);
  }
  Mlp<float> wrong(MlpSpec::two_layer(5, 8, 3));
  EXPECT_THROW(read_mlp(back, "head", wrong), FormatError);
  EXPECT_THROW(back.get("missing"), FormatError);
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
  std::stringstream bad("XXXX0000");
  EXPECT_THROW(read_checkpoint(bad), FormatError);

  Checkpoint ck;
  ck.add(Tensor{"t", {2}, {1.0f, 2.0f}});
  std::stringstream buf;
  write_checkpoint(buf, ck);
  const std::string bytes = buf.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_checkpoint(cut), FormatError);
}

TEST(Mlp, CastRoundTripPreservesFloatParameters) {
  const auto m = random_mlp<float>(MlpSpec::two_layer(3, 4, 2), 13);
  const auto back = m.cast<double>().cast<float>();
  EXPECT_EQ(back.layers()[0].weight, m.layers()[0].weight);
  EXPECT_EQ(m.parameter_count(), std::size_t(3 * 4 + 4 + 4 * 2 + 2));
}
