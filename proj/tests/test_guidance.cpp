#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "gtl/guidance.hpp"
#include "gtl/training.hpp"
#include "test_support.hpp"

namespace gtl {
namespace {

using testing::make_spec;

// One layer holding weights [v0 .. v(n-2)] (1 x n-1) and bias v(n-1).
template <class Tag>
LayerStack<Tag> stack_of(const std::vector<double>& v) {
  LayerStack<Tag> s;
  Layer<Tag> l{Matrix(1, static_cast<Eigen::Index>(v.size() - 1)), RowVector(1)};
  for (std::size_t i = 0; i + 1 < v.size(); ++i) l.weights(0, static_cast<Eigen::Index>(i)) = v[i];
  l.biases[0] = v.back();
  s.layers.push_back(l);
  return s;
}

DeviationStat stat_of(const std::vector<double>& v) { return {stack_of<deviation_tag>(v), StatKind::squared, 1}; }

GuidanceMatrix guidance_of(const std::vector<double>& v) {
  GuidanceMatrix g;
  g.values = stack_of<guidance_tag>(v);
  g.derived_layers = 1;
  return g;
}

TEST(DeviationStat, IdenticalScoutGivesZero) {
  const auto base = init_params(make_spec({3, 2}, Activation::tanh, Head::softmax_ce));
  const std::vector<ParamSet> scouts{base};
  const auto m = deviation_stat(base, scouts, StatKind::squared);
  for (double v : flatten(m.values)) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(m.n_scouts, 1u);
}

TEST(DeviationStat, HandArithmetic) {
  const auto base = stack_of<param_tag>({0.0, 0.0});
  const std::vector<ParamSet> pm{stack_of<param_tag>({1.0, 2.0}), stack_of<param_tag>({-1.0, 0.0})};
  EXPECT_EQ(flatten(deviation_stat(base, pm, StatKind::squared).values), (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(flatten(deviation_stat(base, pm, StatKind::absolute).values), (std::vector<double>{1.0, 1.0}));
}

TEST(DeviationStat, Errors) {
  const auto base = stack_of<param_tag>({0.0, 0.0});
  EXPECT_THROW(deviation_stat(base, std::vector<ParamSet>{}, StatKind::squared), argument_error);
  const std::vector<ParamSet> bad{stack_of<param_tag>({0.0, 0.0, 0.0})};
  EXPECT_THROW(deviation_stat(base, bad, StatKind::squared), shape_error);
}

TEST(DeviationStat, ScoutOrderDoesNotMatter) {
  const auto spec = make_spec({4, 3, 2}, Activation::relu, Head::softmax_ce);
  const auto base = testing::random_params(spec, 1);
  std::vector<ParamSet> scouts;
  for (std::uint64_t s = 2; s < 7; ++s) scouts.push_back(testing::random_params(spec, s));
  for (auto kind : {StatKind::squared, StatKind::absolute}) {
    const auto ref = flatten(deviation_stat(base, scouts, kind).values);
    auto perm = scouts;
    std::reverse(perm.begin(), perm.end());
    std::rotate(perm.begin(), perm.begin() + 2, perm.end());
    const auto got = flatten(deviation_stat(base, perm, kind).values);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-15 * std::max(1.0, ref[i]));
  }
}

TEST(Normalize, HandArithmetic) {
  const auto fz = flatten(normalize(stat_of({1, 3, 5}), NormKind::forced_zero).values);
  EXPECT_EQ(fz, (std::vector<double>{0.0, 0.5, 1.0}));
  const auto mx = flatten(normalize(stat_of({1, 3, 5}), NormKind::max).values);
  EXPECT_DOUBLE_EQ(mx[0], 0.2);
  EXPECT_DOUBLE_EQ(mx[1], 0.6);
  EXPECT_DOUBLE_EQ(mx[2], 1.0);
  for (double v : flatten(normalize(stat_of({2.5, 2.5, 2.5, 2.5}), NormKind::mean).values)) EXPECT_EQ(v, 1.0);
}

TEST(Normalize, DegenerateStatisticsAreErrors) {
  EXPECT_THROW(normalize(stat_of({0, 0, 0}), NormKind::max), degenerate_scouting_error);
  EXPECT_THROW(normalize(stat_of({0, 0, 0}), NormKind::mean), degenerate_scouting_error);
  EXPECT_THROW(normalize(stat_of({2, 2, 2}), NormKind::forced_zero), degenerate_scouting_error);
}

TEST(Normalize, PerGroupScalesWeightsAndBiasesSeparately) {
  const auto g = normalize(stat_of({1, 4, 2}), NormKind::max, NormScope::per_group);
  EXPECT_EQ(flatten(g.values), (std::vector<double>{0.25, 1.0, 1.0}));
  const auto global = normalize(stat_of({1, 4, 2}), NormKind::max, NormScope::global);
  EXPECT_EQ(flatten(global.values), (std::vector<double>{0.25, 1.0, 0.5}));
}

TEST(Normalize, ScaleCovarianceAndMonotonicity) {
  rng gen(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(12), b(12);
    for (auto& v : a) v = gen.uniform(0.0, 3.0);
    for (std::size_t i = 0; i < a.size(); ++i) b[i] = a[i] * 7.3;
    for (auto kind : {NormKind::max, NormKind::mean, NormKind::forced_zero}) {
      const auto ga = flatten(normalize(stat_of(a), kind).values);
      const auto gb = flatten(normalize(stat_of(b), kind).values);
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(ga[i], gb[i], 1e-12);
    }
    // M1 <= M2 elementwise with equal maxima => G1 <= G2 under max.
    std::vector<double> lower = a;
    const auto top = std::max_element(a.begin(), a.end()) - a.begin();
    for (std::size_t i = 0; i < lower.size(); ++i)
      if (static_cast<std::ptrdiff_t>(i) != top) lower[i] *= gen.uniform01();
    const auto g1 = flatten(normalize(stat_of(lower), NormKind::max).values);
    const auto g2 = flatten(normalize(stat_of(a), NormKind::max).values);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(g1[i], g2[i]);
  }
}

TEST(ApplyGuidance, HandArithmeticAndComposition) {
  auto grads = stack_of<grad_tag>({0.4, -2.0, 8.0});
  auto g = guidance_of({0.25, 0.5, 0.0});
  const auto out = flatten(apply_guidance(grads, g));
  EXPECT_DOUBLE_EQ(out[0], 0.1);
  EXPECT_DOUBLE_EQ(out[1], -1.0);
  EXPECT_EQ(out[2], 0.0);

  const auto g2 = guidance_of({3.0, 0.1, 2.0});
  const auto twice = flatten(apply_guidance(apply_guidance(grads, g), g2));
  const auto composed = flatten(apply_guidance(grads, apply_guidance(g.values, g2.values)));
  for (std::size_t i = 0; i < twice.size(); ++i) EXPECT_NEAR(twice[i], composed[i], 1e-15);

  EXPECT_THROW(apply_guidance(stack_of<grad_tag>({1.0, 2.0}), g), shape_error);
}

TEST(ApplyGuidance, OnesAreIdentityZerosFreeze) {
  const auto spec = make_spec({3, 4, 2}, Activation::tanh, Head::softmax_ce);
  const auto p = testing::random_params(spec, 4);
  const auto lg = loss_and_grad(p, spec, testing::random_batch(spec, 7, 5));
  GuidanceMatrix ones{filled_like<guidance_tag>(p, 1.0)};
  GuidanceMatrix zeros{filled_like<guidance_tag>(p, 0.0)};
  EXPECT_EQ(apply_guidance(lg.grads, ones), lg.grads);
  const auto frozen = apply_guidance(lg.grads, zeros);
  EXPECT_EQ(sgd_step(p, frozen, 0.5), p);
}

TEST(Training, AllOnesGuidanceMatchesUnguidedBitForBit) {
  const auto spec = make_spec({3, 6, 2}, Activation::tanh, Head::softmax_ce, 3);
  const auto b = testing::random_batch(spec, 20, 9);
  GuidanceMatrix ones{filled_like<guidance_tag>(init_params(spec), 1.0)};
  for (double momentum : {0.0, 0.9}) {
    TrainOptions opt{0.3, momentum, 30, 7, 11};
    EXPECT_EQ(train(init_params(spec), spec, b, opt, &ones), train(init_params(spec), spec, b, opt));
  }
}

TEST(Training, ZeroGuidanceFreezesParametersUnderMomentum) {
  const auto spec = make_spec({3, 6, 2}, Activation::relu, Head::sigmoid_bce, 5);
  const auto b = testing::random_batch(spec, 16, 2);
  const auto start = init_params(spec);
  GuidanceMatrix g{filled_like<guidance_tag>(start, 1.0)};
  g.values.layers[0].weights.col(2).setZero();
  g.values.layers[1].biases[1] = 0.0;
  const auto end = train(start, spec, b, TrainOptions{0.5, 0.9, 40, 0, 1}, &g);
  EXPECT_TRUE((end.layers[0].weights.col(2).array() == start.layers[0].weights.col(2).array()).all());
  EXPECT_EQ(end.layers[1].biases[1], start.layers[1].biases[1]);
  EXPECT_NE(end.layers[0].weights(0, 0), start.layers[0].weights(0, 0));
}

TEST(Training, ZeroLearningRateLeavesParamsUntouched) {
  const auto spec = make_spec({3, 4, 2}, Activation::tanh, Head::softmax_ce, 8);
  const auto p = init_params(spec);
  EXPECT_EQ(train(p, spec, testing::random_batch(spec, 10, 1), TrainOptions{0.0, 0.0, 5, 3, 1}), p);
}

TEST(Training, SameSeedsGiveIdenticalLossTrajectories) {
  const auto spec = make_spec({3, 8, 3}, Activation::relu, Head::softmax_ce, 8);
  const auto b = testing::random_batch(spec, 40, 4);
  auto run = [&] {
    std::vector<double> losses;
    train(init_params(spec), spec, b, TrainOptions{0.2, 0.5, 15, 8, 77}, nullptr,
          [&](const EpochRecord& r, const ParamSet&) {
            losses.push_back(r.train_loss);
            return true;
          });
    return losses;
  };
  EXPECT_EQ(run(), run());
}

TEST(Histogram, BinningRules) {
  const auto h = guidance_histogram(guidance_of({0.0, 0.5, 1.0}), 2);
  ASSERT_EQ(h.size(), 2u);
  EXPECT_EQ(h[0].count, 1u);
  EXPECT_EQ(h[1].count, 2u);
  EXPECT_DOUBLE_EQ(h[1].left_edge, 0.5);

  const auto ones = guidance_histogram(guidance_of(std::vector<double>(9, 1.0)), 10);
  EXPECT_EQ(ones.back().count, 9u);
  EXPECT_THROW(guidance_histogram(guidance_of({0, 1}), 1), argument_error);
}

TEST(Histogram, CountsSumToParameterCount) {
  rng gen(12);
  std::vector<double> v(101);
  for (auto& x : v) x = gen.uniform01() * gen.uniform01();
  for (std::size_t bins : {2u, 3u, 7u, 64u}) {
    std::size_t total = 0;
    for (const auto& b : guidance_histogram(guidance_of(v), bins)) total += b.count;
    EXPECT_EQ(total, v.size());
  }
}

TEST(Sparsity, Fractions) {
  EXPECT_EQ(sparsity_fraction(guidance_of(std::vector<double>(5, 1.0)), 0.01), 0.0);
  EXPECT_DOUBLE_EQ(sparsity_fraction(guidance_of({0.0, 0.5, 1.0}), 0.0), 1.0 / 3.0);
  const auto fz = normalize(stat_of({0.3, 0.9, 4.0, 2.0}), NormKind::forced_zero);
  EXPECT_GE(sparsity_fraction(fz, 0.0), 1.0 / 4.0);
  EXPECT_THROW(sparsity_fraction(fz, -1.0), argument_error);
  EXPECT_DOUBLE_EQ(default_sparsity_eps(fz), 0.01);
}

TEST(GuidanceMatrix, WithOutputDimResizesHeadOnly) {
  GuidanceMatrix g{filled_like<guidance_tag>(init_params(make_spec({4, 3, 2}, Activation::tanh, Head::softmax_ce)), 0.3)};
  g.derived_layers = 1;
  g.head_value = 1.0;
  const auto h = g.with_output_dim(5);
  EXPECT_EQ(h.values.layers[0], g.values.layers[0]);
  EXPECT_EQ(h.values.layers[1].fan_out(), 5u);
  EXPECT_TRUE((h.values.layers[1].weights.array() == 1.0).all());
  g.derived_layers = 2;
  EXPECT_THROW(g.with_output_dim(5), shape_error);
}

}  // namespace
}  // namespace gtl
