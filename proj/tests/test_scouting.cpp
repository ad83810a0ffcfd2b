#include <gtest/gtest.h>

#include <set>

#include "gtl/scouting.hpp"
#include "test_support.hpp"

namespace gtl {
namespace {

using testing::make_spec;

// Well-separated Gaussian blobs, one per category.
TaskDataset blobs(std::size_t categories, std::size_t per_category, std::uint64_t seed) {
  rng gen(seed);
  TaskDataset d;
  d.features = Matrix(static_cast<Eigen::Index>(categories * per_category), 4);
  for (std::size_t i = 0; i < categories * per_category; ++i) {
    const std::size_t c = i % categories;
    for (int j = 0; j < 4; ++j)
      d.features(i, j) = (j == static_cast<int>(c % 4) ? 3.0 : 0.0) + (c >= 4 ? -2.0 : 0.0) + 0.3 * gen.uniform(-1, 1);
    d.labels.push_back(c);
  }
  for (std::size_t c = 0; c < categories; ++c) d.category_names.push_back(std::to_string(c));
  return d;
}

TEST(CousinSpecs, DeterministicSortedAndDistinct) {
  const auto a = make_cousin_specs(10, 3, 8, 5);
  EXPECT_EQ(a, make_cousin_specs(10, 3, 8, 5));
  EXPECT_NE(a, make_cousin_specs(10, 3, 8, 6));
  std::set<std::uint64_t> seeds;
  for (const auto& s : a) {
    ASSERT_EQ(s.categories.size(), 3u);
    EXPECT_TRUE(std::is_sorted(s.categories.begin(), s.categories.end()));
    EXPECT_EQ(std::set<std::size_t>(s.categories.begin(), s.categories.end()).size(), 3u);
    for (auto c : s.categories) EXPECT_LT(c, 10u);
    seeds.insert(s.seed);
  }
  EXPECT_EQ(seeds.size(), 8u);
  EXPECT_THROW(make_cousin_specs(3, 3, 2, 1), argument_error);
  EXPECT_THROW(make_cousin_specs(3, 1, 2, 1), argument_error);
}

TEST(CousinSpecs, SmallPoolsOverlap) {
  const std::set<std::vector<std::size_t>> allowed{{0, 1}, {0, 2}, {1, 2}};
  for (const auto& s : make_cousin_specs(3, 2, 20, 11)) EXPECT_TRUE(allowed.count(s.categories));
  // k = total - 1 forces every pair of scouts to share categories.
  const auto specs = make_cousin_specs(6, 5, 10, 2);
  for (std::size_t i = 0; i < specs.size(); ++i)
    for (std::size_t j = i + 1; j < specs.size(); ++j) {
      std::vector<std::size_t> both;
      std::set_intersection(specs[i].categories.begin(), specs[i].categories.end(), specs[j].categories.begin(),
                            specs[j].categories.end(), std::back_inserter(both));
      EXPECT_GE(both.size(), 4u);
    }
}

TEST(TrainScout, ZeroLearningRateKeepsHiddenLayers) {
  const auto spec = make_spec({4, 6, 5}, Activation::relu, Head::softmax_ce, 3);
  const auto base = init_params(spec);
  ScoutSpec s;
  s.categories = {1, 3};
  s.lr = 0.0;
  s.max_epochs = 1;
  s.seed = 8;
  const auto out = train_scout(base, spec, s, blobs(5, 10, 1));
  EXPECT_EQ(out.params.layers[0], base.layers[0]);
  EXPECT_EQ(out.params.layers[1].fan_out(), 2u);
  EXPECT_EQ(out.epochs_used, 1u);
}

TEST(TrainScout, StopsEarlyOnSeparableTask) {
  const auto spec = make_spec({4, 8, 5}, Activation::tanh, Head::softmax_ce, 3);
  ScoutSpec s;
  s.categories = {0, 2};
  s.lr = 0.5;
  s.max_epochs = 500;
  s.seed = 1;
  const auto out = train_scout(init_params(spec), spec, s, blobs(5, 20, 2));
  EXPECT_EQ(out.accuracy, 1.0);
  EXPECT_LT(out.epochs_used, 500u);
  s.categories = {0, 7};
  EXPECT_THROW(train_scout(init_params(spec), spec, s, blobs(5, 20, 2)), data_error);
}

TEST(TrainFamily, ThreadCountDoesNotChangeResults) {
  const auto spec = make_spec({4, 6, 5}, Activation::relu, Head::softmax_ce, 3);
  const auto data = blobs(5, 12, 3);
  ScoutSpec proto;
  proto.lr = 0.2;
  proto.momentum = 0.5;
  proto.max_epochs = 30;
  proto.batch_size = 4;
  const auto specs = make_cousin_specs(5, 3, 6, 21, proto);
  const auto serial = train_family(init_params(spec), spec, specs, &data, 1);
  const auto parallel = train_family(init_params(spec), spec, specs, &data, 4);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    EXPECT_EQ(serial.scouts[i].params, parallel.scouts[i].params);
    EXPECT_EQ(serial.scouts[i].epochs_used, parallel.scouts[i].epochs_used);
  }
  for (auto stat : {StatKind::squared, StatKind::absolute}) {
    const auto g1 = build_guidance(serial, stat, NormKind::max);
    EXPECT_EQ(g1.values, build_guidance(parallel, stat, NormKind::max).values);
    EXPECT_EQ(g1.derived_layers, 1u);
    EXPECT_TRUE((g1.values.layers[1].weights.array() == 1.0).all());
    EXPECT_EQ(g1.scout_tasks.size(), 6u);
  }
}

TEST(TrainFamily, BitScoutsShareTheWholeNetwork) {
  const auto spec = make_spec({5, 8, 3}, Activation::tanh, Head::sigmoid_bce, 3);
  ScoutSpec proto;
  proto.lr = 1.0;
  proto.max_epochs = 50;
  const auto fam = train_family(init_params(spec), spec, make_bit_scout_specs(8, 3, 4, proto), nullptr, 2);
  EXPECT_FALSE(fam.head_excluded);
  const auto g = build_guidance(fam, StatKind::squared, NormKind::max);
  EXPECT_EQ(g.derived_layers, 2u);
  EXPECT_DOUBLE_EQ(guidance_stats(g).max, 1.0);
}

ScoutFamily hand_family(const ParamSet& base, const std::vector<ParamSet>& scouts) {
  ScoutFamily f{base, make_spec({2, 2, 2}, Activation::tanh, Head::sigmoid_bce), {}, false};
  for (const auto& p : scouts) f.scouts.push_back(ScoutOutcome{ScoutSpec{{}, 1}, p, 1.0, 1});
  return f;
}

TEST(BuildGuidance, SingleMovedParameter) {
  const auto spec = make_spec({2, 2, 2}, Activation::tanh, Head::sigmoid_bce, 4);
  const auto base = init_params(spec);
  auto moved = base;
  moved.layers[1].weights(1, 0) += 0.5;
  const auto g = build_guidance(hand_family(base, {base, moved}), StatKind::squared, NormKind::max);
  const auto v = flatten(g.values);
  EXPECT_EQ(std::count(v.begin(), v.end(), 1.0), 1);
  EXPECT_EQ(std::count(v.begin(), v.end(), 0.0), static_cast<long>(v.size()) - 1);
  EXPECT_EQ(g.values.layers[1].weights(1, 0), 1.0);
}

TEST(BuildGuidance, MotionlessScoutsAreDegenerate) {
  const auto spec = make_spec({2, 2, 2}, Activation::tanh, Head::sigmoid_bce, 4);
  const auto base = init_params(spec);
  for (auto norm : {NormKind::max, NormKind::mean, NormKind::forced_zero})
    EXPECT_THROW(build_guidance(hand_family(base, {base, base}), StatKind::absolute, norm), degenerate_scouting_error);
}

TEST(Manifest, DescribesEveryScout) {
  const auto spec = make_spec({2, 2, 2}, Activation::tanh, Head::sigmoid_bce, 4);
  const auto base = init_params(spec);
  auto moved = base;
  moved.layers[0].biases[0] = 1.0;
  const auto m = family_manifest(hand_family(base, {moved, base}), {"s0.ckpt", "s1.ckpt"}, "base.ckpt");
  ASSERT_EQ(m.at("scouts").size(), 2u);
  EXPECT_EQ(m.at("scouts")[0].at("checkpoint"), "s0.ckpt");
  EXPECT_EQ(m.at("scouts")[1].at("digest"), content_digest(base));
  EXPECT_EQ(m.at("base_digest"), content_digest(base));
  EXPECT_EQ(scout_spec_from_json(m.at("scouts")[0].at("spec")), (ScoutSpec{{}, 1}));
}

}  // namespace
}  // namespace gtl
