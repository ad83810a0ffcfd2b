#include <gtest/gtest.h>

#include <vector>

#include "gtl/gtl.hpp"
#include "test_support.hpp"

using namespace gtl;

namespace {

RunConfig small_breakthrough(std::vector<std::uint64_t> seeds) {
  auto c = load_config(gtl::testing::data_dir().parent_path() / "configs" / "breakthrough.json");
  c.seeds = std::move(seeds);
  c.scouting.n_scouts = 4;
  c.scouting.max_epochs = 40;
  c.training.epochs = 150;
  c.output_dir = gtl::testing::scratch_dir("small_breakthrough").string();
  return c;
}

std::vector<MetricRow> rows_for(const RunMetrics& m, std::uint64_t seed) {
  std::vector<MetricRow> out;
  for (const auto& r : m.rows)
    if (r.seed == seed) out.push_back(r);
  return out;
}

}  // namespace

TEST(DetectBreakthrough, HandTraces) {
  const std::vector<double> rising{0.1, 0.2, 0.95, 0.96, 0.97};
  EXPECT_EQ(detect_breakthrough(rising, 0.9, 3), 2u);
  const std::vector<double> flat(10, 0.2);
  EXPECT_EQ(detect_breakthrough(flat, 0.9, 3), std::nullopt);
  const std::vector<double> relapse{0.95, 0.4, 0.95, 0.95};
  EXPECT_EQ(detect_breakthrough(relapse, 0.9, 2), 2u);
  EXPECT_EQ(detect_breakthrough(relapse, 0.9, 1), 0u);
  const std::vector<double> exact{0.9};
  EXPECT_EQ(detect_breakthrough(exact, 0.9, 1), 0u);
}

TEST(DetectBreakthrough, RejectsBadArguments) {
  const std::vector<double> empty, one{0.5};
  EXPECT_THROW(detect_breakthrough(empty, 0.9, 1), argument_error);
  EXPECT_THROW(detect_breakthrough(one, 0.0, 1), argument_error);
  EXPECT_THROW(detect_breakthrough(one, 1.5, 1), argument_error);
  EXPECT_THROW(detect_breakthrough(one, 0.9, 0), argument_error);
}

TEST(DetectBreakthrough, TooShortForPatience) {
  const std::vector<double> high{0.99, 0.99};
  EXPECT_EQ(detect_breakthrough(high, 0.9, 3), std::nullopt);
}

TEST(CensoredMedian, Cases) {
  using opt = std::optional<std::size_t>;
  EXPECT_EQ(censored_median({opt(4), opt(2), opt(9)}, 100), json(4.0));
  EXPECT_EQ(censored_median({opt(4), opt(2), std::nullopt, opt(8)}, 100), json(6.0));
  EXPECT_EQ(censored_median({opt(4), std::nullopt, std::nullopt}, 100), json(">= 100"));
  EXPECT_TRUE(censored_median({}, 100).is_null());
}

TEST(Median, EvenAndOdd) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW(median({}), argument_error);
}

TEST(Experiments, DisabledGuidanceGivesIdenticalConditions) {
  auto c = small_breakthrough({5});
  c.guidance.enabled = false;
  const auto m = run_breakthrough(c);
  ASSERT_EQ(m.runs.size(), 2u);
  std::vector<MetricRow> base, guided;
  for (auto r : m.rows) {
    auto& dst = r.condition == baseline_condition ? base : guided;
    r.condition.clear();
    r.run_id.clear();
    dst.push_back(r);
  }
  ASSERT_FALSE(base.empty());
  EXPECT_EQ(base, guided);
  for (const auto& a : m.artifacts) EXPECT_EQ(a.path.find("guidance"), std::string::npos);
}

TEST(Experiments, SeedOrderAndThreadsDoNotChangeRows) {
  auto a = small_breakthrough({1, 2, 3});
  auto b = small_breakthrough({3, 1, 2});
  b.threads = 3;
  const auto ma = run_breakthrough(a), mb = run_breakthrough(b);
  for (std::uint64_t s : {1, 2, 3}) EXPECT_EQ(metrics_csv(rows_for(ma, s)), metrics_csv(rows_for(mb, s)));
  EXPECT_EQ(ma.runs.size(), 6u);
}

TEST(Experiments, RunsAreOrderedBaselineFirst) {
  const auto m = run_breakthrough(small_breakthrough({7, 8}));
  ASSERT_EQ(m.runs.size(), 4u);
  EXPECT_EQ(m.runs[0].condition, baseline_condition);
  EXPECT_EQ(m.runs[1].condition, guided_condition);
  EXPECT_EQ(m.runs[0].seed, 7u);
  EXPECT_EQ(m.runs[2].seed, 8u);
}

TEST(Experiments, BreakthroughRowsAreConsistent) {
  const auto c = small_breakthrough({4});
  const auto m = run_breakthrough(c);
  for (const auto& run : m.runs) {
    std::vector<double> curve;
    for (const auto& r : m.rows)
      if (r.condition == run.condition) {
        EXPECT_EQ(r.block, 1u);
        EXPECT_EQ(r.epoch, curve.size() + 1);
        EXPECT_EQ(r.test_acc, r.train_acc);
        curve.push_back(r.train_acc);
      }
    EXPECT_EQ(curve.size(), run.epochs_run);
    const auto idx = detect_breakthrough(curve, c.breakthrough.threshold, c.breakthrough.patience);
    EXPECT_EQ(run.breakthrough_epoch, idx ? std::optional(*idx + 1) : std::nullopt);
  }
}

TEST(Experiments, ReuseBaseMismatchRejected) {
  auto c = small_breakthrough({1});
  c.reuse_base = true;
  EXPECT_THROW(run_breakthrough(c), config_error);
}

TEST(Experiments, WriteRunProducesDocumentedFiles) {
  const auto c = small_breakthrough({2});
  write_run(c, run_breakthrough(c));
  const std::filesystem::path dir = c.output_dir;
  for (auto f : {"resolved_config.json", "metrics.csv", "summary.json", "seed-2/base.ckpt", "seed-2/guidance.guid",
                 "seed-2/baseline.ckpt", "seed-2/guided.ckpt"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  const auto summary = json::parse(read_file(dir / "summary.json"));
  EXPECT_TRUE(summary["conditions"]["guided"].contains("breakthrough_epoch"));
  EXPECT_EQ(load_config(dir / "resolved_config.json"), c);
  EXPECT_EQ(read_metrics(dir / "metrics.csv").size(), run_breakthrough(c).rows.size());
}

TEST(Experiments, MetricsCsvHeader) {
  EXPECT_EQ(metrics_csv({}).substr(0, metrics_csv({}).find('\n')),
            "run_id,experiment,seed,condition,block,epoch,train_loss,train_acc,test_acc,changed_param_fraction");
}

TEST(Experiments, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 0.0, 1e-300, 0.8125})
    EXPECT_EQ(std::stod(format_double(v)), v);
}
