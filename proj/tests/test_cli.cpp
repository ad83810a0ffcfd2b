#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>

#include "gtl/gtl.hpp"
#include "test_support.hpp"

using namespace gtl;
namespace fs = std::filesystem;

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string("\"") + GTL_CLI + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

fs::path small_config(const fs::path& dir) {
  auto c = load_config(gtl::testing::data_dir().parent_path() / "configs" / "breakthrough.json");
  c.seeds = {1};
  c.scouting.n_scouts = 3;
  c.scouting.max_epochs = 20;
  c.training.epochs = 60;
  c.output_dir = (dir / "out").string();
  write_file(dir / "config.json", to_json(c).dump(2));
  return dir / "config.json";
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("--no-such-flag"), 2);
  EXPECT_EQ(cli("report"), 2);  // --metrics is required
  EXPECT_EQ(cli("--threads 0 experiment"), 2);
}

TEST(Cli, ConfigErrorsExitTwo) {
  const auto dir = gtl::testing::scratch_dir("cli_config");
  EXPECT_EQ(cli("experiment --config " + q(dir / "absent.json")), 2);
  write_file(dir / "bad.json", R"({"experiment": "breakthrough", "seeds": [1]})");
  EXPECT_EQ(cli("experiment --config " + q(dir / "bad.json")), 2);
  EXPECT_EQ(cli("experiment"), 2);  // no config at all
}

TEST(Cli, DataErrorsExitThree) {
  const auto dir = gtl::testing::scratch_dir("cli_data");
  write_file(dir / "broken.guid", "GTLGUID1 but not really");
  EXPECT_EQ(cli("inspect " + q(dir / "broken.guid")), 3);
  write_file(dir / "metrics.csv", "");
  EXPECT_EQ(cli("report --metrics " + q(dir / "metrics.csv") + " --out " + q(dir / "r")), 3);
  EXPECT_FALSE(fs::exists(dir / "r" / "summary.txt"));
}

TEST(Cli, StagedPipelineMatchesExperiment) {
  const auto dir = gtl::testing::scratch_dir("cli_stages");
  const auto cfg = q(small_config(dir));
  const auto out = dir / "stages";
  const auto common = "--quiet --config " + cfg + " --out " + q(out) + " ";
  ASSERT_EQ(cli(common + "pretrain"), 0);
  ASSERT_TRUE(fs::exists(out / "base.ckpt"));
  ASSERT_EQ(cli(common + "scout"), 0);
  ASSERT_TRUE(fs::exists(out / "family.json"));
  ASSERT_EQ(cli(common + "guide --family " + q(out / "family.json")), 0);
  ASSERT_TRUE(fs::exists(out / "guidance.guid"));
  ASSERT_EQ(cli(common + "train --guidance " + q(out / "guidance.guid")), 0);
  ASSERT_TRUE(fs::exists(out / "guided.ckpt"));
  EXPECT_EQ(cli("--quiet --out " + q(dir / "hist") + " inspect " + q(out / "guidance.guid")), 0);

  ASSERT_EQ(cli("--quiet --config " + cfg + " experiment"), 0);
  const auto whole = dir / "out";
  // the staged file also records its manifest path, so compare contents
  const auto staged = read_guidance(out / "guidance.guid"), direct = read_guidance(whole / "seed-1" / "guidance.guid");
  EXPECT_EQ(staged.guidance.values, direct.guidance.values);
  EXPECT_EQ(staged.guidance.norm_kind, direct.guidance.norm_kind);
  EXPECT_FALSE(staged.manifest.empty());
  EXPECT_EQ(read_file(out / "guided.ckpt"), read_file(whole / "seed-1" / "guided.ckpt"));
  EXPECT_EQ(cli("--quiet report --metrics " + q(whole / "metrics.csv") + " --out " + q(dir / "report")), 0);
  EXPECT_TRUE(fs::exists(dir / "report" / "breakthrough.svg"));
}

TEST(Cli, GuideRejectsTamperedScout) {
  const auto dir = gtl::testing::scratch_dir("cli_tamper");
  const auto cfg = q(small_config(dir));
  const auto out = dir / "stages";
  const auto common = "--quiet --config " + cfg + " --out " + q(out) + " ";
  ASSERT_EQ(cli(common + "pretrain"), 0);
  ASSERT_EQ(cli(common + "scout"), 0);
  auto ck = read_checkpoint(out / "scouts" / "scout-000.ckpt");
  ck.params.layers[0].weights(0, 0) += 1.0;
  write_checkpoint(out / "scouts" / "scout-000.ckpt", ck.spec, ck.params);
  EXPECT_EQ(cli(common + "guide --family " + q(out / "family.json")), 3);
}
