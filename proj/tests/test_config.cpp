#include <gtest/gtest.h>

#include "gtl/gtl.hpp"
#include "test_support.hpp"

using namespace gtl;

namespace {

std::filesystem::path configs_dir() { return gtl::testing::data_dir().parent_path() / "configs"; }

json minimal_breakthrough() {
  return json{{"experiment", "breakthrough"}, {"seeds", {1, 2}}, {"training", {{"lr", 0.3}}}};
}

// Messages of a config_error thrown by parsing `doc`.
std::string issues_of(const json& doc) {
  try {
    parse_config(doc, configs_dir());
  } catch (const config_error& e) {
    std::string out;
    for (const auto& i : e.issues()) out += i.path + ": " + i.message + "\n";
    return out;
  }
  return "";
}

}  // namespace

TEST(Config, ShippedConfigsLoad) {
  for (auto name : {"one_shot", "breakthrough", "accumulation"}) {
    const auto c = load_config(configs_dir() / (std::string(name) + ".json"));
    EXPECT_EQ(to_string(c.experiment), name);
    EXPECT_GE(c.seeds.size(), 5u);
    EXPECT_EQ(c.reuse_base, expected_reuse_base(c.experiment));
  }
}

TEST(Config, MinimalDocumentGetsDefaults) {
  const auto c = parse_config(minimal_breakthrough(), configs_dir());
  EXPECT_EQ(c.name, "breakthrough");
  EXPECT_FALSE(c.reuse_base);
  EXPECT_EQ(c.training.lr, 0.3);
  EXPECT_EQ(c.guidance.stat, StatKind::squared);
  EXPECT_EQ(c.breakthrough.patience, 20u);
}

TEST(Config, MissingLearningRateNamesField) {
  auto doc = minimal_breakthrough();
  doc["training"].erase("lr");
  EXPECT_NE(issues_of(doc).find("training.lr"), std::string::npos);
}

TEST(Config, MissingSeedsAndExperiment) {
  const auto msg = issues_of(json{{"training", {{"lr", 0.1}}}});
  EXPECT_NE(msg.find("experiment"), std::string::npos);
  EXPECT_NE(msg.find("seeds"), std::string::npos);
}

TEST(Config, NegativeScoutCount) {
  auto doc = minimal_breakthrough();
  doc["scouting"] = {{"n_scouts", -3}};
  const auto msg = issues_of(doc);
  EXPECT_NE(msg.find("scouting.n_scouts"), std::string::npos) << msg;
  EXPECT_NE(msg.find("-3"), std::string::npos) << msg;
}

TEST(Config, UnknownFieldRejected) {
  auto doc = minimal_breakthrough();
  doc["training"]["learning_rate"] = 0.1;
  EXPECT_NE(issues_of(doc).find("training.learning_rate"), std::string::npos);
}

TEST(Config, WrongTypeAndBadEnum) {
  auto doc = minimal_breakthrough();
  doc["training"]["epochs"] = "many";
  doc["guidance"] = {{"norm", "median"}};
  const auto msg = issues_of(doc);
  EXPECT_NE(msg.find("training.epochs"), std::string::npos) << msg;
  EXPECT_NE(msg.find("guidance.norm"), std::string::npos) << msg;
}

TEST(Config, AllIssuesReportedTogether) {
  auto doc = minimal_breakthrough();
  doc["training"]["lr"] = -1.0;
  doc["threads"] = 0;
  doc["bogus"] = true;
  try {
    parse_config(doc, configs_dir());
    FAIL();
  } catch (const config_error& e) {
    EXPECT_GE(e.issues().size(), 3u);
    EXPECT_EQ(e.status(), exit_status::config);
  }
}

TEST(Config, ReuseBaseMismatch) {
  auto doc = minimal_breakthrough();
  doc["reuse_base"] = true;
  EXPECT_NE(issues_of(doc).find("reuse_base"), std::string::npos);
}

TEST(Config, OverlappingDigitsRejected) {
  auto doc = to_json(load_config(configs_dir() / "one_shot.json"));
  doc["data"]["heldout_categories"] = {4, 5, 6, 7, 8};
  EXPECT_NE(issues_of(doc).find("heldout_categories"), std::string::npos);
}

TEST(Config, MissingMnistFile) {
  auto doc = to_json(load_config(configs_dir() / "one_shot.json"));
  doc["data"]["mnist_images"] = "/nonexistent/images";
  EXPECT_NE(issues_of(doc).find("data.mnist_images"), std::string::npos);
}

TEST(Config, ResolvedRoundTrip) {
  for (auto name : {"one_shot", "breakthrough", "accumulation"}) {
    const auto c = load_config(configs_dir() / (std::string(name) + ".json"));
    EXPECT_EQ(parse_config(to_json(c), "/"), c) << name;
  }
}

TEST(Config, RelativePathsResolveAgainstConfigDir) {
  const auto c = load_config(configs_dir() / "one_shot.json");
  EXPECT_TRUE(std::filesystem::path(c.data.mnist_images).is_absolute());
  EXPECT_TRUE(std::filesystem::exists(c.data.mnist_images));
}

TEST(Config, InvalidJsonIsConfigError) {
  const auto dir = gtl::testing::scratch_dir("config_json");
  write_file(dir / "bad.json", "{\"experiment\": ");
  EXPECT_THROW(load_config(dir / "bad.json"), config_error);
  EXPECT_THROW(load_config(dir / "absent.json"), config_error);
}
