#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gtl/errors.hpp"
#include "gtl/guidance.hpp"
#include "gtl/io.hpp"
#include "gtl/nn.hpp"

namespace gtl {

enum class ExperimentKind { one_shot, breakthrough, accumulation };

inline std::string_view to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::one_shot: return "one_shot";
    case ExperimentKind::breakthrough: return "breakthrough";
    case ExperimentKind::accumulation: return "accumulation";
  }
  return "?";
}

inline std::optional<ExperimentKind> parse_experiment_kind(std::string_view s) {
  if (s == "one_shot") return ExperimentKind::one_shot;
  if (s == "breakthrough") return ExperimentKind::breakthrough;
  if (s == "accumulation") return ExperimentKind::accumulation;
  return std::nullopt;
}

// Scouts and the transferred network start from the same pre-trained base in
// the classification studies; the bit-mapping study starts its final network
// from a fresh random state.
inline bool expected_reuse_base(ExperimentKind k) { return k != ExperimentKind::breakthrough; }

struct NetworkConfig {
  std::vector<std::size_t> hidden_sizes{64};
  Activation activation = Activation::relu;
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct BitsConfig {
  std::size_t n_in = 8;
  std::size_t n_out = 2;
  std::size_t rows = 64;
  friend bool operator==(const BitsConfig&, const BitsConfig&) = default;
};

struct DataConfig {
  std::string mnist_images;
  std::string mnist_labels;
  std::string omniglot_root;  // empty: use held-out MNIST digits for episodes
  std::string alphabet;       // empty: drawn per seed
  std::size_t ways = 5;
  std::vector<std::size_t> pretrain_categories{0, 1, 2, 3, 4};
  std::vector<std::size_t> heldout_categories{5, 6, 7, 8, 9};
  std::optional<std::size_t> max_per_category;
  BitsConfig bits;
  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct TrainingConfig {
  double lr = 0.1;
  double momentum = 0.0;
  std::size_t epochs = 20;
  std::size_t batch_size = 0;
  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

struct ScoutingConfig {
  std::size_t n_scouts = 8;
  std::size_t k = 3;
  std::size_t n_pairs = 32;
  std::size_t max_epochs = 100;
  double stop_accuracy = 1.0;
  double lr = 0.1;
  double momentum = 0.0;
  std::size_t batch_size = 0;
  std::optional<std::size_t> max_per_category;
  friend bool operator==(const ScoutingConfig&, const ScoutingConfig&) = default;
};

struct GuidanceConfig {
  bool enabled = true;
  StatKind stat = StatKind::squared;
  NormKind norm = NormKind::max;
  NormScope scope = NormScope::global;
  double head_value = 1.0;
  friend bool operator==(const GuidanceConfig&, const GuidanceConfig&) = default;
};

struct BreakthroughConfig {
  double threshold = 0.9;
  std::size_t patience = 20;
  bool stop_after_breakthrough = true;
  friend bool operator==(const BreakthroughConfig&, const BreakthroughConfig&) = default;
};

struct RunConfig {
  std::string name;
  ExperimentKind experiment = ExperimentKind::one_shot;
  std::vector<std::uint64_t> seeds;
  std::size_t threads = 1;
  std::string output_dir;
  bool reuse_base = true;
  NetworkConfig network;
  DataConfig data;
  TrainingConfig pretrain{0.1, 0.9, 10, 32};
  ScoutingConfig scouting;
  GuidanceConfig guidance;
  TrainingConfig training;
  BreakthroughConfig breakthrough;
  std::size_t blocks = 4;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Full document with every default filled in; parse_config(to_json(c)) == c.
inline json to_json(const RunConfig& c) {
  auto opt = [](const std::optional<std::size_t>& v) { return v ? json(*v) : json(nullptr); };
  auto training = [](const TrainingConfig& t) {
    return json{{"lr", t.lr}, {"momentum", t.momentum}, {"epochs", t.epochs}, {"batch_size", t.batch_size}};
  };
  return json{
      {"name", c.name},
      {"experiment", to_string(c.experiment)},
      {"seeds", c.seeds},
      {"threads", c.threads},
      {"output_dir", c.output_dir},
      {"reuse_base", c.reuse_base},
      {"network", {{"hidden_sizes", c.network.hidden_sizes}, {"activation", to_string(c.network.activation)}}},
      {"data",
       {{"mnist_images", c.data.mnist_images},
        {"mnist_labels", c.data.mnist_labels},
        {"omniglot_root", c.data.omniglot_root},
        {"alphabet", c.data.alphabet},
        {"ways", c.data.ways},
        {"pretrain_categories", c.data.pretrain_categories},
        {"heldout_categories", c.data.heldout_categories},
        {"max_per_category", opt(c.data.max_per_category)},
        {"bits", {{"n_in", c.data.bits.n_in}, {"n_out", c.data.bits.n_out}, {"rows", c.data.bits.rows}}}}},
      {"pretrain", training(c.pretrain)},
      {"scouting",
       {{"n_scouts", c.scouting.n_scouts},
        {"k", c.scouting.k},
        {"n_pairs", c.scouting.n_pairs},
        {"max_epochs", c.scouting.max_epochs},
        {"stop_accuracy", c.scouting.stop_accuracy},
        {"lr", c.scouting.lr},
        {"momentum", c.scouting.momentum},
        {"batch_size", c.scouting.batch_size},
        {"max_per_category", opt(c.scouting.max_per_category)}}},
      {"guidance",
       {{"enabled", c.guidance.enabled},
        {"stat", to_string(c.guidance.stat)},
        {"norm", to_string(c.guidance.norm)},
        {"scope", to_string(c.guidance.scope)},
        {"head_value", c.guidance.head_value}}},
      {"training", training(c.training)},
      {"breakthrough",
       {{"threshold", c.breakthrough.threshold},
        {"patience", c.breakthrough.patience},
        {"stop_after_breakthrough", c.breakthrough.stop_after_breakthrough}}},
      {"accumulation", {{"blocks", c.blocks}}},
  };
}

namespace detail {

// Walks a config document, recording every problem with its dotted path
// instead of stopping at the first one.
class config_reader {
 public:
  std::vector<config_error::issue> issues;

  void fail(const std::string& path, const std::string& message) { issues.push_back({path, message}); }

  const json* section(const json& parent, const std::string& prefix, const std::string& key,
                      std::set<std::string> known) {
    const auto path = join(prefix, key);
    if (!parent.contains(key)) return nullptr;
    const json& j = parent.at(key);
    if (!j.is_object()) {
      fail(path, "expected an object, got " + j.dump());
      return nullptr;
    }
    check_keys(j, path, known);
    return &j;
  }

  void check_keys(const json& obj, const std::string& prefix, const std::set<std::string>& known) {
    for (const auto& [k, v] : obj.items())
      if (!known.count(k)) fail(join(prefix, k), "unknown field");
  }

  // Reads obj[key] into out when present; out keeps its default otherwise.
  template <class T>
  bool read(const json* obj, const std::string& prefix, const std::string& key, T& out, bool required = false) {
    const auto path = join(prefix, key);
    if (!obj || !obj->contains(key)) {
      if (required) fail(path, "is required");
      return false;
    }
    const json& v = obj->at(key);
    if (!type_ok<T>(v)) {
      fail(path, "expected " + type_name<T>() + ", got " + v.dump());
      return false;
    }
    try {
      out = v.get<T>();
    } catch (const json::exception&) {
      fail(path, "expected " + type_name<T>() + ", got " + v.dump());
      return false;
    }
    return true;
  }

  void read(const json* obj, const std::string& prefix, const std::string& key, std::optional<std::size_t>& out) {
    if (obj && obj->contains(key) && obj->at(key).is_null()) {
      out.reset();
      return;
    }
    std::size_t v = 0;
    if (read(obj, prefix, key, v)) out = v;
  }

  template <class E, class Parse>
  void read_enum(const json* obj, const std::string& prefix, const std::string& key, E& out, Parse parse,
                 const char* choices) {
    std::string s;
    if (!read(obj, prefix, key, s)) return;
    if (auto e = parse(s))
      out = *e;
    else
      fail(join(prefix, key), "unknown value \"" + s + "\" (expected " + choices + ")");
  }

  template <class T>
  void require(bool ok, const std::string& path, const T& value, const std::string& rule) {
    if (!ok) fail(path, json(value).dump() + " " + rule);
  }

  static std::string join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
  }

 private:
  template <class T>
  static bool type_ok(const json& v) {
    if constexpr (std::is_same_v<T, bool>) return v.is_boolean();
    else if constexpr (std::is_same_v<T, std::string>) return v.is_string();
    else if constexpr (std::is_floating_point_v<T>) return v.is_number();
    else if constexpr (std::is_integral_v<T>) return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    else if constexpr (std::is_same_v<T, std::vector<std::size_t>> || std::is_same_v<T, std::vector<std::uint64_t>>) {
      if (!v.is_array()) return false;
      for (const auto& e : v)
        if (!type_ok<std::size_t>(e)) return false;
      return true;
    } else
      return true;
  }

  template <class T>
  static std::string type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else if constexpr (std::is_integral_v<T>) return "a non-negative integer";
    else return "an array of non-negative integers";
  }
};

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  std::filesystem::path path(p);
  if (path.is_relative()) path = base / path;
  return path.lexically_normal().string();
}

}  // namespace detail

// Parses and validates a config document. Relative paths resolve against
// base_dir. Every problem is reported at once as a config_error.
inline RunConfig parse_config(const json& doc, const std::filesystem::path& base_dir = std::filesystem::current_path()) {
  detail::config_reader r;
  RunConfig c;
  if (!doc.is_object()) throw config_error("", "config document must be a JSON object");
  r.check_keys(doc, "",
               {"name", "experiment", "seeds", "threads", "output_dir", "reuse_base", "network", "data", "pretrain",
                "scouting", "guidance", "training", "breakthrough", "accumulation"});

  r.read_enum(&doc, "", "experiment", c.experiment, parse_experiment_kind, "one_shot, breakthrough, accumulation");
  if (!doc.contains("experiment")) r.fail("experiment", "is required");
  c.name = std::string(to_string(c.experiment));
  r.read(&doc, "", "name", c.name);
  r.require(!c.name.empty() && c.name.find_first_of("/\\") == std::string::npos && c.name != "." && c.name != "..",
            "name", c.name, "is not a usable directory name");
  r.read(&doc, "", "seeds", c.seeds, true);
  if (doc.contains("seeds")) r.require(!c.seeds.empty(), "seeds", c.seeds, "must list at least one seed");
  r.read(&doc, "", "threads", c.threads);
  r.require(c.threads >= 1, "threads", c.threads, "must be >= 1");
  r.read(&doc, "", "output_dir", c.output_dir);
  c.output_dir = c.output_dir.empty() ? (std::filesystem::current_path() / "out" / c.name).lexically_normal().string()
                                      : detail::resolve_path(c.output_dir, base_dir);
  c.reuse_base = expected_reuse_base(c.experiment);
  if (r.read(&doc, "", "reuse_base", c.reuse_base) && c.reuse_base != expected_reuse_base(c.experiment))
    r.fail("reuse_base", json(c.reuse_base).dump() + " is not supported for " + std::string(to_string(c.experiment)) +
                             " (must be " + json(expected_reuse_base(c.experiment)).dump() + ")");

  if (auto n = r.section(doc, "", "network", {"hidden_sizes", "activation"})) {
    r.read(n, "network", "hidden_sizes", c.network.hidden_sizes);
    r.read_enum(n, "network", "activation", c.network.activation, parse_activation, "relu, tanh");
  }
  for (std::size_t i = 0; i < c.network.hidden_sizes.size(); ++i)
    r.require(c.network.hidden_sizes[i] >= 1, "network.hidden_sizes[" + std::to_string(i) + "]",
              c.network.hidden_sizes[i], "must be >= 1");

  const bool uses_mnist = c.experiment != ExperimentKind::breakthrough;
  if (auto d = r.section(doc, "", "data",
                         {"mnist_images", "mnist_labels", "omniglot_root", "alphabet", "ways", "pretrain_categories",
                          "heldout_categories", "max_per_category", "bits"})) {
    r.read(d, "data", "mnist_images", c.data.mnist_images, uses_mnist);
    r.read(d, "data", "mnist_labels", c.data.mnist_labels, uses_mnist);
    r.read(d, "data", "omniglot_root", c.data.omniglot_root);
    r.read(d, "data", "alphabet", c.data.alphabet);
    r.read(d, "data", "ways", c.data.ways);
    r.read(d, "data", "pretrain_categories", c.data.pretrain_categories);
    r.read(d, "data", "heldout_categories", c.data.heldout_categories);
    r.read(d, "data", "max_per_category", c.data.max_per_category);
    if (auto b = r.section(*d, "data", "bits", {"n_in", "n_out", "rows"})) {
      r.read(b, "data.bits", "n_in", c.data.bits.n_in);
      r.read(b, "data.bits", "n_out", c.data.bits.n_out);
      r.read(b, "data.bits", "rows", c.data.bits.rows);
    }
  } else if (uses_mnist) {
    r.fail("data.mnist_images", "is required");
    r.fail("data.mnist_labels", "is required");
  }
  c.data.mnist_images = detail::resolve_path(c.data.mnist_images, base_dir);
  c.data.mnist_labels = detail::resolve_path(c.data.mnist_labels, base_dir);
  c.data.omniglot_root = detail::resolve_path(c.data.omniglot_root, base_dir);
  if (uses_mnist) {
    if (!c.data.mnist_images.empty())
      r.require(std::filesystem::is_regular_file(c.data.mnist_images), "data.mnist_images", c.data.mnist_images,
                "does not exist");
    if (!c.data.mnist_labels.empty())
      r.require(std::filesystem::is_regular_file(c.data.mnist_labels), "data.mnist_labels", c.data.mnist_labels,
                "does not exist");
    if (!c.data.omniglot_root.empty())
      r.require(std::filesystem::is_directory(c.data.omniglot_root), "data.omniglot_root", c.data.omniglot_root,
                "is not a directory");
    r.require(c.data.ways >= 2, "data.ways", c.data.ways, "must be >= 2");
    auto digits = [&](const std::vector<std::size_t>& v, const std::string& path, std::size_t min_size) {
      r.require(v.size() >= min_size, path, v, "needs at least " + std::to_string(min_size) + " digits");
      r.require(std::set<std::size_t>(v.begin(), v.end()).size() == v.size(), path, v, "has duplicates");
      for (auto x : v) r.require(x <= 9, path, v, "may only contain digits 0-9");
    };
    digits(c.data.pretrain_categories, "data.pretrain_categories", 2);
    if (c.data.omniglot_root.empty()) {
      digits(c.data.heldout_categories, "data.heldout_categories", c.data.ways);
      for (auto x : c.data.heldout_categories)
        for (auto y : c.data.pretrain_categories)
          r.require(x != y, "data.heldout_categories", c.data.heldout_categories,
                    "overlaps data.pretrain_categories");
    }
    if (c.data.max_per_category) r.require(*c.data.max_per_category >= 1, "data.max_per_category", *c.data.max_per_category, "must be >= 1");
  } else {
    r.require(c.data.bits.n_in >= 1 && c.data.bits.n_in <= 62, "data.bits.n_in", c.data.bits.n_in, "must be in [1, 62]");
    r.require(c.data.bits.n_out >= 1, "data.bits.n_out", c.data.bits.n_out, "must be >= 1");
    r.require(c.data.bits.rows >= 1, "data.bits.rows", c.data.bits.rows, "must be >= 1");
    if (c.data.bits.n_in <= 62)
      r.require(c.data.bits.rows <= (std::uint64_t(1) << c.data.bits.n_in), "data.bits.rows", c.data.bits.rows,
                "exceeds 2^n_in distinct inputs");
  }

  auto training = [&](const char* key, TrainingConfig& t, bool lr_required) {
    const auto* s = r.section(doc, "", key, {"lr", "momentum", "epochs", "batch_size"});
    if (!s && lr_required) r.fail(std::string(key) + ".lr", "is required");
    const std::string p = key;
    r.read(s, p, "lr", t.lr, lr_required);
    r.read(s, p, "momentum", t.momentum);
    r.read(s, p, "epochs", t.epochs);
    r.read(s, p, "batch_size", t.batch_size);
    r.require(t.lr > 0.0, p + ".lr", t.lr, "must be > 0");
    r.require(t.momentum >= 0.0 && t.momentum < 1.0, p + ".momentum", t.momentum, "must be in [0, 1)");
    r.require(t.epochs >= 1, p + ".epochs", t.epochs, "must be >= 1");
  };
  if (uses_mnist) training("pretrain", c.pretrain, false);
  else if (doc.contains("pretrain")) training("pretrain", c.pretrain, false);
  training("training", c.training, true);

  if (auto s = r.section(doc, "", "scouting",
                         {"n_scouts", "k", "n_pairs", "max_epochs", "stop_accuracy", "lr", "momentum", "batch_size",
                          "max_per_category"})) {
    auto& sc = c.scouting;
    if (s->contains("n_scouts") && s->at("n_scouts").is_number_integer() && s->at("n_scouts").get<long long>() < 0)
      r.fail("scouting.n_scouts", s->at("n_scouts").dump() + " is out of range (must be >= 1)");
    else
      r.read(s, "scouting", "n_scouts", sc.n_scouts);
    r.read(s, "scouting", "k", sc.k);
    r.read(s, "scouting", "n_pairs", sc.n_pairs);
    r.read(s, "scouting", "max_epochs", sc.max_epochs);
    r.read(s, "scouting", "stop_accuracy", sc.stop_accuracy);
    r.read(s, "scouting", "lr", sc.lr);
    r.read(s, "scouting", "momentum", sc.momentum);
    r.read(s, "scouting", "batch_size", sc.batch_size);
    r.read(s, "scouting", "max_per_category", sc.max_per_category);
  }
  {
    const auto& sc = c.scouting;
    r.require(sc.n_scouts >= 1, "scouting.n_scouts", sc.n_scouts, "is out of range (must be >= 1)");
    r.require(sc.max_epochs >= 1, "scouting.max_epochs", sc.max_epochs, "must be >= 1");
    r.require(sc.stop_accuracy > 0.0 && sc.stop_accuracy <= 1.0, "scouting.stop_accuracy", sc.stop_accuracy,
              "must be in (0, 1]");
    r.require(sc.lr > 0.0, "scouting.lr", sc.lr, "must be > 0");
    r.require(sc.momentum >= 0.0 && sc.momentum < 1.0, "scouting.momentum", sc.momentum, "must be in [0, 1)");
    if (uses_mnist)
      r.require(sc.k >= 2 && sc.k < c.data.pretrain_categories.size(), "scouting.k", sc.k,
                "must satisfy 2 <= k < number of pretrain categories");
    else
      r.require(sc.n_pairs >= 1 && (c.data.bits.n_in > 62 || sc.n_pairs <= (std::uint64_t(1) << c.data.bits.n_in)),
                "scouting.n_pairs", sc.n_pairs, "must be in [1, 2^n_in]");
  }

  if (auto g = r.section(doc, "", "guidance", {"enabled", "stat", "norm", "scope", "head_value"})) {
    r.read(g, "guidance", "enabled", c.guidance.enabled);
    r.read_enum(g, "guidance", "stat", c.guidance.stat, parse_stat_kind, "squared, absolute");
    r.read_enum(g, "guidance", "norm", c.guidance.norm, parse_norm_kind, "max, mean, forced_zero");
    r.read_enum(g, "guidance", "scope", c.guidance.scope, parse_norm_scope, "global, per_group");
    r.read(g, "guidance", "head_value", c.guidance.head_value);
  }
  r.require(c.guidance.head_value >= 0.0, "guidance.head_value", c.guidance.head_value, "must be >= 0");

  if (auto b = r.section(doc, "", "breakthrough", {"threshold", "patience", "stop_after_breakthrough"})) {
    r.read(b, "breakthrough", "threshold", c.breakthrough.threshold);
    r.read(b, "breakthrough", "patience", c.breakthrough.patience);
    r.read(b, "breakthrough", "stop_after_breakthrough", c.breakthrough.stop_after_breakthrough);
  }
  r.require(c.breakthrough.threshold > 0.0 && c.breakthrough.threshold <= 1.0, "breakthrough.threshold",
            c.breakthrough.threshold, "must be in (0, 1]");
  r.require(c.breakthrough.patience >= 1, "breakthrough.patience", c.breakthrough.patience, "must be >= 1");

  if (auto a = r.section(doc, "", "accumulation", {"blocks"})) r.read(a, "accumulation", "blocks", c.blocks);
  if (c.experiment == ExperimentKind::accumulation)
    r.require(c.blocks >= 2, "accumulation.blocks", c.blocks, "must be >= 2");
  else
    r.require(c.blocks >= 1, "accumulation.blocks", c.blocks, "must be >= 1");

  if (!r.issues.empty()) throw config_error(std::move(r.issues));
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const data_error& e) {
    throw config_error("", e.what());
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw config_error("", "not valid JSON: " + std::string(e.what()));
  }
  return parse_config(doc, std::filesystem::absolute(path).parent_path());
}

}  // namespace gtl
