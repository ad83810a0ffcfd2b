#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gtl/errors.hpp"
#include "gtl/guidance.hpp"
#include "gtl/io.hpp"
#include "gtl/nn.hpp"
#include "gtl/parallel.hpp"
#include "gtl/rng.hpp"
#include "gtl/tasks.hpp"
#include "gtl/training.hpp"

namespace gtl {

// One simplified subtask. Classification scouts list categories of the source
// dataset; bit-mapping scouts set n_pairs instead.
struct ScoutSpec {
  std::vector<std::size_t> categories;
  std::size_t n_pairs = 0;
  std::size_t max_epochs = 100;
  double stop_accuracy = 1.0;
  double lr = 0.1;
  double momentum = 0.0;
  std::size_t batch_size = 0;
  std::optional<std::size_t> max_per_category;
  std::uint64_t seed = 0;

  bool is_bit_mapping() const { return n_pairs > 0; }

  std::string descriptor() const {
    std::ostringstream out;
    if (is_bit_mapping()) {
      out << "bits:n_pairs=" << n_pairs;
    } else {
      out << "categories=";
      for (std::size_t i = 0; i < categories.size(); ++i) out << (i ? "," : "") << categories[i];
    }
    out << ";seed=" << seed;
    return out.str();
  }

  void validate() const {
    if (max_epochs < 1) throw argument_error("scout: max_epochs must be >= 1");
    if (!(stop_accuracy > 0.0 && stop_accuracy <= 1.0)) throw argument_error("scout: stop_accuracy must be in (0, 1]");
    if (!(lr >= 0.0)) throw argument_error("scout: lr must be >= 0");
    if (!is_bit_mapping() && categories.size() < 2)
      throw argument_error("scout: a classification scout needs at least 2 categories");
  }

  friend bool operator==(const ScoutSpec&, const ScoutSpec&) = default;
};

struct ScoutOutcome {
  ScoutSpec spec;
  ParamSet params;  // full scout network, including its own head
  double accuracy = 0.0;
  std::size_t epochs_used = 0;
};

struct ScoutFamily {
  ParamSet base;
  NetworkSpec spec;
  std::vector<ScoutOutcome> scouts;
  // Scouts trained with their own k-way head; only the shared hidden stack is
  // compared with the base.
  bool head_excluded = true;

  std::size_t compared_layers() const { return head_excluded ? base.size() - 1 : base.size(); }
};

// n scouts of k distinct categories each, sampled independently so that
// scouts overlap (cousins) by chance. Training settings come from prototype.
inline std::vector<ScoutSpec> make_cousin_specs(std::size_t total_categories, std::size_t k, std::size_t n_scouts,
                                                std::uint64_t seed, const ScoutSpec& prototype = {}) {
  if (k < 2 || k >= total_categories)
    throw argument_error("make_cousin_specs: k must satisfy 2 <= k < " + std::to_string(total_categories));
  if (n_scouts < 1) throw argument_error("make_cousin_specs: need at least one scout");
  rng gen(seed);
  std::vector<ScoutSpec> out;
  std::vector<std::size_t> pool(total_categories);
  for (std::size_t i = 0; i < n_scouts; ++i) {
    for (std::size_t c = 0; c < total_categories; ++c) pool[c] = c;
    ScoutSpec s = prototype;
    s.n_pairs = 0;
    s.categories.clear();
    for (std::size_t j = 0; j < k; ++j) {
      const auto pick = j + gen.below(total_categories - j);
      std::swap(pool[j], pool[pick]);
      s.categories.push_back(pool[j]);
    }
    std::sort(s.categories.begin(), s.categories.end());
    s.seed = derive_seed(seed, i);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<ScoutSpec> make_bit_scout_specs(std::size_t n_pairs, std::size_t n_scouts, std::uint64_t seed,
                                                   const ScoutSpec& prototype = {}) {
  if (n_pairs < 1) throw argument_error("make_bit_scout_specs: n_pairs must be >= 1");
  if (n_scouts < 1) throw argument_error("make_bit_scout_specs: need at least one scout");
  std::vector<ScoutSpec> out;
  for (std::size_t i = 0; i < n_scouts; ++i) {
    ScoutSpec s = prototype;
    s.categories.clear();
    s.n_pairs = n_pairs;
    s.seed = derive_seed(seed, i);
    out.push_back(std::move(s));
  }
  return out;
}

namespace detail {

inline ScoutOutcome run_scout(ParamSet start, const NetworkSpec& spec, const ScoutSpec& scout, const Batch& data) {
  ScoutOutcome out{scout, {}, 0.0, 0};
  TrainOptions opt{scout.lr, scout.momentum, scout.max_epochs, scout.batch_size, derive_seed(scout.seed, "shuffle")};
  out.params = train(std::move(start), spec, data, opt, nullptr, [&](const EpochRecord& r, const ParamSet&) {
    out.accuracy = r.train_acc;
    out.epochs_used = r.epoch;
    return r.train_acc < scout.stop_accuracy;
  });
  return out;
}

}  // namespace detail

// Classification scout: trains from base on the scout's categories with a
// fresh k-way head until train accuracy reaches stop_accuracy or max_epochs.
inline ScoutOutcome train_scout(const ParamSet& base, const NetworkSpec& spec, const ScoutSpec& scout,
                                const TaskDataset& data) {
  scout.validate();
  if (scout.is_bit_mapping()) throw argument_error("train_scout: bit-mapping scout needs train_bit_scout");
  for (auto c : scout.categories)
    if (c >= data.category_count())
      throw data_error("scout category " + std::to_string(c) + " is not present in the dataset");
  const auto sub = subset_categories(data, scout.categories, scout.max_per_category);
  for (std::size_t k = 0; k < scout.categories.size(); ++k)
    if (sub.indices_of(k).empty())
      throw data_error("scout category " + std::to_string(scout.categories[k]) + " has no examples");
  const std::size_t k = scout.categories.size();
  const NetworkSpec scout_spec = spec.with_output_dim(k);
  return detail::run_scout(replace_head(base, k, derive_seed(scout.seed, "head")), scout_spec, scout, to_batch(sub));
}

// Bit-mapping scout: a fresh random mapping with n_pairs rows, same head shape
// as the base.
inline ScoutOutcome train_bit_scout(const ParamSet& base, const NetworkSpec& spec, const ScoutSpec& scout) {
  scout.validate();
  if (!scout.is_bit_mapping()) throw argument_error("train_bit_scout: scout has no n_pairs");
  const auto task = make_bit_mapping(spec.input_dim(), spec.output_dim(), scout.n_pairs, derive_seed(scout.seed, "task"));
  return detail::run_scout(base, spec, scout, to_batch(task));
}

// Trains every scout from the same base; scouts are independent and may run
// on several threads without changing any result.
inline ScoutFamily train_family(const ParamSet& base, const NetworkSpec& spec, const std::vector<ScoutSpec>& specs,
                                const TaskDataset* data, std::size_t threads = 1) {
  if (specs.empty()) throw argument_error("train_family: no scouts");
  ScoutFamily family{base, spec, std::vector<ScoutOutcome>(specs.size()), !specs.front().is_bit_mapping()};
  for (const auto& s : specs)
    if (s.is_bit_mapping() == family.head_excluded) throw argument_error("train_family: mixed scout kinds");
  if (family.head_excluded && !data) throw argument_error("train_family: classification scouts need a dataset");
  parallel_for(specs.size(), threads, [&](std::size_t i) {
    family.scouts[i] = specs[i].is_bit_mapping() ? train_bit_scout(base, spec, specs[i])
                                                 : train_scout(base, spec, specs[i], *data);
  });
  return family;
}

// Deviation statistic over the compared layers, normalized; any excluded head
// layer receives head_value.
inline GuidanceMatrix build_guidance(const ScoutFamily& family, StatKind stat, NormKind norm,
                                     NormScope scope = NormScope::global, double head_value = 1.0) {
  if (family.scouts.empty()) throw argument_error("build_guidance: empty scout family");
  const std::size_t layers = family.compared_layers();
  if (layers == 0) throw degenerate_scouting_error("build_guidance: no shared layers to compare");
  std::vector<ParamSet> scouts;
  scouts.reserve(family.scouts.size());
  for (const auto& s : family.scouts) {
    if (s.params.size() != family.base.size()) throw shape_error("build_guidance: scout depth differs from base");
    scouts.push_back(s.params.prefix(layers));
  }
  const ParamSet base = family.base.prefix(layers);
  GuidanceMatrix g = normalize(deviation_stat(base, scouts, stat), norm, scope);
  g.head_value = head_value;
  for (std::size_t k = layers; k < family.base.size(); ++k) {
    const auto& l = family.base.layers[k];
    g.values.layers.push_back({Matrix::Constant(l.weights.rows(), l.weights.cols(), head_value),
                               RowVector::Constant(l.biases.size(), head_value)});
  }
  for (const auto& s : family.scouts) g.scout_tasks.push_back(s.spec.descriptor());
  return g;
}

// ------------------------------------------------------------ manifest

inline json to_json(const ScoutSpec& s) {
  json j{{"max_epochs", s.max_epochs}, {"stop_accuracy", s.stop_accuracy}, {"lr", s.lr},
         {"momentum", s.momentum},     {"batch_size", s.batch_size},       {"seed", s.seed}};
  if (s.is_bit_mapping())
    j["n_pairs"] = s.n_pairs;
  else
    j["categories"] = s.categories;
  if (s.max_per_category) j["max_per_category"] = *s.max_per_category;
  return j;
}

inline ScoutSpec scout_spec_from_json(const json& j) {
  ScoutSpec s;
  try {
    s.categories = j.value("categories", std::vector<std::size_t>{});
    s.n_pairs = j.value("n_pairs", std::size_t{0});
    s.max_epochs = j.at("max_epochs").get<std::size_t>();
    s.stop_accuracy = j.at("stop_accuracy").get<double>();
    s.lr = j.at("lr").get<double>();
    s.momentum = j.value("momentum", 0.0);
    s.batch_size = j.value("batch_size", std::size_t{0});
    if (j.contains("max_per_category")) s.max_per_category = j.at("max_per_category").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw data_error(std::string("bad scout entry: ") + e.what());
  }
  return s;
}

// Structured description of a trained family. checkpoint_names[i], when
// given, names the file holding scout i's parameters.
inline json family_manifest(const ScoutFamily& family, const std::vector<std::string>& checkpoint_names = {},
                            const std::string& base_checkpoint = {}) {
  json scouts = json::array();
  for (std::size_t i = 0; i < family.scouts.size(); ++i) {
    const auto& s = family.scouts[i];
    json e{{"index", i},
           {"task", s.spec.descriptor()},
           {"spec", to_json(s.spec)},
           {"accuracy", s.accuracy},
           {"epochs_used", s.epochs_used},
           {"digest", content_digest(s.params)}};
    if (i < checkpoint_names.size()) e["checkpoint"] = checkpoint_names[i];
    scouts.push_back(std::move(e));
  }
  json m{{"format", "gtl-scout-family"},
         {"version", 1},
         {"network", to_json(family.spec)},
         {"head_excluded", family.head_excluded},
         {"base_digest", content_digest(family.base)},
         {"scouts", std::move(scouts)}};
  if (!base_checkpoint.empty()) m["base_checkpoint"] = base_checkpoint;
  return m;
}

}  // namespace gtl
