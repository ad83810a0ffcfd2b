#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gtl/config.hpp"
#include "gtl/errors.hpp"
#include "gtl/guidance.hpp"
#include "gtl/io.hpp"
#include "gtl/nn.hpp"
#include "gtl/parallel.hpp"
#include "gtl/rng.hpp"
#include "gtl/scouting.hpp"
#include "gtl/tasks.hpp"
#include "gtl/training.hpp"

namespace gtl {

inline constexpr std::string_view baseline_condition = "baseline";
inline constexpr std::string_view guided_condition = "guided";

struct MetricRow {
  std::string run_id;
  std::string experiment;
  std::uint64_t seed = 0;
  std::string condition;
  std::size_t block = 1;  // 1-based
  std::size_t epoch = 1;  // 1-based, restarts every block
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double changed_param_fraction = 0.0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

struct RunSummary {
  std::uint64_t seed = 0;
  std::string condition;
  double final_test_acc = 0.0;
  double final_changed_fraction = 0.0;
  std::optional<std::size_t> breakthrough_epoch;  // 1-based; absent = censored
  std::vector<double> block_final_test_acc;
  std::size_t epochs_run = 0;
};

struct Artifact {
  std::string path;  // relative to the output directory
  std::string bytes;
};

struct RunMetrics {
  std::string name;
  ExperimentKind experiment = ExperimentKind::one_shot;
  std::vector<MetricRow> rows;
  std::vector<RunSummary> runs;  // seed order, baseline before guided
  std::vector<std::string> notes;
  std::vector<Artifact> artifacts;
  std::size_t epoch_cap = 0;
};

// First index e with curve[e .. e+patience) all >= threshold. Indices are
// 0-based positions in the curve.
inline std::optional<std::size_t> detect_breakthrough(std::span<const double> curve, double threshold,
                                                      std::size_t patience) {
  if (curve.empty()) throw argument_error("detect_breakthrough: empty curve");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw argument_error("detect_breakthrough: threshold must be in (0, 1]");
  if (patience < 1) throw argument_error("detect_breakthrough: patience must be >= 1");
  std::size_t run = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    run = curve[i] >= threshold ? run + 1 : 0;
    if (run == patience) return i + 1 - patience;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- pipeline

struct ExperimentData {
  TaskDataset mnist;                    // full MNIST as loaded
  TaskDataset pretrain;                 // pretrain digits, relabelled 0..n-1
  std::optional<TaskDataset> omniglot;  // absent: held-out MNIST digits serve as episodes
};

inline ExperimentData load_experiment_data(const RunConfig& c, bool quiet = true) {
  ExperimentData d;
  if (c.experiment == ExperimentKind::breakthrough) return d;
  d.mnist = load_mnist(c.data.mnist_images, c.data.mnist_labels);
  d.pretrain = subset_categories(d.mnist, c.data.pretrain_categories, c.data.max_per_category);
  if (!c.data.omniglot_root.empty()) d.omniglot = load_omniglot(c.data.omniglot_root, 28, quiet);
  if (d.omniglot && d.omniglot->feature_dim() != d.mnist.feature_dim())
    throw data_error("omniglot images and MNIST images differ in size");
  return d;
}

inline std::string seed_dir(std::uint64_t seed) { return "seed-" + std::to_string(seed); }

inline std::string run_id(const RunConfig& c, std::uint64_t seed, std::string_view condition) {
  return c.name + "/s" + std::to_string(seed) + "/" + std::string(condition);
}

// Network the scouts depart from: pre-trained on MNIST digits for the
// classification studies, randomly initialized for the bit-mapping study.
inline NetworkSpec base_spec(const RunConfig& c, std::uint64_t seed, std::size_t input_dim = 784) {
  NetworkSpec s;
  if (c.experiment == ExperimentKind::breakthrough) {
    s.layer_sizes.push_back(c.data.bits.n_in);
    s.output_head = Head::sigmoid_bce;
  } else {
    s.layer_sizes.push_back(input_dim);
    s.output_head = Head::softmax_ce;
  }
  s.layer_sizes.insert(s.layer_sizes.end(), c.network.hidden_sizes.begin(), c.network.hidden_sizes.end());
  s.layer_sizes.push_back(c.experiment == ExperimentKind::breakthrough ? c.data.bits.n_out
                                                                       : c.data.pretrain_categories.size());
  s.hidden_activation = c.network.activation;
  s.init_seed = derive_seed(seed, "base");
  s.validate();
  return s;
}

inline Checkpoint pretrain_base(const RunConfig& c, const ExperimentData& data, std::uint64_t seed) {
  Checkpoint base;
  if (c.experiment == ExperimentKind::breakthrough) {
    base.spec = base_spec(c, seed);
    base.params = init_params(base.spec);
    return base;
  }
  base.spec = base_spec(c, seed, data.pretrain.feature_dim());
  const TrainOptions opt{c.pretrain.lr, c.pretrain.momentum, c.pretrain.epochs, c.pretrain.batch_size,
                         derive_seed(seed, "pretrain")};
  base.params = train(init_params(base.spec), base.spec, to_batch(data.pretrain), opt);
  return base;
}

inline ScoutSpec scout_prototype(const RunConfig& c) {
  ScoutSpec p;
  p.max_epochs = c.scouting.max_epochs;
  p.stop_accuracy = c.scouting.stop_accuracy;
  p.lr = c.scouting.lr;
  p.momentum = c.scouting.momentum;
  p.batch_size = c.scouting.batch_size;
  p.max_per_category = c.scouting.max_per_category;
  return p;
}

inline std::vector<ScoutSpec> scout_specs(const RunConfig& c, std::uint64_t seed) {
  const auto s = derive_seed(seed, "scouts");
  if (c.experiment == ExperimentKind::breakthrough)
    return make_bit_scout_specs(c.scouting.n_pairs, c.scouting.n_scouts, s, scout_prototype(c));
  return make_cousin_specs(c.data.pretrain_categories.size(), c.scouting.k, c.scouting.n_scouts, s,
                           scout_prototype(c));
}

inline ScoutFamily run_scouts(const RunConfig& c, const ExperimentData& data, const Checkpoint& base,
                              std::uint64_t seed, std::size_t threads = 1) {
  const TaskDataset* source = c.experiment == ExperimentKind::breakthrough ? nullptr : &data.pretrain;
  return train_family(base.params, base.spec, scout_specs(c, seed), source, threads);
}

inline GuidanceMatrix guidance_from(const RunConfig& c, const ScoutFamily& family) {
  return build_guidance(family, c.guidance.stat, c.guidance.norm, c.guidance.scope, c.guidance.head_value);
}

struct TransferTask {
  BlockEpisodes episodes;
  std::string description;
};

// Draws the episode categories for a seed and splits them into blocks of one
// example per category plus a fixed test pool.
inline TransferTask make_transfer_task(const RunConfig& c, const ExperimentData& data, std::uint64_t seed,
                                       std::size_t blocks) {
  rng gen(derive_seed(seed, "categories"));
  const std::size_t ways = c.data.ways;
  std::vector<std::size_t> pool;
  const TaskDataset* source = nullptr;
  std::string description;
  if (data.omniglot) {
    source = &*data.omniglot;
    std::vector<std::string> alphabets;
    for (const auto& name : source->category_names) {
      auto a = name.substr(0, name.find('/'));
      if (alphabets.empty() || alphabets.back() != a) alphabets.push_back(a);
    }
    std::vector<std::string> usable;
    for (const auto& a : alphabets)
      if (alphabet_categories(*source, a).size() >= ways) usable.push_back(a);
    std::string alphabet = c.data.alphabet;
    if (alphabet.empty()) {
      if (usable.empty()) throw data_error("no Omniglot alphabet has " + std::to_string(ways) + " characters");
      alphabet = usable[gen.below(usable.size())];
    }
    pool = alphabet_categories(*source, alphabet);
    if (pool.size() < ways)
      throw data_error("alphabet " + alphabet + " has " + std::to_string(pool.size()) + " characters; need " +
                       std::to_string(ways));
    description = "omniglot alphabet " + alphabet;
  } else {
    source = &data.mnist;
    pool = c.data.heldout_categories;
    description = "held-out MNIST digits (Omniglot not configured)";
  }
  gen.shuffle(pool.begin(), pool.end());
  pool.resize(ways);
  std::sort(pool.begin(), pool.end());
  description += ": categories";
  for (auto k : pool) description += " " + source->category_names[k];
  return {make_block_episodes(*source, pool, blocks, derive_seed(seed, "episode")), description};
}

struct ConditionRun {
  std::vector<MetricRow> rows;
  RunSummary summary;
  ParamSet final_params;
  NetworkSpec spec;
};

// Fine-tunes a fresh head on top of the pre-trained base, one block after
// another. The head is re-initialized from the run seed, so both conditions
// start from identical parameters.
inline ConditionRun run_transfer_condition(const RunConfig& c, std::uint64_t seed, std::string_view condition,
                                           const Checkpoint& base, const TransferTask& task,
                                           const GuidanceMatrix* guidance) {
  const std::size_t ways = task.episodes.blocks.front().category_count();
  ConditionRun out;
  out.spec = base.spec.with_output_dim(ways);
  ParamSet params = replace_head(base.params, ways, derive_seed(seed, "head"));
  std::optional<GuidanceMatrix> g;
  if (guidance) g = guidance->with_output_dim(ways);
  const Batch test = to_batch(task.episodes.test);
  out.summary.seed = seed;
  out.summary.condition = std::string(condition);
  const auto id = run_id(c, seed, condition);
  for (std::size_t b = 0; b < task.episodes.blocks.size(); ++b) {
    const ParamSet start = params;
    const TrainOptions opt{c.training.lr, c.training.momentum, c.training.epochs, c.training.batch_size,
                           derive_seed(derive_seed(seed, "shuffle"), b)};
    params = train(std::move(params), out.spec, to_batch(task.episodes.blocks[b]), opt, g ? &*g : nullptr,
                   [&](const EpochRecord& r, const ParamSet& p) {
                     const auto ev = evaluate(p, out.spec, test);
                     out.rows.push_back(MetricRow{id, std::string(to_string(c.experiment)), seed,
                                                  std::string(condition), b + 1, r.epoch, r.train_loss, r.train_acc,
                                                  ev.accuracy, changed_fraction(start, p)});
                     return true;
                   });
    out.summary.block_final_test_acc.push_back(out.rows.back().test_acc);
    out.summary.epochs_run += c.training.epochs;
  }
  out.summary.final_test_acc = out.rows.back().test_acc;
  out.summary.final_changed_fraction = out.rows.back().changed_param_fraction;
  out.final_params = std::move(params);
  return out;
}

inline Batch breakthrough_task(const RunConfig& c, std::uint64_t seed) {
  return to_batch(make_bit_mapping(c.data.bits.n_in, c.data.bits.n_out, c.data.bits.rows, derive_seed(seed, "task")));
}

// A fresh random network trained on the full bit mapping. Training accuracy is
// the quantity of interest (the task is memorization), so test_acc repeats it.
inline ConditionRun run_breakthrough_condition(const RunConfig& c, std::uint64_t seed, std::string_view condition,
                                               const NetworkSpec& scout_spec, const Batch& task,
                                               const GuidanceMatrix* guidance) {
  ConditionRun out;
  out.spec = scout_spec;
  if (!c.reuse_base) out.spec.init_seed = derive_seed(seed, "init");
  const ParamSet start = init_params(out.spec);
  out.summary.seed = seed;
  out.summary.condition = std::string(condition);
  const auto id = run_id(c, seed, condition);
  std::vector<double> curve;
  const TrainOptions opt{c.training.lr, c.training.momentum, c.training.epochs, c.training.batch_size,
                         derive_seed(seed, "shuffle")};
  out.final_params = train(start, out.spec, task, opt, guidance, [&](const EpochRecord& r, const ParamSet& p) {
    curve.push_back(r.train_acc);
    out.rows.push_back(MetricRow{id, std::string(to_string(c.experiment)), seed, std::string(condition), 1, r.epoch,
                                 r.train_loss, r.train_acc, r.train_acc, changed_fraction(start, p)});
    if (!c.breakthrough.stop_after_breakthrough || curve.size() < c.breakthrough.patience) return true;
    return !detect_breakthrough(std::span(curve).last(c.breakthrough.patience), c.breakthrough.threshold,
                                c.breakthrough.patience);
  });
  if (auto e = detect_breakthrough(curve, c.breakthrough.threshold, c.breakthrough.patience))
    out.summary.breakthrough_epoch = *e + 1;
  out.summary.final_test_acc = out.rows.back().test_acc;
  out.summary.final_changed_fraction = out.rows.back().changed_param_fraction;
  out.summary.block_final_test_acc = {out.summary.final_test_acc};
  out.summary.epochs_run = curve.size();
  return out;
}

struct SeedResult {
  std::vector<ConditionRun> conditions;
  std::vector<Artifact> artifacts;
  std::string note;
};

inline SeedResult run_seed(const RunConfig& c, const ExperimentData& data, std::uint64_t seed) {
  SeedResult out;
  const auto dir = seed_dir(seed) + "/";
  const Checkpoint base = pretrain_base(c, data, seed);
  out.artifacts.push_back({dir + "base.ckpt", encode_checkpoint(base.spec, base.params)});

  std::optional<GuidanceMatrix> g;
  if (c.guidance.enabled) {
    const auto family = run_scouts(c, data, base, seed);
    g = guidance_from(c, family);
    out.artifacts.push_back({dir + "guidance.guid", encode_guidance(base.spec, *g)});
  }
  const GuidanceMatrix* mask = g ? &*g : nullptr;

  if (c.experiment == ExperimentKind::breakthrough) {
    const Batch task = breakthrough_task(c, seed);
    out.conditions.push_back(run_breakthrough_condition(c, seed, baseline_condition, base.spec, task, nullptr));
    out.conditions.push_back(run_breakthrough_condition(c, seed, guided_condition, base.spec, task, mask));
  } else {
    const std::size_t blocks = c.experiment == ExperimentKind::one_shot ? 1 : c.blocks;
    const TransferTask task = make_transfer_task(c, data, seed, blocks);
    out.note = "seed " + std::to_string(seed) + ": " + task.description;
    out.conditions.push_back(run_transfer_condition(c, seed, baseline_condition, base, task, nullptr));
    out.conditions.push_back(run_transfer_condition(c, seed, guided_condition, base, task, mask));
  }
  for (const auto& r : out.conditions)
    out.artifacts.push_back({dir + r.summary.condition + ".ckpt", encode_checkpoint(r.spec, r.final_params)});
  return out;
}

// Runs every seed (in parallel when threads > 1) and folds the results in
// seed-list order, so the output never depends on scheduling.
inline RunMetrics run_experiment(const RunConfig& c, const ExperimentData& data, bool quiet = true) {
  if (c.reuse_base != expected_reuse_base(c.experiment))
    throw config_error("reuse_base", "must be " + std::string(expected_reuse_base(c.experiment) ? "true" : "false") +
                                         " for " + std::string(to_string(c.experiment)));
  if (c.seeds.empty()) throw config_error("seeds", "must list at least one seed");
  std::vector<SeedResult> results(c.seeds.size());
  std::mutex log;
  parallel_for(c.seeds.size(), c.threads, [&](std::size_t i) {
    results[i] = run_seed(c, data, c.seeds[i]);
    if (!quiet) {
      std::lock_guard lock(log);
      std::clog << c.name << ": seed " << c.seeds[i] << " done\n";
    }
  });
  RunMetrics m;
  m.name = c.name;
  m.experiment = c.experiment;
  m.epoch_cap = c.training.epochs;
  if (c.experiment != ExperimentKind::breakthrough && !data.omniglot)
    m.notes.push_back("Omniglot not configured; episodes use held-out MNIST digits instead");
  for (auto& r : results) {
    if (!r.note.empty()) m.notes.push_back(r.note);
    for (auto& cond : r.conditions) {
      m.rows.insert(m.rows.end(), cond.rows.begin(), cond.rows.end());
      m.runs.push_back(cond.summary);
    }
    for (auto& a : r.artifacts) m.artifacts.push_back(std::move(a));
  }
  return m;
}

inline RunMetrics run_one_shot(const RunConfig& c, const ExperimentData& data, bool quiet = true) {
  if (c.experiment != ExperimentKind::one_shot) throw config_error("experiment", "expected one_shot");
  return run_experiment(c, data, quiet);
}

inline RunMetrics run_breakthrough(const RunConfig& c, bool quiet = true) {
  if (c.experiment != ExperimentKind::breakthrough) throw config_error("experiment", "expected breakthrough");
  return run_experiment(c, ExperimentData{}, quiet);
}

inline RunMetrics run_accumulation(const RunConfig& c, const ExperimentData& data, bool quiet = true) {
  if (c.experiment != ExperimentKind::accumulation) throw config_error("experiment", "expected accumulation");
  if (c.blocks < 2) throw config_error("accumulation.blocks", "must be >= 2");
  return run_experiment(c, data, quiet);
}

// ---------------------------------------------------------------- outputs

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{"run_id", "experiment", "seed",      "condition", "block",
                                             "epoch",  "train_loss", "train_acc", "test_acc",  "changed_param_fraction"};
  return cols;
}

// Shortest decimal form that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out;
  for (std::size_t i = 0; i < metrics_columns().size(); ++i) out += (i ? "," : "") + metrics_columns()[i];
  out += '\n';
  for (const auto& r : rows) {
    out += r.run_id + ',' + r.experiment + ',' + std::to_string(r.seed) + ',' + r.condition + ',' +
           std::to_string(r.block) + ',' + std::to_string(r.epoch) + ',' + format_double(r.train_loss) + ',' +
           format_double(r.train_acc) + ',' + format_double(r.test_acc) + ',' +
           format_double(r.changed_param_fraction) + '\n';
  }
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw argument_error("median of an empty set");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Median where absent values are censored at `cap` (known only to exceed
// it). When the median position lands on a censored run the result is the
// string ">= cap" rather than a number.
inline json censored_median(const std::vector<std::optional<std::size_t>>& v, std::size_t cap) {
  if (v.empty()) return nullptr;
  std::vector<double> finite;
  for (const auto& x : v)
    if (x) finite.push_back(static_cast<double>(*x));
  std::sort(finite.begin(), finite.end());
  const auto n = v.size();
  const auto hi = n / 2;
  const auto lo = n % 2 ? hi : hi - 1;
  if (hi >= finite.size()) return ">= " + std::to_string(cap);
  return 0.5 * (finite[lo] + finite[hi]);
}

inline json summary_json(const RunConfig& c, const RunMetrics& m) {
  json conditions = json::object();
  for (auto cond : {baseline_condition, guided_condition}) {
    std::vector<const RunSummary*> runs;
    for (const auto& r : m.runs)
      if (r.condition == cond) runs.push_back(&r);
    if (runs.empty()) continue;
    std::vector<double> acc, changed;
    json seeds = json::array();
    for (const auto* r : runs) {
      acc.push_back(r->final_test_acc);
      changed.push_back(r->final_changed_fraction);
    }
    json entry{{"final_test_acc", {{"per_seed", acc}, {"median", median(acc)}}},
               {"changed_param_fraction", {{"per_seed", changed}, {"median", median(changed)}}}};
    if (m.experiment == ExperimentKind::breakthrough) {
      std::vector<std::optional<std::size_t>> epochs;
      json per_seed = json::array();
      std::size_t censored = 0;
      for (const auto* r : runs) {
        epochs.push_back(r->breakthrough_epoch);
        per_seed.push_back(r->breakthrough_epoch ? json(*r->breakthrough_epoch) : json(nullptr));
        censored += !r->breakthrough_epoch;
      }
      entry["breakthrough_epoch"] = {{"per_seed", per_seed},
                                     {"censored", censored},
                                     {"runs", runs.size()},
                                     {"median", censored_median(epochs, m.epoch_cap)}};
    }
    if (m.experiment == ExperimentKind::accumulation) {
      const auto blocks = runs.front()->block_final_test_acc.size();
      json per_block = json::array();
      for (std::size_t b = 0; b < blocks; ++b) {
        std::vector<double> v;
        for (const auto* r : runs) v.push_back(r->block_final_test_acc[b]);
        per_block.push_back(median(v));
      }
      json block_acc = json::array();
      for (const auto* r : runs) block_acc.push_back(r->block_final_test_acc);
      entry["block_test_acc"] = {{"per_seed", block_acc}, {"median_per_block", per_block}};
      if (blocks >= 3) {
        std::vector<double> gains;
        for (const auto* r : runs) gains.push_back(r->block_final_test_acc[2] - r->block_final_test_acc[0]);
        entry["gain_block1_to_block3"] = {{"per_seed", gains}, {"median", median(gains)}};
      }
    }
    conditions[std::string(cond)] = std::move(entry);
  }
  return json{{"name", c.name},
              {"experiment", to_string(c.experiment)},
              {"seeds", c.seeds},
              {"epochs", c.training.epochs},
              {"guidance_enabled", c.guidance.enabled},
              {"notes", m.notes},
              {"conditions", std::move(conditions)}};
}

// Writes resolved_config.json, metrics.csv, summary.json and the per-seed
// checkpoints and guidance files. Files are written in a fixed order from
// this single thread.
inline void write_run(const RunConfig& c, const RunMetrics& m) {
  const std::filesystem::path dir = c.output_dir;
  write_file(dir / "resolved_config.json", to_json(c).dump(2) + "\n");
  write_file(dir / "metrics.csv", metrics_csv(m.rows));
  write_file(dir / "summary.json", summary_json(c, m).dump(2) + "\n");
  for (const auto& a : m.artifacts) write_file(dir / a.path, a.bytes);
}

}  // namespace gtl
