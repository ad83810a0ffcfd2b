// gtl: command-line driver for pre-training, scouting, guidance, guided
// fine-tuning, full experiments and reports.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "gtl/gtl.hpp"

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
  bool quiet = false;
};

gtl::RunConfig load(const Globals& g) {
  if (g.config.empty()) throw gtl::config_error("--config", "this command needs a config file");
  auto c = gtl::load_config(g.config);
  if (g.seed) c.seeds = {*g.seed};
  if (g.threads) c.threads = *g.threads;
  if (!g.out.empty()) c.output_dir = fs::absolute(g.out).lexically_normal().string();
  return c;
}

fs::path out_dir(const Globals& g, const gtl::RunConfig* c) {
  if (!g.out.empty()) return g.out;
  if (c) return c->output_dir;
  return fs::current_path();
}

void say(const Globals& g, const std::string& msg) {
  if (!g.quiet) std::cout << msg << '\n';
}

void cmd_pretrain(const Globals& g) {
  const auto c = load(g);
  const auto data = gtl::load_experiment_data(c, g.quiet);
  const auto base = gtl::pretrain_base(c, data, c.seeds.front());
  const auto path = out_dir(g, &c) / "base.ckpt";
  gtl::write_checkpoint(path, base.spec, base.params);
  say(g, "wrote " + path.string());
}

void cmd_scout(const Globals& g, const std::string& base_path) {
  const auto c = load(g);
  const auto dir = out_dir(g, &c);
  const fs::path base_file = base_path.empty() ? dir / "base.ckpt" : fs::path(base_path);
  const auto base = gtl::read_checkpoint(base_file);
  const auto data = gtl::load_experiment_data(c, g.quiet);
  const auto family = gtl::run_scouts(c, data, base, c.seeds.front(), c.threads);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < family.scouts.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scouts/scout-%03zu.ckpt", i);
    names.push_back(name);
    const auto& s = family.scouts[i];
    const auto spec = family.head_excluded ? base.spec.with_output_dim(s.spec.categories.size()) : base.spec;
    gtl::write_checkpoint(dir / name, spec, s.params);
  }
  const auto base_rel = fs::relative(fs::absolute(base_file), fs::absolute(dir)).string();
  gtl::write_file(dir / "family.json", gtl::family_manifest(family, names, base_rel).dump(2) + "\n");
  say(g, "wrote " + (dir / "family.json").string() + " (" + std::to_string(names.size()) + " scouts)");
}

// Rebuilds a family from its manifest, checking every file against the
// recorded digests.
gtl::ScoutFamily load_family(const fs::path& manifest_path) {
  gtl::json m;
  try {
    m = gtl::json::parse(gtl::read_file(manifest_path));
    if (m.at("format") != "gtl-scout-family") throw gtl::data_error("not a scout family manifest");
  } catch (const gtl::json::exception& e) {
    throw gtl::data_error(manifest_path.string() + ": " + e.what());
  }
  const auto dir = manifest_path.parent_path();
  gtl::ScoutFamily f;
  try {
    const auto base = gtl::read_checkpoint(dir / m.at("base_checkpoint").get<std::string>());
    if (gtl::content_digest(base.params) != m.at("base_digest"))
      throw gtl::consistency_error("base checkpoint does not match the manifest digest");
    f.base = base.params;
    f.spec = base.spec;
    f.head_excluded = m.at("head_excluded").get<bool>();
    for (const auto& s : m.at("scouts")) {
      const auto ckpt = gtl::read_checkpoint(dir / s.at("checkpoint").get<std::string>());
      if (gtl::content_digest(ckpt.params) != s.at("digest"))
        throw gtl::consistency_error("scout " + s.at("checkpoint").get<std::string>() + " does not match its digest");
      f.scouts.push_back({gtl::scout_spec_from_json(s.at("spec")), ckpt.params, s.at("accuracy").get<double>(),
                          s.at("epochs_used").get<std::size_t>()});
    }
  } catch (const gtl::json::exception& e) {
    throw gtl::data_error(manifest_path.string() + ": " + e.what());
  }
  return f;
}

// Unset options fall back to the config's guidance section when --config is
// given, else to the library defaults.
struct GuideOptions {
  std::string family;
  std::optional<std::string> stat;
  std::optional<std::string> norm;
  std::optional<std::string> scope;
  std::optional<double> head_value;
};

void cmd_guide(const Globals& g, GuideOptions o) {
  gtl::GuidanceConfig defaults;
  if (!g.config.empty()) defaults = load(g).guidance;
  if (!o.stat) o.stat = std::string(gtl::to_string(defaults.stat));
  if (!o.norm) o.norm = std::string(gtl::to_string(defaults.norm));
  if (!o.scope) o.scope = std::string(gtl::to_string(defaults.scope));
  if (!o.head_value) o.head_value = defaults.head_value;
  const auto stat = gtl::parse_stat_kind(*o.stat);
  const auto norm = gtl::parse_norm_kind(*o.norm);
  const auto scope = gtl::parse_norm_scope(*o.scope);
  if (!stat) throw gtl::config_error("--stat", "unknown value \"" + *o.stat + "\"");
  if (!norm) throw gtl::config_error("--norm", "unknown value \"" + *o.norm + "\"");
  if (!scope) throw gtl::config_error("--scope", "unknown value \"" + *o.scope + "\"");
  if (!(*o.head_value >= 0.0)) throw gtl::config_error("--head-value", "must be >= 0");
  const auto family = load_family(o.family);
  const auto guidance = gtl::build_guidance(family, *stat, *norm, *scope, *o.head_value);
  const auto dir = out_dir(g, nullptr);
  const auto path = dir / "guidance.guid";
  gtl::write_guidance(path, family.spec, guidance, fs::relative(fs::absolute(o.family), fs::absolute(dir)).string());
  const auto st = gtl::guidance_stats(guidance);
  say(g, "wrote " + path.string() + "; fraction below mean " + std::to_string(st.fraction_below_mean));
}

void cmd_train(const Globals& g, const std::string& base_path, const std::string& guidance_path) {
  const auto c = load(g);
  const auto dir = out_dir(g, &c);
  const std::uint64_t seed = c.seeds.front();
  std::optional<gtl::GuidanceMatrix> guidance;
  if (!guidance_path.empty()) guidance = gtl::read_guidance(guidance_path).guidance;
  const auto condition = guidance ? gtl::guided_condition : gtl::baseline_condition;
  gtl::ConditionRun run;
  if (c.experiment == gtl::ExperimentKind::breakthrough) {
    const auto spec = base_path.empty() ? gtl::base_spec(c, seed) : gtl::read_checkpoint(base_path).spec;
    run = gtl::run_breakthrough_condition(c, seed, condition, spec, gtl::breakthrough_task(c, seed),
                                          guidance ? &*guidance : nullptr);
  } else {
    const auto base = gtl::read_checkpoint(base_path.empty() ? dir / "base.ckpt" : fs::path(base_path));
    const auto data = gtl::load_experiment_data(c, g.quiet);
    const std::size_t blocks = c.experiment == gtl::ExperimentKind::one_shot ? 1 : c.blocks;
    const auto task = gtl::make_transfer_task(c, data, seed, blocks);
    say(g, task.description);
    run = gtl::run_transfer_condition(c, seed, condition, base, task, guidance ? &*guidance : nullptr);
  }
  gtl::write_file(dir / "metrics.csv", gtl::metrics_csv(run.rows));
  gtl::write_checkpoint(dir / (std::string(condition) + ".ckpt"), run.spec, run.final_params);
  say(g, std::string(condition) + ": final test accuracy " + std::to_string(run.summary.final_test_acc) +
             ", changed fraction " + std::to_string(run.summary.final_changed_fraction));
}

void cmd_experiment(const Globals& g) {
  const auto c = load(g);
  const auto data = gtl::load_experiment_data(c, g.quiet);
  const auto m = gtl::run_experiment(c, data, g.quiet);
  gtl::write_run(c, m);
  if (!g.quiet) {
    for (const auto& n : m.notes) std::cout << "note: " << n << '\n';
    std::cout << gtl::summary_table(m.rows, c.breakthrough.threshold, c.breakthrough.patience);
    std::cout << "outputs in " << c.output_dir << '\n';
  }
}

void cmd_report(const Globals& g, const std::string& metrics, double threshold, std::size_t patience) {
  const fs::path dir = g.out.empty() ? fs::path(metrics).parent_path() : fs::path(g.out);
  const auto files = gtl::emit_report(metrics, dir.empty() ? fs::path(".") : dir, threshold, patience);
  if (!g.quiet) {
    std::cout << gtl::read_file(files.back());
    for (const auto& f : files) std::cout << "wrote " << f.string() << '\n';
  }
}

void cmd_inspect(const Globals& g, const std::string& path, std::size_t bins, std::optional<double> eps) {
  const auto f = gtl::read_guidance(path);
  const auto& G = f.guidance;
  const auto derived = gtl::derived_part(G);
  const auto st = gtl::guidance_stats(G);
  const double e = eps ? *eps : gtl::default_sparsity_eps(derived);
  std::cout << "network " << gtl::to_json(f.spec).dump() << '\n'
            << "stat " << gtl::to_string(G.stat_kind) << ", norm " << gtl::to_string(G.norm_kind) << ", scope "
            << gtl::to_string(G.scope) << ", scouts " << G.n_scouts << ", derived layers " << G.derived_layers
            << ", head value " << G.head_value << '\n'
            << "derived values " << st.count << ": min " << st.min << " max " << st.max << " mean " << st.mean
            << " median " << st.median << '\n'
            << "fraction below mean " << st.fraction_below_mean << '\n'
            << "fraction <= " << e << ": " << gtl::sparsity_fraction(derived, e) << '\n';
  const auto hist = gtl::guidance_histogram(derived, bins);
  for (const auto& b : hist) std::cout << "  [" << b.left_edge << ") " << b.count << '\n';
  if (!g.out.empty()) {
    const auto svg = fs::path(g.out) / "guidance_histogram.svg";
    gtl::write_file(svg, gtl::histogram_svg(hist, "guidance values (scout-derived layers)"));
    std::cout << "wrote " << svg.string() << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guided transfer learning: scouting, guidance matrices and guided fine-tuning"};
  app.require_subcommand(1, 1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Use this single seed instead of the config's list");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "Only report errors");

  auto* pretrain = app.add_subcommand("pretrain", "Build the base network (base.ckpt)")->fallthrough();

  std::string base_path;
  auto* scout = app.add_subcommand("scout", "Train a scout family from a base checkpoint")->fallthrough();
  scout->add_option("--base", base_path, "Base checkpoint (default <out>/base.ckpt)");

  GuideOptions guide_opt;
  auto* guide = app.add_subcommand("guide", "Build a guidance file from a scout family manifest")->fallthrough();
  guide->add_option("--family", guide_opt.family, "family.json written by `scout`")->required();
  guide->add_option("--stat", guide_opt.stat, "squared | absolute");
  guide->add_option("--norm", guide_opt.norm, "max | mean | forced_zero");
  guide->add_option("--scope", guide_opt.scope, "global | per_group");
  guide->add_option("--head-value", guide_opt.head_value, "Guidance for layers not covered by scouts");

  std::string guidance_path;
  auto* train = app.add_subcommand("train", "Fine-tune from a base, optionally guided")->fallthrough();
  train->add_option("--base", base_path, "Base checkpoint (default <out>/base.ckpt)");
  train->add_option("--guidance", guidance_path, "Guidance file; omit for plain fine-tuning");

  auto* experiment = app.add_subcommand("experiment", "Run a whole experiment from its config")->fallthrough();

  std::string metrics;
  double threshold = 0.9;
  std::size_t patience = 20;
  auto* report = app.add_subcommand("report", "SVG curves and a summary table from metrics.csv")->fallthrough();
  report->add_option("--metrics", metrics, "metrics.csv")->required();
  report->add_option("--threshold", threshold, "Breakthrough accuracy threshold")->check(CLI::Range(0.0, 1.0));
  report->add_option("--patience", patience, "Breakthrough patience in epochs")->check(CLI::PositiveNumber);

  std::size_t bins = 20;
  std::optional<double> eps;
  auto* inspect = app.add_subcommand("inspect", "Statistics and histogram of a guidance file")->fallthrough();
  inspect->add_option("guidance", guidance_path, "Guidance file")->required();
  inspect->add_option("--bins", bins, "Histogram bins")->check(CLI::Range(2, 10000));
  inspect->add_option("--eps", eps, "Sparsity threshold (default 1% of the maximum)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(gtl::exit_status::config);
  }

  try {
    if (pretrain->parsed()) cmd_pretrain(g);
    else if (scout->parsed()) cmd_scout(g, base_path);
    else if (guide->parsed()) cmd_guide(g, guide_opt);
    else if (train->parsed()) cmd_train(g, base_path, guidance_path);
    else if (experiment->parsed()) cmd_experiment(g);
    else if (report->parsed()) cmd_report(g, metrics, threshold, patience);
    else if (inspect->parsed()) cmd_inspect(g, guidance_path, bins, eps);
  } catch (const gtl::error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.status());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(gtl::exit_status::failure);
  }
  return 0;
}
