#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gtl/errors.hpp"
#include "gtl/nn.hpp"

namespace gtl {

enum class StatKind { squared, absolute };
enum class NormKind { max, mean, forced_zero };

// global: one normalization scalar over every value. per_group: weights and
// biases are normalized separately.
enum class NormScope { global, per_group };

inline std::string_view to_string(StatKind k) { return k == StatKind::squared ? "squared" : "absolute"; }
inline std::string_view to_string(NormKind k) {
  switch (k) {
    case NormKind::max: return "max";
    case NormKind::mean: return "mean";
    case NormKind::forced_zero: return "forced_zero";
  }
  return "?";
}
inline std::string_view to_string(NormScope s) { return s == NormScope::global ? "global" : "per_group"; }

inline std::optional<StatKind> parse_stat_kind(std::string_view s) {
  if (s == "squared") return StatKind::squared;
  if (s == "absolute") return StatKind::absolute;
  return std::nullopt;
}
inline std::optional<NormKind> parse_norm_kind(std::string_view s) {
  if (s == "max") return NormKind::max;
  if (s == "mean") return NormKind::mean;
  if (s == "forced_zero") return NormKind::forced_zero;
  return std::nullopt;
}
inline std::optional<NormScope> parse_norm_scope(std::string_view s) {
  if (s == "global") return NormScope::global;
  if (s == "per_group") return NormScope::per_group;
  return std::nullopt;
}

struct deviation_tag {};
struct guidance_tag {};

// Mean squared or mean absolute excursion of scouts from the base, per parameter.
struct DeviationStat {
  LayerStack<deviation_tag> values;
  StatKind stat_kind = StatKind::squared;
  std::size_t n_scouts = 0;
};

// Per-parameter gradient multipliers. The first `derived_layers` layers come
// from a deviation statistic; any remaining layers (a replaced output head)
// hold `head_value`.
struct GuidanceMatrix {
  LayerStack<guidance_tag> values;
  NormKind norm_kind = NormKind::max;
  StatKind stat_kind = StatKind::squared;
  NormScope scope = NormScope::global;
  std::size_t n_scouts = 0;
  std::size_t derived_layers = 0;
  double head_value = 1.0;
  std::vector<std::string> scout_tasks;

  // Same guidance with the non-derived tail resized to a new output width.
  GuidanceMatrix with_output_dim(std::size_t n_out) const {
    if (derived_layers >= values.size())
      throw shape_error("guidance covers the output layer; its width cannot change");
    GuidanceMatrix g = *this;
    auto& head = g.values.layers.back();
    head.weights = Matrix::Constant(head.weights.rows(), static_cast<Eigen::Index>(n_out), head_value);
    head.biases = RowVector::Constant(static_cast<Eigen::Index>(n_out), head_value);
    return g;
  }
};

// squared: m = (1/n) sum_i (base - scout_i)^2; absolute: m = (1/n) sum_i |base - scout_i|.
// Scouts are folded in index order.
inline DeviationStat deviation_stat(const ParamSet& base, std::span<const ParamSet> scouts, StatKind kind) {
  if (scouts.empty()) throw argument_error("deviation_stat: at least one scout is required");
  for (std::size_t i = 0; i < scouts.size(); ++i)
    require_congruent(base, scouts[i], "deviation_stat scout " + std::to_string(i));
  DeviationStat stat{filled_like<deviation_tag>(base, 0.0), kind, scouts.size()};
  auto accumulate = [kind](auto& acc, const auto& b, const auto& s) {
    if (kind == StatKind::squared)
      acc += (b - s).array().square().matrix();
    else
      acc += (b - s).array().abs().matrix();
  };
  for (const auto& scout : scouts) {
    for (std::size_t k = 0; k < base.size(); ++k) {
      accumulate(stat.values.layers[k].weights, base.layers[k].weights, scout.layers[k].weights);
      accumulate(stat.values.layers[k].biases, base.layers[k].biases, scout.layers[k].biases);
    }
  }
  const auto n = static_cast<double>(scouts.size());
  for (auto& l : stat.values.layers) {
    l.weights /= n;
    l.biases /= n;
  }
  return stat;
}

namespace detail {

struct value_summary {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  std::size_t count = 0;
};

enum class group { all, weights, biases };

template <class Tag>
value_summary summarize(const LayerStack<Tag>& s, group g) {
  value_summary out;
  double sum = 0.0;
  bool first = true;
  auto visit = [&](double v) {
    if (first) {
      out.min = out.max = v;
      first = false;
    }
    out.min = std::min(out.min, v);
    out.max = std::max(out.max, v);
    sum += v;
    ++out.count;
  };
  for (const auto& l : s.layers) {
    if (g != group::biases)
      for (Eigen::Index i = 0; i < l.weights.size(); ++i) visit(l.weights.data()[i]);
    if (g != group::weights)
      for (Eigen::Index i = 0; i < l.biases.size(); ++i) visit(l.biases[i]);
  }
  if (out.count) out.mean = sum / static_cast<double>(out.count);
  return out;
}

struct affine {
  double offset = 0.0;
  double scale = 1.0;
};

inline affine normalizer(const value_summary& s, NormKind kind, std::string_view label) {
  if (s.count == 0) throw degenerate_scouting_error(std::string(label) + ": no values to normalize");
  if (s.max <= 0.0)
    throw degenerate_scouting_error(std::string(label) + ": no scout moved any parameter (max deviation is 0)");
  switch (kind) {
    case NormKind::max:
      return {0.0, s.max};
    case NormKind::mean:
      return {0.0, s.mean};
    case NormKind::forced_zero:
      if (s.count < 2) throw argument_error(std::string(label) + ": forced_zero needs at least 2 values");
      if (s.max == s.min)
        throw degenerate_scouting_error(std::string(label) + ": all deviations equal, forced_zero is undefined");
      return {s.min, s.max - s.min};
  }
  return {};
}

}  // namespace detail

inline GuidanceMatrix normalize(const DeviationStat& stat, NormKind kind, NormScope scope = NormScope::global) {
  using detail::group;
  GuidanceMatrix g;
  g.norm_kind = kind;
  g.stat_kind = stat.stat_kind;
  g.scope = scope;
  g.n_scouts = stat.n_scouts;
  g.derived_layers = stat.values.size();

  detail::affine w_norm, b_norm;
  if (scope == NormScope::global) {
    w_norm = b_norm = detail::normalizer(detail::summarize(stat.values, group::all), kind, "normalize");
  } else {
    w_norm = detail::normalizer(detail::summarize(stat.values, group::weights), kind, "normalize weights");
    b_norm = detail::normalizer(detail::summarize(stat.values, group::biases), kind, "normalize biases");
  }
  g.values.layers.reserve(stat.values.size());
  for (const auto& l : stat.values.layers) {
    Layer<guidance_tag> out;
    out.weights = (l.weights.array() - w_norm.offset) / w_norm.scale;
    out.biases = (l.biases.array() - b_norm.offset) / b_norm.scale;
    g.values.layers.push_back(std::move(out));
  }
  return g;
}

// Hadamard product of a gradient with guidance values (also used to compose
// two guidance value stacks).
template <class Tag>
LayerStack<Tag> apply_guidance(LayerStack<Tag> grads, const LayerStack<guidance_tag>& g) {
  require_congruent(grads, g, "apply_guidance");
  for (std::size_t k = 0; k < grads.size(); ++k) {
    grads.layers[k].weights.array() *= g.layers[k].weights.array();
    grads.layers[k].biases.array() *= g.layers[k].biases.array();
  }
  return grads;
}

inline GradSet apply_guidance(GradSet grads, const GuidanceMatrix& g) {
  return apply_guidance(std::move(grads), g.values);
}

struct HistogramBin {
  double left_edge = 0.0;
  std::size_t count = 0;
};

// Equal-width bins over [0, max(g)]; bins are half-open except the last,
// which is closed.
inline std::vector<HistogramBin> guidance_histogram(const GuidanceMatrix& g, std::size_t n_bins) {
  if (n_bins < 2) throw argument_error("guidance_histogram: need at least 2 bins");
  const auto s = detail::summarize(g.values, detail::group::all);
  const double width = s.max / static_cast<double>(n_bins);
  std::vector<HistogramBin> bins(n_bins);
  for (std::size_t i = 0; i < n_bins; ++i) bins[i].left_edge = width * static_cast<double>(i);
  for_each_value(g.values, [&](double v) {
    std::size_t idx = 0;
    if (width > 0.0) {
      idx = static_cast<std::size_t>(std::clamp(std::floor(v / width), 0.0, static_cast<double>(n_bins - 1)));
      while (idx > 0 && v < bins[idx].left_edge) --idx;
      while (idx + 1 < n_bins && v >= bins[idx + 1].left_edge) ++idx;
    }
    ++bins[idx].count;
  });
  return bins;
}

// Fraction of guidance values <= eps.
inline double sparsity_fraction(const GuidanceMatrix& g, double eps) {
  if (!(eps >= 0.0)) throw argument_error("sparsity_fraction: eps must be >= 0");
  std::size_t small = 0, total = 0;
  for_each_value(g.values, [&](double v) {
    small += (v <= eps);
    ++total;
  });
  return total == 0 ? 0.0 : static_cast<double>(small) / static_cast<double>(total);
}

// Reporting threshold: 1% of the largest guidance value.
inline double default_sparsity_eps(const GuidanceMatrix& g) {
  return 0.01 * detail::summarize(g.values, detail::group::all).max;
}

// The scout-derived layers alone, without any constant head layers.
inline GuidanceMatrix derived_part(const GuidanceMatrix& g) {
  GuidanceMatrix out = g;
  out.values = g.values.prefix(g.derived_layers);
  return out;
}

struct GuidanceStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double median = 0.0;
  double fraction_below_mean = 0.0;
  std::size_t count = 0;
};

// Summary over the derived layers only (or every layer if all = true).
inline GuidanceStats guidance_stats(const GuidanceMatrix& g, bool all = false) {
  auto derived = all ? g.values : g.values.prefix(g.derived_layers);
  auto v = flatten(derived);
  GuidanceStats s;
  s.count = v.size();
  if (v.empty()) return s;
  const auto sum = detail::summarize(derived, detail::group::all);
  s.min = sum.min;
  s.max = sum.max;
  s.mean = sum.mean;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  s.fraction_below_mean =
      static_cast<double>(std::lower_bound(v.begin(), v.end(), s.mean) - v.begin()) / static_cast<double>(n);
  return s;
}

}  // namespace gtl
