#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gtl/errors.hpp"
#include "gtl/experiments.hpp"
#include "gtl/guidance.hpp"
#include "gtl/io.hpp"

namespace gtl {

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T>
T parse_cell(std::string_view cell, std::size_t line, std::string_view column) {
  T v{};
  auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || end != cell.data() + cell.size() || cell.empty())
    throw data_error("metrics line " + std::to_string(line) + ", column " + std::string(column) + ": cannot parse \"" +
                     std::string(cell) + "\"");
  return v;
}

inline std::string fmt(double v, int decimals = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

// Parses a metrics.csv document. The header must name exactly the metrics
// columns in order; any mismatch is reported by column.
inline std::vector<MetricRow> parse_metrics_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start < text.size();) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    start = end + 1;
  }
  if (lines.empty()) throw data_error("metrics file is empty");
  const auto& cols = metrics_columns();
  const auto header = detail::split_csv_line(lines.front());
  for (std::size_t i = 0; i < std::max(header.size(), cols.size()); ++i) {
    if (i >= header.size()) throw data_error("metrics header: missing column " + std::to_string(i + 1) + " (" + cols[i] + ")");
    if (i >= cols.size())
      throw data_error("metrics header: unexpected column " + std::to_string(i + 1) + " (" + std::string(header[i]) + ")");
    if (header[i] != cols[i])
      throw data_error("metrics header: column " + std::to_string(i + 1) + " is \"" + std::string(header[i]) +
                       "\", expected \"" + cols[i] + "\"");
  }
  if (lines.size() == 1) throw data_error("metrics file has a header but no rows");
  std::vector<MetricRow> rows;
  rows.reserve(lines.size() - 1);
  for (std::size_t n = 1; n < lines.size(); ++n) {
    const auto cells = detail::split_csv_line(lines[n]);
    if (cells.size() != cols.size())
      throw data_error("metrics line " + std::to_string(n + 1) + ": expected " + std::to_string(cols.size()) +
                       " columns, found " + std::to_string(cells.size()));
    MetricRow r;
    r.run_id = cells[0];
    r.experiment = cells[1];
    r.seed = detail::parse_cell<std::uint64_t>(cells[2], n + 1, cols[2]);
    r.condition = cells[3];
    r.block = detail::parse_cell<std::size_t>(cells[4], n + 1, cols[4]);
    r.epoch = detail::parse_cell<std::size_t>(cells[5], n + 1, cols[5]);
    r.train_loss = detail::parse_cell<double>(cells[6], n + 1, cols[6]);
    r.train_acc = detail::parse_cell<double>(cells[7], n + 1, cols[7]);
    r.test_acc = detail::parse_cell<double>(cells[8], n + 1, cols[8]);
    r.changed_param_fraction = detail::parse_cell<double>(cells[9], n + 1, cols[9]);
    for (auto [v, c] : {std::pair{r.train_acc, 7}, {r.test_acc, 8}, {r.changed_param_fraction, 9}})
      if (!(v >= 0.0 && v <= 1.0))
        throw data_error("metrics line " + std::to_string(n + 1) + ", column " + cols[c] + ": " +
                         std::to_string(v) + " is outside [0, 1]");
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<MetricRow> read_metrics(const std::filesystem::path& path) {
  return parse_metrics_csv(read_file(path));
}

// Rows of one run in file order, keyed by run_id in first-seen order.
struct RunCurve {
  std::string run_id;
  std::string condition;
  std::uint64_t seed = 0;
  std::vector<const MetricRow*> rows;
};

inline std::vector<RunCurve> group_runs(const std::vector<MetricRow>& rows) {
  std::vector<RunCurve> runs;
  std::map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    auto [it, fresh] = index.emplace(r.run_id, runs.size());
    if (fresh) runs.push_back({r.run_id, r.condition, r.seed, {}});
    runs[it->second].rows.push_back(&r);
  }
  return runs;
}

inline bool is_guided(std::string_view condition) { return condition == guided_condition; }

// Accuracy against cumulative epoch, one polyline per run. Guided runs are
// solid green, baseline runs dashed gray.
inline std::string curves_svg(std::string_view experiment, const std::vector<MetricRow>& rows) {
  const auto runs = group_runs(rows);
  std::size_t max_x = 1;
  for (const auto& r : runs) max_x = std::max(max_x, r.rows.size());
  const double w = 720, h = 420, left = 60, right = 20, top = 40, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  auto px = [&](double x) { return left + pw * (x / static_cast<double>(max_x)); };
  auto py = [&](double y) { return top + ph * (1.0 - y); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  s << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << detail::xml_escape(experiment)
    << ": accuracy per epoch</text>\n";
  // axes and grid
  s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = i / 5.0;
    s << "<line x1=\"" << left << "\" y1=\"" << detail::fmt(py(y)) << "\" x2=\"" << left + pw << "\" y2=\""
      << detail::fmt(py(y)) << "\" stroke=\"#e0e0e0\"/>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << detail::fmt(py(y) + 4) << "\" text-anchor=\"end\">"
      << detail::fmt(y, 1) << "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double x = static_cast<double>(max_x) * i / 5.0;
    s << "<text x=\"" << detail::fmt(px(x)) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
      << detail::fmt(x, 0) << "</text>\n";
  }
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">epoch</text>\n";
  s << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << top + ph / 2 << ")\">accuracy</text>\n";
  // baseline first so guided curves stay on top
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& r : runs) {
      if (is_guided(r.condition) != (pass == 1)) continue;
      s << "<polyline fill=\"none\" stroke-width=\"1.5\" "
        << (is_guided(r.condition) ? "stroke=\"#2e8b57\"" : "stroke=\"#888888\" stroke-dasharray=\"6,4\"")
        << " data-run=\"" << detail::xml_escape(r.run_id) << "\" points=\"";
      for (std::size_t i = 0; i < r.rows.size(); ++i)
        s << (i ? " " : "") << detail::fmt(px(static_cast<double>(i + 1))) << ','
          << detail::fmt(py(r.rows[i]->test_acc));
      s << "\"/>\n";
    }
  }
  // legend
  const double lx = left + pw - 150, ly = top + ph - 40;
  s << "<line x1=\"" << lx << "\" y1=\"" << ly << "\" x2=\"" << lx + 30 << "\" y2=\"" << ly
    << "\" stroke=\"#2e8b57\" stroke-width=\"2\"/>\n";
  s << "<text x=\"" << lx + 36 << "\" y=\"" << ly + 4 << "\">guided</text>\n";
  s << "<line x1=\"" << lx << "\" y1=\"" << ly + 18 << "\" x2=\"" << lx + 30 << "\" y2=\"" << ly + 18
    << "\" stroke=\"#888888\" stroke-width=\"2\" stroke-dasharray=\"6,4\"/>\n";
  s << "<text x=\"" << lx + 36 << "\" y=\"" << ly + 22 << "\">baseline</text>\n";
  s << "</svg>\n";
  return s.str();
}

inline std::string histogram_svg(const std::vector<HistogramBin>& bins, std::string_view title) {
  if (bins.empty()) throw argument_error("histogram_svg: no bins");
  std::size_t peak = 1;
  for (const auto& b : bins) peak = std::max(peak, b.count);
  const double w = 640, h = 380, left = 60, right = 20, top = 40, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  const double bw = pw / static_cast<double>(bins.size());
  const double width = bins.size() > 1 ? bins[1].left_edge - bins[0].left_edge : 0.0;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  s << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << detail::xml_escape(title)
    << "</text>\n";
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const double bh = ph * static_cast<double>(bins[i].count) / static_cast<double>(peak);
    s << "<rect x=\"" << detail::fmt(left + bw * i) << "\" y=\"" << detail::fmt(top + ph - bh) << "\" width=\""
      << detail::fmt(bw * 0.9) << "\" height=\"" << detail::fmt(bh) << "\" fill=\"#2e8b57\"><title>["
      << detail::fmt(bins[i].left_edge, 4) << ", " << detail::fmt(bins[i].left_edge + width, 4)
      << "): " << bins[i].count << "</title></rect>\n";
  }
  s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << left << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
    << detail::fmt(bins.front().left_edge, 3) << "</text>\n";
  s << "<text x=\"" << left + pw << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
    << detail::fmt(bins.back().left_edge + width, 3) << "</text>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">guidance value</text>\n";
  s << "<text x=\"" << left - 6 << "\" y=\"" << top + 4 << "\" text-anchor=\"end\">" << peak << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

// Plain-text table: per experiment and condition, run count, median final
// accuracy, median changed fraction and, for the breakthrough experiment,
// breakthrough statistics on the training-accuracy curves.
inline std::string summary_table(const std::vector<MetricRow>& rows, double threshold = 0.9, std::size_t patience = 20) {
  std::map<std::string, std::vector<MetricRow>> by_experiment;
  for (const auto& r : rows) by_experiment[r.experiment].push_back(r);
  std::ostringstream s;
  char line[256];
  for (const auto& [experiment, exp_rows] : by_experiment) {
    const auto runs = group_runs(exp_rows);
    std::size_t cap = 0;
    for (const auto& r : runs) cap = std::max(cap, r.rows.size());
    s << "experiment " << experiment << '\n';
    std::snprintf(line, sizeof line, "  %-10s %5s %12s %12s %14s %9s\n", "condition", "runs", "median_acc",
                  "med_changed", "med_breakthru", "censored");
    s << line;
    std::vector<std::string> conditions;
    for (const auto& r : runs)
      if (std::find(conditions.begin(), conditions.end(), r.condition) == conditions.end())
        conditions.push_back(r.condition);
    for (const auto& cond : conditions) {
      std::vector<double> acc, changed;
      std::vector<std::optional<std::size_t>> bt;
      std::size_t censored = 0;
      for (const auto& r : runs) {
        if (r.condition != cond) continue;
        acc.push_back(r.rows.back()->test_acc);
        changed.push_back(r.rows.back()->changed_param_fraction);
        std::vector<double> curve;
        for (const auto* row : r.rows) curve.push_back(row->train_acc);
        auto e = detect_breakthrough(curve, threshold, patience);
        bt.push_back(e ? std::optional<std::size_t>(*e + 1) : std::nullopt);
        censored += !e;
      }
      std::string med_s = "-", censored_s = "-";
      if (experiment == to_string(ExperimentKind::breakthrough)) {
        const auto med = censored_median(bt, cap);
        med_s = med.is_string() ? med.get<std::string>() : detail::fmt(med.get<double>(), 1);
        censored_s = std::to_string(censored);
      }
      std::snprintf(line, sizeof line, "  %-10s %5zu %12.4f %12.4f %14s %9s\n", cond.c_str(), acc.size(),
                    median(acc), median(changed), med_s.c_str(), censored_s.c_str());
      s << line;
    }
  }
  return s.str();
}

// Reads metrics, then writes <experiment>.svg for each experiment and
// summary.txt. Nothing is written unless the whole file parses.
inline std::vector<std::filesystem::path> emit_report(const std::filesystem::path& metrics_path,
                                                      const std::filesystem::path& out_dir, double threshold = 0.9,
                                                      std::size_t patience = 20) {
  const auto rows = read_metrics(metrics_path);
  std::map<std::string, std::vector<MetricRow>> by_experiment;
  for (const auto& r : rows) by_experiment[r.experiment].push_back(r);
  std::vector<std::pair<std::filesystem::path, std::string>> files;
  for (const auto& [experiment, exp_rows] : by_experiment) {
    if (experiment.empty() || experiment.find_first_of("/\\") != std::string::npos)
      throw data_error("metrics: experiment name \"" + experiment + "\" is not usable as a file name");
    files.emplace_back(out_dir / (experiment + ".svg"), curves_svg(experiment, exp_rows));
  }
  files.emplace_back(out_dir / "summary.txt", summary_table(rows, threshold, patience));
  std::vector<std::filesystem::path> written;
  for (const auto& [path, text] : files) {
    write_file(path, text);
    written.push_back(path);
  }
  return written;
}

}  // namespace gtl
