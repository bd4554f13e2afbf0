// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
//
// Aggregation of run directories into merged CSVs and static SVG line charts.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "promptmix/config.hpp"
#include "promptmix/error.hpp"

namespace promptmix {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("CSV has no column \"" + name + "\"");
    return static_cast<std::size_t>(it - header.begin());
  }
};

/// Plain comma-separated values; no quoting (none of our files need it).
inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ls(s);
    while (std::getline(ls, cur, ',')) out.push_back(cur);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (t.header.empty()) {
      t.header = split(line);
      continue;
    }
    auto row = split(line);
    if (row.size() != t.header.size()) throw ParseError("CSV row has the wrong number of fields", line_no);
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw ParseError("CSV is empty");
  return t;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("write failed for " + path);
}

// ---------------------------------------------------------------------------
// SVG

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(double v, const char* spec = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace detail

/// Self-contained SVG line chart with axes, five ticks per axis and a legend.
inline std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                                  std::span<const Series> series) {
  const double W = 640, H = 420, left = 70, right = 170, top = 40, bottom = 55;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const Series& s : series) {
    for (auto [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x0 == x1) x0 -= 0.5, x1 += 0.5;
  if (y0 == y1) y0 -= 0.5, y1 += 0.5;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << detail::xml_escape(title)
    << "</text>\n"
    << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<line x1=\"" << detail::fmt(px(xv)) << "\" y1=\"" << top + ph << "\" x2=\"" << detail::fmt(px(xv))
      << "\" y2=\"" << top + ph + 5 << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << detail::fmt(px(xv)) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
      << detail::fmt(xv) << "</text>\n"
      << "<line x1=\"" << left - 5 << "\" y1=\"" << detail::fmt(py(yv)) << "\" x2=\"" << left << "\" y2=\""
      << detail::fmt(py(yv)) << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << left - 8 << "\" y=\"" << detail::fmt(py(yv) + 4) << "\" text-anchor=\"end\">"
      << detail::fmt(yv) << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
    << detail::xml_escape(x_label) << "</text>\n"
    << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << top + ph / 2 << ")\">" << detail::xml_escape(y_label) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = colors[i % 8];
    std::string pts;
    for (auto [x, y] : series[i].points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      pts += detail::fmt(px(x), "%.2f") + "," + detail::fmt(py(y), "%.2f") + " ";
    }
    if (!pts.empty()) pts.pop_back();
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << pts << "\"/>\n";
    if (series[i].points.size() <= 32) {
      for (auto [x, y] : series[i].points) {
        if (!std::isfinite(x) || !std::isfinite(y)) continue;
        o << "<circle cx=\"" << detail::fmt(px(x), "%.2f") << "\" cy=\"" << detail::fmt(py(y), "%.2f")
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
    }
    const double ly = top + 14 + 18.0 * static_cast<double>(i);
    o << "<line x1=\"" << W - right + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - right + 32 << "\" y2=\""
      << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << W - right + 38 << "\" y=\"" << ly << "\">" << detail::xml_escape(series[i].label)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Run aggregation

/// What `report` reads from one run directory: config.txt and metrics.csv are
/// required, eval.csv is optional.
struct RunRecord {
  std::string run_id;  // directory name
  TrainConfig config;
  CsvTable metrics;
  bool has_eval = false;
  CsvTable eval;
};

inline RunRecord load_run(const std::filesystem::path& dir) {
  RunRecord r;
  r.run_id = dir.filename().string();
  if (r.run_id.empty()) r.run_id = dir.parent_path().filename().string();
  const auto cfg = dir / "config.txt";
  const auto met = dir / "metrics.csv";
  if (!std::filesystem::exists(cfg) || !std::filesystem::exists(met)) {
    throw DataError(dir.string() + " is not a run directory (needs config.txt and metrics.csv)");
  }
  r.config = TrainConfig::parse(read_text_file(cfg.string()));
  r.metrics = parse_csv(read_text_file(met.string()));
  if (const auto ev = dir / "eval.csv"; std::filesystem::exists(ev)) {
    r.eval = parse_csv(read_text_file(ev.string()));
    r.has_eval = !r.eval.rows.empty();
  }
  return r;
}

struct ReportOutputs {
  std::string metrics_csv;
  std::string accuracy_csv;
  std::string loss_svg;
  std::string shots_svg;
};

/// Label shared by runs that differ only in shots and seed.
inline std::string variant_label(const TrainConfig& c) {
  return "G=" + std::to_string(c.G) + " K=" + std::to_string(c.K) + " l1=" + format_double(c.lambda1) +
         " l2=" + format_double(c.lambda2);
}

/// Pure function of the runs, sorted by run id, so reruns are byte-identical.
inline ReportOutputs build_report(std::vector<RunRecord> runs) {
  if (runs.empty()) throw InvalidInputError("report needs at least one run directory");
  std::sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) { return a.run_id < b.run_id; });
  ReportOutputs out;
  out.metrics_csv = "run_id,step,epoch,lr,cls,router,text,total\n";
  std::vector<Series> loss;
  for (const RunRecord& r : runs) {
    const std::size_t step = r.metrics.column("step");
    const std::size_t total = r.metrics.column("total");
    Series s{r.run_id, {}};
    for (const auto& row : r.metrics.rows) {
      out.metrics_csv += r.run_id;
      for (const std::string& cell : row) out.metrics_csv += "," + cell;
      out.metrics_csv += "\n";
      s.points.emplace_back(std::stod(row[step]), std::stod(row[total]));
    }
    loss.push_back(std::move(s));
  }
  out.loss_svg = svg_line_chart("Training loss", "step", "total loss", loss);

  out.accuracy_csv = "run_id,variant,shots,seed,mode,accuracy,base_accuracy,new_accuracy,harmonic\n";
  std::map<std::string, std::map<std::size_t, std::pair<double, std::size_t>>> curves;
  for (const RunRecord& r : runs) {
    if (!r.has_eval) continue;
    const auto& row = r.eval.rows.front();
    const double acc = std::stod(row[r.eval.column("accuracy")]);
    const std::string label = variant_label(r.config);
    out.accuracy_csv += r.run_id + "," + label + "," + std::to_string(r.config.shots) + "," +
                        std::to_string(r.config.seed) + "," + to_string(r.config.mode) + "," +
                        row[r.eval.column("accuracy")] + "," + row[r.eval.column("base_accuracy")] + "," +
                        row[r.eval.column("new_accuracy")] + "," + row[r.eval.column("harmonic")] + "\n";
    auto& cell = curves[label][r.config.shots];
    cell.first += acc;
    ++cell.second;
  }
  std::vector<Series> shots;
  for (const auto& [label, by_shots] : curves) {
    Series s{label, {}};
    for (const auto& [k, sum] : by_shots) {
      s.points.emplace_back(static_cast<double>(k), 100.0 * sum.first / static_cast<double>(sum.second));
    }
    shots.push_back(std::move(s));
  }
  out.shots_svg = svg_line_chart("Top-1 accuracy by shots", "shots per class", "top-1 accuracy (%)", shots);
  return out;
}

}  // namespace promptmix
