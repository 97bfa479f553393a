#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "popbench/analysis.hpp"
#include "popbench/csv.hpp"
#include "popbench/evaluation.hpp"
#include "popbench/stats.hpp"
#include "popbench/util.hpp"

namespace popbench {

// ---------------------------------------------------------------------------
// CSV emitters and readers (17 significant digits throughout)

inline void write_metrics_csv(const std::vector<MetricRecord>& records, const std::string& path) {
  CsvWriter out(path);
  out.row({"iteration", "country", "model", "family", "r2", "kl", "n_val", "train_unit_frac",
           "train_pop_frac"});
  for (const auto& r : records) {
    out.row({std::to_string(r.iteration), r.country_tag, r.model_kind, r.family, fmt_g17(r.r2),
             fmt_g17(r.kl), std::to_string(r.n_val), fmt_g17(r.train_unit_frac),
             fmt_g17(r.train_pop_frac)});
  }
  out.close();
}

inline std::vector<MetricRecord> read_metrics_csv(const std::string& path) {
  CsvTable csv = read_csv(path);
  const std::vector<std::string> expected{"iteration", "country", "model",          "family",
                                          "r2",        "kl",      "n_val",          "train_unit_frac",
                                          "train_pop_frac"};
  if (csv.header != expected) throw std::runtime_error(path + ": unexpected metrics header");
  std::vector<MetricRecord> records;
  for (const auto& row : csv.rows) {
    MetricRecord r;
    r.iteration = static_cast<int>(parse_double(row[0], path));
    r.country_tag = row[1];
    r.model_kind = row[2];
    r.family = row[3];
    r.r2 = parse_double(row[4], path);
    r.kl = parse_double(row[5], path);
    r.n_val = static_cast<std::size_t>(parse_double(row[6], path));
    r.train_unit_frac = parse_double(row[7], path);
    r.train_pop_frac = parse_double(row[8], path);
    records.push_back(std::move(r));
  }
  return records;
}

inline void write_importance_csv(const ImportanceTable& table, const std::string& path) {
  CsvWriter out(path);
  out.row({"family", "feature", "country", "model", "iteration", "delta_r2"});
  for (const auto& r : table.records) {
    out.row({r.family, r.feature, r.country, r.model, std::to_string(r.iteration),
             fmt_g17(r.delta_r2)});
  }
  out.close();
}

inline ImportanceTable read_importance_csv(const std::string& path) {
  CsvTable csv = read_csv(path);
  const std::vector<std::string> expected{"family", "feature", "country",
                                          "model",  "iteration", "delta_r2"};
  if (csv.header != expected) throw std::runtime_error(path + ": unexpected importance header");
  ImportanceTable table;
  for (const auto& row : csv.rows) {
    ImportanceRecord r;
    r.family = row[0];
    r.feature = row[1];
    r.country = row[2];
    r.model = row[3];
    r.iteration = static_cast<int>(parse_double(row[4], path));
    r.delta_r2 = parse_double(row[5], path);
    table.records.push_back(std::move(r));
  }
  return table;
}

inline void write_ablation_csv(const AblationGrid& grid, const std::string& path) {
  CsvWriter out(path);
  out.row({"combo", "varied_family", "feature_count", "iteration", "r2", "kl"});
  for (const auto& r : grid.records) {
    out.row({r.combo, r.varied_family, std::to_string(r.feature_count),
             std::to_string(r.iteration), fmt_g17(r.r2), fmt_g17(r.kl)});
  }
  out.close();
}

inline AblationGrid read_ablation_csv(const std::string& path) {
  CsvTable csv = read_csv(path);
  const std::vector<std::string> expected{"combo", "varied_family", "feature_count",
                                          "iteration", "r2", "kl"};
  if (csv.header != expected) throw std::runtime_error(path + ": unexpected ablation header");
  AblationGrid grid;
  for (const auto& row : csv.rows) {
    AblationRecord r;
    r.combo = row[0];
    r.varied_family = row[1];
    r.feature_count = static_cast<std::size_t>(parse_double(row[2], path));
    r.iteration = static_cast<int>(parse_double(row[3], path));
    r.r2 = parse_double(row[4], path);
    r.kl = parse_double(row[5], path);
    grid.records.push_back(std::move(r));
  }
  return grid;
}

inline void write_transfer_csv(const std::vector<TransferRecord>& records,
                               const std::string& path) {
  CsvWriter out(path);
  out.row({"country", "region", "delta_r2", "delta_kl", "area_km2", "pop_density", "night_lights",
           "built_fraction", "built_volume", "building_density", "road_accessibility",
           "pdfm_density"});
  for (const auto& r : records) {
    std::vector<std::string> row{r.country, r.region_id, fmt_g17(r.delta_r2), fmt_g17(r.delta_kl)};
    if (r.descriptors) {
      const RegionDescriptors& d = *r.descriptors;
      row.push_back(fmt_g17(d.area_km2));
      row.push_back(fmt_g17(d.pop_density));
      row.push_back(fmt_g17(d.night_lights_mean));
      row.push_back(fmt_g17(d.built_fraction_mean));
      row.push_back(fmt_g17(d.built_volume_mean));
      row.push_back(fmt_g17(d.building_density_mean));
      row.push_back(fmt_g17(d.road_accessibility));
      row.push_back(d.pdfm_density ? fmt_g17(*d.pdfm_density) : "");
    } else {
      for (int i = 0; i < 8; ++i) row.push_back("");
    }
    out.row(row);
  }
  out.close();
}

inline std::vector<TransferRecord> read_transfer_csv(const std::string& path) {
  CsvTable csv = read_csv(path);
  const std::vector<std::string> expected{
      "country",       "region",       "delta_r2",         "delta_kl",
      "area_km2",      "pop_density",  "night_lights",     "built_fraction",
      "built_volume",  "building_density", "road_accessibility", "pdfm_density"};
  if (csv.header != expected) throw std::runtime_error(path + ": unexpected transfer header");
  std::vector<TransferRecord> records;
  for (const auto& row : csv.rows) {
    TransferRecord r;
    r.country = row[0];
    r.region_id = row[1];
    r.delta_r2 = parse_double(row[2], path);
    r.delta_kl = parse_double(row[3], path);
    if (!row[4].empty()) {
      RegionDescriptors d;
      d.area_km2 = parse_double(row[4], path);
      d.pop_density = parse_double(row[5], path);
      d.night_lights_mean = parse_double(row[6], path);
      d.built_fraction_mean = parse_double(row[7], path);
      d.built_volume_mean = parse_double(row[8], path);
      d.building_density_mean = parse_double(row[9], path);
      d.road_accessibility = parse_double(row[10], path);
      if (!row[11].empty()) d.pdfm_density = parse_double(row[11], path);
      r.descriptors = d;
    }
    records.push_back(std::move(r));
  }
  return records;
}

struct OlsRow {
  std::string scope;
  std::string metric;
  std::string variable;
  OlsFit fit;
};

inline void write_ols_csv(const std::vector<OlsRow>& rows, const std::string& path) {
  CsvWriter out(path);
  out.row({"scope", "metric", "variable", "estimate", "ci_low", "ci_high", "std_error",
           "p_value"});
  for (const auto& r : rows) {
    out.row({r.scope, r.metric, r.variable, fmt_g17(r.fit.estimate), fmt_g17(r.fit.ci_low),
             fmt_g17(r.fit.ci_high), fmt_g17(r.fit.std_error), fmt_g17(r.fit.p_value)});
  }
  out.close();
}

inline void write_sensitivity_csv(const SensitivityResult& result, const std::string& path) {
  CsvWriter out(path);
  out.row({"fold", "country", "region", "n_val", "r2_embeddings", "kl_embeddings",
           "r2_covariates", "kl_covariates", "delta_r2", "delta_kl"});
  int fold = 0;
  for (const auto& r : result.transfers) {
    out.row({std::to_string(fold++), r.country, r.region_id, std::to_string(r.n_val),
             fmt_g17(r.r2_embeddings), fmt_g17(r.kl_embeddings), fmt_g17(r.r2_covariates),
             fmt_g17(r.kl_covariates), fmt_g17(r.delta_r2), fmt_g17(r.delta_kl)});
  }
  out.close();
}

inline SensitivityResult read_sensitivity_csv(const std::string& path) {
  CsvTable csv = read_csv(path);
  const std::vector<std::string> expected{"fold",          "country",       "region",
                                          "n_val",         "r2_embeddings", "kl_embeddings",
                                          "r2_covariates", "kl_covariates", "delta_r2",
                                          "delta_kl"};
  if (csv.header != expected) throw std::runtime_error(path + ": unexpected sensitivity header");
  SensitivityResult result;
  for (const auto& row : csv.rows) {
    TransferRecord r;
    r.country = row[1];
    r.region_id = row[2];
    r.n_val = static_cast<std::size_t>(parse_double(row[3], path));
    r.r2_embeddings = parse_double(row[4], path);
    r.kl_embeddings = parse_double(row[5], path);
    r.r2_covariates = parse_double(row[6], path);
    r.kl_covariates = parse_double(row[7], path);
    r.delta_r2 = parse_double(row[8], path);
    r.delta_kl = parse_double(row[9], path);
    result.transfers.push_back(std::move(r));
  }
  return result;
}

// ---------------------------------------------------------------------------
// OLS table over transfer records

inline std::vector<OlsRow> transfer_ols_rows(const std::vector<TransferRecord>& records) {
  struct Variable {
    std::string name;
    std::function<std::optional<double>(const RegionDescriptors&)> get;
  };
  const std::vector<Variable> variables{
      {"area_km2", [](const RegionDescriptors& d) { return std::optional<double>(d.area_km2); }},
      {"pop_density",
       [](const RegionDescriptors& d) { return std::optional<double>(d.pop_density); }},
      {"night_lights",
       [](const RegionDescriptors& d) { return std::optional<double>(d.night_lights_mean); }},
      {"built_fraction",
       [](const RegionDescriptors& d) { return std::optional<double>(d.built_fraction_mean); }},
      {"built_volume",
       [](const RegionDescriptors& d) { return std::optional<double>(d.built_volume_mean); }},
      {"building_density",
       [](const RegionDescriptors& d) { return std::optional<double>(d.building_density_mean); }},
      {"road_accessibility",
       [](const RegionDescriptors& d) { return std::optional<double>(d.road_accessibility); }},
      {"pdfm_density", [](const RegionDescriptors& d) { return d.pdfm_density; }}};

  std::vector<std::string> scopes{"pooled"};
  {
    std::set<std::string> countries;
    for (const auto& r : records) countries.insert(r.country);
    scopes.insert(scopes.end(), countries.begin(), countries.end());
  }

  std::vector<OlsRow> rows;
  for (const auto& scope : scopes) {
    for (const std::string metric : {"delta_r2", "delta_kl"}) {
      for (const auto& variable : variables) {
        std::vector<double> x, y;
        for (const auto& r : records) {
          if (scope != "pooled" && r.country != scope) continue;
          if (!r.descriptors) continue;
          std::optional<double> value = variable.get(*r.descriptors);
          if (!value) continue;
          x.push_back(*value);
          y.push_back(metric == std::string("delta_r2") ? r.delta_r2 : r.delta_kl);
        }
        if (x.size() < 3) continue;
        try {
          OlsRow row{scope, metric, variable.name, ols_univariate(x, y)};
          rows.push_back(std::move(row));
        } catch (const std::invalid_argument&) {
          // zero-variance descriptor in this scope: no regression to report
        }
      }
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// summary.json: median and IQR per (country, model, family, metric)

inline nlohmann::json metric_summary_json(const std::vector<MetricRecord>& records) {
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<const MetricRecord*>>>>
      grouped;
  for (const auto& r : records) grouped[r.country_tag][r.model_kind][r.family].push_back(&r);
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [country, by_model] : grouped) {
    for (const auto& [model, by_family] : by_model) {
      for (const auto& [family, cell] : by_family) {
        for (const std::string metric : {"r2", "kl"}) {
          std::vector<double> values;
          for (const MetricRecord* r : cell) {
            values.push_back(metric == std::string("r2") ? r->r2 : r->kl);
          }
          SummaryStats s = summarize(values);
          out[country][model][family][metric] = {{"median", s.median},
                                                 {"iqr_low", s.q25},
                                                 {"iqr_high", s.q75},
                                                 {"n", values.size()}};
        }
      }
    }
  }
  return out;
}

// Rebuilds summary.json from whichever metric-shaped CSVs exist in out_dir.
inline void rebuild_summary_json(const std::string& out_dir) {
  namespace fs = std::filesystem;
  nlohmann::json doc = nlohmann::json::object();
  fs::path metrics_path = fs::path(out_dir) / "metrics.csv";
  if (fs::exists(metrics_path)) {
    doc["benchmark"] = metric_summary_json(read_metrics_csv(metrics_path.string()));
  }
  fs::path sensitivity_path = fs::path(out_dir) / "sensitivity.csv";
  if (fs::exists(sensitivity_path)) {
    SensitivityResult res = read_sensitivity_csv(sensitivity_path.string());
    std::vector<MetricRecord> records;
    int fold = 0;
    for (const auto& t : res.transfers) {
      for (FeatureFamily family : {FeatureFamily::kEmbeddings, FeatureFamily::kCovariates}) {
        MetricRecord m;
        m.iteration = fold;
        m.country_tag = t.country;
        m.model_kind = "random_forest";
        m.family = family_name(family);
        m.r2 = family == FeatureFamily::kEmbeddings ? t.r2_embeddings : t.r2_covariates;
        m.kl = family == FeatureFamily::kEmbeddings ? t.kl_embeddings : t.kl_covariates;
        m.n_val = t.n_val;
        records.push_back(m);
      }
      ++fold;
    }
    if (!records.empty()) doc["sensitivity"] = metric_summary_json(records);
  }
  if (doc.empty()) throw std::runtime_error("no experiment results found in " + out_dir);
  fs::path out_path = fs::path(out_dir) / "summary.json";
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + out_path.string());
  out << doc.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed for " + out_path.string());
}

// ---------------------------------------------------------------------------
// SVG charts (static summaries; CSVs remain the product)

namespace detail {

inline std::string xml_escape(const std::string& s) {
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

inline std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

inline const std::vector<std::string>& chart_palette() {
  static const std::vector<std::string> palette{"#4878a8", "#e49444", "#5aa469",
                                                "#d1605e", "#857aab", "#8d7a66"};
  return palette;
}

struct ChartFrame {
  double width = 860, height = 460;
  double left = 70, right = 30, top = 50, bottom = 90;
  double y_min = 0, y_max = 1;

  double plot_width() const { return width - left - right; }
  double plot_height() const { return height - top - bottom; }
  double y_px(double v) const {
    double t = (v - y_min) / (y_max - y_min);
    return top + (1.0 - t) * plot_height();
  }
};

inline void chart_open(std::ostringstream& svg, ChartFrame& frame, const std::string& title,
                       const std::string& y_label, double lo, double hi) {
  double pad = (hi - lo) * 0.08;
  if (pad <= 0.0) pad = std::max(std::abs(hi) * 0.1, 0.5);
  frame.y_min = lo - pad;
  frame.y_max = hi + pad;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << frame.width << "\" height=\""
      << frame.height << "\" viewBox=\"0 0 " << frame.width << " " << frame.height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << frame.width / 2 << "\" y=\"28\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"17\" fill=\"#222\">" << xml_escape(title)
      << "</text>\n";
  // y axis with 5 ticks
  for (int t = 0; t <= 4; ++t) {
    double v = frame.y_min + (frame.y_max - frame.y_min) * t / 4.0;
    double y = frame.y_px(v);
    svg << "<line x1=\"" << frame.left << "\" y1=\"" << y << "\" x2=\""
        << frame.width - frame.right << "\" y2=\"" << y
        << "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
    svg << "<text x=\"" << frame.left - 8 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#444\">"
        << fmt_tick(v) << "</text>\n";
  }
  svg << "<text transform=\"translate(16," << frame.top + frame.plot_height() / 2
      << ") rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
      << "fill=\"#222\">" << xml_escape(y_label) << "</text>\n";
  svg << "<line x1=\"" << frame.left << "\" y1=\"" << frame.top << "\" x2=\"" << frame.left
      << "\" y2=\"" << frame.top + frame.plot_height()
      << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
  svg << "<line x1=\"" << frame.left << "\" y1=\"" << frame.top + frame.plot_height() << "\" x2=\""
      << frame.width - frame.right << "\" y2=\"" << frame.top + frame.plot_height()
      << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
}

inline void chart_close(std::ostringstream& svg, const std::string& path) {
  svg << "</svg>\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << svg.str();
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace detail

struct BoxSeries {
  std::string label;
  std::vector<double> values;
};

inline void write_box_chart(const std::string& path, const std::string& title,
                            const std::string& y_label, const std::vector<BoxSeries>& series) {
  if (series.empty()) throw std::invalid_argument("write_box_chart: no series");
  double lo = 0, hi = 0;
  bool first = true;
  for (const auto& s : series) {
    if (s.values.empty()) throw std::invalid_argument("write_box_chart: empty series " + s.label);
    for (double v : s.values) {
      if (first) {
        lo = hi = v;
        first = false;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  std::ostringstream svg;
  detail::ChartFrame frame;
  detail::chart_open(svg, frame, title, y_label, lo, hi);

  double slot = frame.plot_width() / static_cast<double>(series.size());
  double box_w = std::min(44.0, slot * 0.5);
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::vector<double> values = series[i].values;
    SummaryStats s = summarize(values);
    std::sort(values.begin(), values.end());
    double v_min = values.front(), v_max = values.back();
    double cx = frame.left + slot * (static_cast<double>(i) + 0.5);
    const std::string& color = detail::chart_palette()[i % detail::chart_palette().size()];

    svg << "<line x1=\"" << cx << "\" y1=\"" << frame.y_px(v_min) << "\" x2=\"" << cx
        << "\" y2=\"" << frame.y_px(v_max) << "\" stroke=\"#555\" stroke-width=\"1\"/>\n";
    for (double w : {v_min, v_max}) {
      svg << "<line x1=\"" << cx - box_w / 4 << "\" y1=\"" << frame.y_px(w) << "\" x2=\""
          << cx + box_w / 4 << "\" y2=\"" << frame.y_px(w)
          << "\" stroke=\"#555\" stroke-width=\"1\"/>\n";
    }
    double y_q3 = frame.y_px(s.q75), y_q1 = frame.y_px(s.q25);
    svg << "<rect x=\"" << cx - box_w / 2 << "\" y=\"" << y_q3 << "\" width=\"" << box_w
        << "\" height=\"" << std::max(y_q1 - y_q3, 1.0) << "\" fill=\"" << color
        << "\" fill-opacity=\"0.55\" stroke=\"#333\" stroke-width=\"1\"/>\n";
    svg << "<line x1=\"" << cx - box_w / 2 << "\" y1=\"" << frame.y_px(s.median) << "\" x2=\""
        << cx + box_w / 2 << "\" y2=\"" << frame.y_px(s.median)
        << "\" stroke=\"#111\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << cx << "\" y=\"" << frame.top + frame.plot_height() + 16
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\" "
        << "transform=\"rotate(-30 " << cx << " " << frame.top + frame.plot_height() + 16
        << ")\">" << detail::xml_escape(series[i].label) << "</text>\n";
  }
  detail::chart_close(svg, path);
}

struct LineSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // sorted by x
};

inline void write_line_chart(const std::string& path, const std::string& title,
                             const std::string& x_label, const std::string& y_label,
                             const std::vector<LineSeries>& series) {
  if (series.empty()) throw std::invalid_argument("write_line_chart: no series");
  double lo = 0, hi = 0, x_lo = 0, x_hi = 1;
  bool first = true;
  for (const auto& s : series) {
    if (s.points.empty()) throw std::invalid_argument("write_line_chart: empty series " + s.label);
    for (const auto& [x, y] : s.points) {
      if (first) {
        lo = hi = y;
        x_lo = x_hi = x;
        first = false;
      }
      lo = std::min(lo, y);
      hi = std::max(hi, y);
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
    }
  }
  if (x_hi <= x_lo) x_hi = x_lo + 1.0;

  std::ostringstream svg;
  detail::ChartFrame frame;
  detail::chart_open(svg, frame, title, y_label, lo, hi);
  auto x_px = [&](double x) {
    return frame.left + (x - x_lo) / (x_hi - x_lo) * frame.plot_width();
  };
  for (int t = 0; t <= 4; ++t) {
    double v = x_lo + (x_hi - x_lo) * t / 4.0;
    svg << "<text x=\"" << x_px(v) << "\" y=\"" << frame.top + frame.plot_height() + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#444\">"
        << detail::fmt_tick(v) << "</text>\n";
  }
  svg << "<text x=\"" << frame.left + frame.plot_width() / 2 << "\" y=\""
      << frame.height - 44 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"13\" fill=\"#222\">" << detail::xml_escape(x_label) << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::string& color = detail::chart_palette()[i % detail::chart_palette().size()];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : series[i].points) svg << x_px(x) << "," << frame.y_px(y) << " ";
    svg << "\"/>\n";
    for (const auto& [x, y] : series[i].points) {
      svg << "<circle cx=\"" << x_px(x) << "\" cy=\"" << frame.y_px(y) << "\" r=\"3\" fill=\""
          << color << "\"/>\n";
    }
    double ly = frame.height - 26 + 0.0;
    double lx = frame.left + 160.0 * static_cast<double>(i % 4);
    if (i >= 4) ly += 14.0;
    svg << "<rect x=\"" << lx << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\""
        << color << "\"/>\n";
    svg << "<text x=\"" << lx + 14 << "\" y=\"" << ly
        << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">"
        << detail::xml_escape(series[i].label) << "</text>\n";
  }
  detail::chart_close(svg, path);
}

// Rebuilds every chart derivable from the CSVs present in out_dir.
inline void rebuild_charts(const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::path charts = fs::path(out_dir) / "charts";
  fs::create_directories(charts);

  fs::path metrics_path = fs::path(out_dir) / "metrics.csv";
  if (fs::exists(metrics_path)) {
    std::vector<MetricRecord> records = read_metrics_csv(metrics_path.string());
    std::set<std::string> countries;
    for (const auto& r : records) countries.insert(r.country_tag);
    for (const auto& country : countries) {
      for (const std::string metric : {"r2", "kl"}) {
        std::map<std::string, BoxSeries> by_cell;
        for (const auto& r : records) {
          if (r.country_tag != country) continue;
          std::string label = r.model_kind + " / " + r.family;
          by_cell[label].label = label;
          by_cell[label].values.push_back(metric == std::string("r2") ? r.r2 : r.kl);
        }
        std::vector<BoxSeries> series;
        for (auto& [label, s] : by_cell) series.push_back(std::move(s));
        std::string name = "benchmark_" + metric + "_" + country + ".svg";
        write_box_chart((charts / name).string(),
                        "Benchmark " + metric + " — " + country, metric, series);
      }
    }
  }

  fs::path importance_path = fs::path(out_dir) / "importance.csv";
  if (fs::exists(importance_path)) {
    ImportanceTable table = read_importance_csv(importance_path.string());
    std::set<std::pair<std::string, std::string>> scopes;  // (country, family)
    for (const auto& r : table.records) scopes.insert({r.country, r.family});
    for (const auto& [country, family] : scopes) {
      std::map<std::string, std::vector<double>> per_feature;
      for (const auto& r : table.records) {
        if (r.country == country && r.family == family) per_feature[r.feature].push_back(r.delta_r2);
      }
      std::vector<std::pair<double, std::string>> ranked;
      for (auto& [feature, values] : per_feature) {
        std::vector<double> copy = values;
        ranked.emplace_back(median(copy), feature);
      }
      std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      std::vector<BoxSeries> series;
      for (std::size_t i = 0; i < ranked.size() && i < 10; ++i) {
        series.push_back({ranked[i].second, per_feature.at(ranked[i].second)});
      }
      std::string name = "importance_" + family + "_" + country + ".svg";
      write_box_chart((charts / name).string(),
                      "Permutation importance — " + family + " — " + country, "delta R2", series);
    }
  }

  fs::path ablation_path = fs::path(out_dir) / "ablation.csv";
  if (fs::exists(ablation_path)) {
    AblationGrid grid = read_ablation_csv(ablation_path.string());
    std::map<std::string, std::map<std::size_t, std::vector<double>>> curves;
    for (const auto& r : grid.records) curves[r.combo][r.feature_count].push_back(r.r2);
    std::vector<LineSeries> series;
    for (auto& [combo, by_count] : curves) {
      LineSeries s;
      s.label = combo;
      for (auto& [count, values] : by_count) {
        std::vector<double> copy = values;
        s.points.emplace_back(static_cast<double>(count), median(copy));
      }
      series.push_back(std::move(s));
    }
    write_line_chart((charts / "ablation_r2.svg").string(), "Feature-count ablation (median R2)",
                     "features added", "median R2", series);
  }

  fs::path transfer_path = fs::path(out_dir) / "transfer.csv";
  if (fs::exists(transfer_path)) {
    std::vector<TransferRecord> records = read_transfer_csv(transfer_path.string());
    for (const std::string metric : {"delta_r2", "delta_kl"}) {
      std::map<std::string, BoxSeries> by_country;
      for (const auto& r : records) {
        by_country[r.country].label = r.country;
        by_country[r.country].values.push_back(metric == std::string("delta_r2") ? r.delta_r2
                                                                                  : r.delta_kl);
      }
      std::vector<BoxSeries> series;
      for (auto& [country, s] : by_country) series.push_back(std::move(s));
      write_box_chart((charts / ("transfer_" + metric + ".svg")).string(),
                      "Transferability " + metric + " by country", metric, series);
    }
  }

  fs::path sensitivity_path = fs::path(out_dir) / "sensitivity.csv";
  if (fs::exists(sensitivity_path)) {
    SensitivityResult res = read_sensitivity_csv(sensitivity_path.string());
    for (const std::string metric : {"r2", "kl"}) {
      std::vector<BoxSeries> series(2);
      series[0].label = "embeddings";
      series[1].label = "covariates";
      for (const auto& t : res.transfers) {
        series[0].values.push_back(metric == std::string("r2") ? t.r2_embeddings : t.kl_embeddings);
        series[1].values.push_back(metric == std::string("r2") ? t.r2_covariates : t.kl_covariates);
      }
      if (series[0].values.empty()) continue;
      write_box_chart((charts / ("sensitivity_" + metric + ".svg")).string(),
                      "Aggregation sensitivity " + metric, metric, series);
    }
  }
}

}  // namespace popbench
