#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dynseq/metrics.hpp"
#include "dynseq/sweep.hpp"

namespace dynseq {

/// Shortest round-trippable decimal; "NA" for absent values.
inline std::string format_number(double x) {
  char buf[32];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

inline std::string format_number(const std::optional<double>& x) { return x ? format_number(*x) : "NA"; }

inline std::optional<double> parse_optional_number(const std::string& s) {
  if (s == "NA" || s.empty()) return std::nullopt;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw DataError("not a number: '" + s + "'");
  }
  if (used != s.size()) throw DataError("not a number: '" + s + "'");
  return v;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') cell += '"', ++i;
      else if (ch == '"') quoted = false;
      else cell += ch;
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  out.push_back(std::move(cell));
  return out;
}

inline std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch == '\n' ? ' ' : ch);
  return out + "\"";
}

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                                      const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + " is empty");
  const auto cols = split_csv_line(line);
  if (cols.size() < header.size() || !std::equal(header.begin(), header.end(), cols.begin()))
    throw DataError(path.string() + ": unexpected header '" + line + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != cols.size()) throw DataError(path.string() + ": ragged row '" + line + "'");
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace detail

// ---- sweep.csv ----------------------------------------------------------------

inline std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream out;
  out << "tau,lambda,mask,confidence,f1,avg_len,above_curve,status\n";
  for (const auto& p : points)
    out << format_number(p.tau) << ',' << format_number(p.lambda) << ',' << to_string(p.mask) << ','
        << to_string(p.kind) << ',' << format_number(p.f1) << ',' << format_number(p.average_length) << ','
        << (p.above_curve ? 1 : 0) << ',' << detail::quote_csv(p.status) << '\n';
  return out.str();
}

inline std::vector<SweepPoint> read_sweep_csv(const std::filesystem::path& path) {
  std::vector<SweepPoint> points;
  for (const auto& r : detail::read_csv(
           path, {"tau", "lambda", "mask", "confidence", "f1", "avg_len", "above_curve", "status"})) {
    SweepPoint p;
    p.tau = parse_optional_number(r[0]).value_or(0.0);
    p.lambda = parse_optional_number(r[1]).value_or(0.0);
    p.mask = parse_mask_mode(r[2]);
    p.kind = parse_confidence_kind(r[3]);
    p.f1 = parse_optional_number(r[4]);
    p.average_length = parse_optional_number(r[5]).value_or(0.0);
    p.above_curve = r[6] == "1";
    p.status = r[7];
    points.push_back(std::move(p));
  }
  return points;
}

// ---- curve.csv ----------------------------------------------------------------

inline std::string curve_csv(const StaticCurve& curve) {
  std::ostringstream out;
  out << "length,f1\n";
  for (auto [len, f1] : curve.anchors()) out << format_number(len) << ',' << format_number(f1) << '\n';
  return out.str();
}

inline StaticCurve read_curve_csv(const std::filesystem::path& path) {
  std::vector<std::pair<double, double>> anchors;
  for (const auto& r : detail::read_csv(path, {"length", "f1"})) {
    const auto len = parse_optional_number(r[0]), f1 = parse_optional_number(r[1]);
    if (!len || !f1) throw DataError(path.string() + ": missing value");
    anchors.emplace_back(*len, *f1);
  }
  return StaticCurve(std::move(anchors));
}

// ---- sensitivity ----------------------------------------------------------------

/// (tau, average length) for successful points at the given lambda, grid order.
inline std::vector<std::pair<double, double>> sensitivity_points(const std::vector<SweepPoint>& points,
                                                                 double lambda) {
  std::vector<std::pair<double, double>> out;
  for (const auto& p : points)
    if (p.lambda == lambda && p.status.rfind("error", 0) != 0) out.emplace_back(p.tau, p.average_length);
  return out;
}

inline std::string sensitivity_csv(const std::vector<std::pair<double, double>>& pts) {
  std::ostringstream out;
  out << "tau,avg_len\n";
  for (auto [tau, len] : pts) out << format_number(tau) << ',' << format_number(len) << '\n';
  return out.str();
}

/// Fit over distinct taus; absent when there are too few points.
inline std::optional<LinearFit> try_sensitivity_fit(const std::vector<std::pair<double, double>>& pts) {
  if (pts.size() < 3) return std::nullopt;
  try {
    return sensitivity_fit(pts);
  } catch (const DataError&) {
    return std::nullopt;
  }
}

// ---- windows.csv ----------------------------------------------------------------

/// Per-window rows; the static columns are filled from the comparison runs
/// when present.
inline std::string windows_csv(const RunReport& main, const RunReport* static_one, const RunReport* static_full) {
  std::ostringstream out;
  out << "window,f1_dynamic,avg_len,coverage,f1_static_1,f1_static_T\n";
  for (std::size_t i = 0; i < main.windows.size(); ++i) {
    const WindowReport& w = main.windows[i];
    auto other = [&](const RunReport* r) {
      return r && i < r->windows.size() ? format_number(r->windows[i].f1) : std::string("NA");
    };
    out << w.index << ',' << format_number(w.f1) << ',' << format_number(w.average_length) << ','
        << format_number(w.coverage) << ',' << other(static_one) << ',' << other(static_full) << '\n';
  }
  return out.str();
}

inline std::string checkpoints_csv(const RunReport& r) {
  std::ostringstream out;
  out << "window,measured,epochs,start_hash,end_hash\n";
  char buf[48];
  for (const auto& w : r.windows) {
    std::snprintf(buf, sizeof buf, "%016llx,%016llx", static_cast<unsigned long long>(w.start_hash),
                  static_cast<unsigned long long>(w.end_hash));
    out << w.index << ',' << (w.measured ? 1 : 0) << ',' << w.epochs << ',' << buf << '\n';
  }
  return out.str();
}

// ---- summary ----------------------------------------------------------------

struct SummaryRow {
  std::string architecture;
  double f1_gap_pct = 0.0;
  double tau = 0.0;
  double lambda = 0.0;
  double prediction_length = 0.0;
  double f1 = 0.0;
};

inline std::string architecture_name(MaskMode mask, ConfidenceKind kind, const std::string& dataset) {
  std::string k(to_string(kind));
  for (char& ch : k) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  if (kind == ConfidenceKind::maximum) k = "Max";
  return "Dynamic " + k + " " + (mask == MaskMode::sigmoid ? "Sig" : "Ind") + " (" + dataset + ")";
}

/// Best successful point by F1 gap against the curve at its length.
inline std::optional<SummaryRow> best_point(const std::vector<SweepPoint>& points, const StaticCurve& curve,
                                            const std::string& dataset) {
  std::optional<SummaryRow> best;
  for (const auto& p : points) {
    if (!p.f1) continue;
    const double reference = curve(p.average_length);
    if (reference == 0.0) continue;
    const double gap = f1_gap(*p.f1, reference);
    if (!best || gap > best->f1_gap_pct)
      best = SummaryRow{architecture_name(p.mask, p.kind, dataset), gap, p.tau, p.lambda, p.average_length, *p.f1};
  }
  return best;
}

/// One line in the layout "Architecture gap (tau,lambda) length".
inline std::string format_summary_row(const SummaryRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s %.2f (%.2f,%.1f) %.2f", r.architecture.c_str(), r.f1_gap_pct, r.tau, r.lambda,
                r.prediction_length);
  return buf;
}

inline nlohmann::ordered_json summary_json(const std::vector<SweepPoint>& points, const StaticCurve& curve,
                                           double sensitivity_lambda, const std::string& dataset) {
  using J = nlohmann::ordered_json;
  J j;
  const auto best = best_point(points, curve, dataset);
  if (best)
    j["best"] = J{{"architecture", best->architecture},
                  {"f1_gap_pct", best->f1_gap_pct},
                  {"tau", best->tau},
                  {"lambda", best->lambda},
                  {"prediction_length", best->prediction_length},
                  {"f1", best->f1},
                  {"row", format_summary_row(*best)}};
  else
    j["best"] = nullptr;
  const auto pts = sensitivity_points(points, sensitivity_lambda);
  J sens{{"lambda", sensitivity_lambda}, {"points", pts.size()}};
  if (const auto fit = try_sensitivity_fit(pts)) {
    sens["slope"] = fit->slope;
    sens["intercept"] = fit->intercept;
    sens["correlation"] = fit->correlation ? J(*fit->correlation) : J(nullptr);
  } else {
    sens["slope"] = nullptr;
    sens["intercept"] = nullptr;
    sens["correlation"] = nullptr;
  }
  j["sensitivity"] = sens;
  std::size_t above = 0, failed = 0;
  for (const auto& p : points) {
    above += p.above_curve;
    failed += p.status != "ok";
  }
  j["points"] = points.size();
  j["above_curve"] = above;
  j["not_ok"] = failed;
  J anchors = J::array();
  for (auto [len, f1] : curve.anchors()) anchors.push_back({{"length", len}, {"f1", f1}});
  j["static_curve"] = anchors;
  return j;
}

}  // namespace dynseq
