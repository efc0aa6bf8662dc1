#include "moco/plots.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace moco {

namespace {

// Linear interpolation between order statistics (the common "type 7" rule).
double percentile(const std::vector<double>& sorted, double p) {
  const double pos = p * (sorted.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
}

struct Scale {
  double lo, hi, y0, y1;
  double operator()(double v) const {
    return y1 + (v - lo) / (hi - lo) * (y0 - y1);  // SVG y grows downward
  }
};

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("plots: cannot write " + path.string());
  out << body;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("box_stats: no values");
  std::sort(values.begin(), values.end());
  BoxStats b;
  b.n = static_cast<int>(values.size());
  b.q1 = percentile(values, 0.25);
  b.median = percentile(values, 0.5);
  b.q3 = percentile(values, 0.75);
  const double iqr = b.q3 - b.q1;
  b.whisker_lo = values.back();
  b.whisker_hi = values.front();
  for (double v : values) {
    if (v >= b.q1 - 1.5 * iqr) b.whisker_lo = std::min(b.whisker_lo, v);
    if (v <= b.q3 + 1.5 * iqr) b.whisker_hi = std::max(b.whisker_hi, v);
  }
  return b;
}

void write_boxplot_svg(const std::filesystem::path& path,
                       const std::vector<PlotGroup>& groups,
                       const std::string& title) {
  if (groups.empty()) throw std::invalid_argument("write_boxplot_svg: no groups");

  std::vector<BoxStats> stats;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  nlohmann::json meta = nlohmann::json::array();
  for (const PlotGroup& g : groups) {
    const BoxStats b = box_stats(g.second);
    stats.push_back(b);
    for (double v : g.second) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    meta.push_back({{"group", g.first},
                    {"n", b.n},
                    {"whisker_lo", b.whisker_lo},
                    {"q1", b.q1},
                    {"median", b.median},
                    {"q3", b.q3},
                    {"whisker_hi", b.whisker_hi}});
  }
  if (hi == lo) hi = lo + 1.0;
  const double pad = 0.05 * (hi - lo);
  const int n = static_cast<int>(groups.size());
  const int width = 90 * n + 70, height = 320;
  const Scale sy{lo - pad, hi + pad, height - 40.0, 40.0};

  std::ostringstream svg;
  svg.precision(17);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  svg << "<metadata id=\"box-stats\">" << meta.dump() << "</metadata>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\">"
      << escape_xml(title) << "</text>\n";
  for (int i = 0; i < n; ++i) {
    const BoxStats& b = stats[i];
    const double cx = 70 + 90.0 * i + 25;
    const double half = 25;
    svg << "<g class=\"box\">\n";
    svg << "<line x1=\"" << cx << "\" y1=\"" << sy(b.whisker_lo) << "\" x2=\"" << cx
        << "\" y2=\"" << sy(b.q1) << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << cx << "\" y1=\"" << sy(b.q3) << "\" x2=\"" << cx
        << "\" y2=\"" << sy(b.whisker_hi) << "\" stroke=\"black\"/>\n";
    svg << "<rect x=\"" << cx - half << "\" y=\"" << sy(b.q3) << "\" width=\""
        << 2 * half << "\" height=\"" << sy(b.q1) - sy(b.q3)
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << cx - half << "\" y1=\"" << sy(b.median) << "\" x2=\""
        << cx + half << "\" y2=\"" << sy(b.median) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << cx << "\" y=\"" << height - 18
        << "\" text-anchor=\"middle\" font-size=\"12\">" << escape_xml(groups[i].first)
        << "</text>\n";
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  write_file(path, svg.str());
}

void write_lineplot_svg(const std::filesystem::path& path,
                        const std::vector<PlotGroup>& curves,
                        const std::string& title) {
  if (curves.empty()) throw std::invalid_argument("write_lineplot_svg: no curves");
  size_t max_len = 0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const PlotGroup& c : curves) {
    if (c.second.empty())
      throw std::invalid_argument("write_lineplot_svg: empty curve " + c.first);
    max_len = std::max(max_len, c.second.size());
    for (double v : c.second) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi == lo) hi = lo + 1.0;
  const double pad = 0.05 * (hi - lo);
  const int width = 560, height = 320;
  const Scale sy{lo - pad, hi + pad, height - 30.0, 40.0};
  const double x0 = 50, x1 = width - 20;

  const char* colors[] = {"black", "crimson", "steelblue", "seagreen", "darkorange"};
  std::ostringstream svg;
  svg.precision(17);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\">"
      << escape_xml(title) << "</text>\n";
  for (size_t ci = 0; ci < curves.size(); ++ci) {
    const std::vector<double>& v = curves[ci].second;
    svg << "<polyline fill=\"none\" stroke=\"" << colors[ci % 5] << "\" points=\"";
    for (size_t i = 0; i < v.size(); ++i) {
      const double x =
          max_len > 1 ? x0 + (x1 - x0) * i / (max_len - 1) : (x0 + x1) / 2;
      svg << x << "," << sy(v[i]) << " ";
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << x0 + 8 << "\" y=\"" << 36 + 14 * ci << "\" fill=\""
        << colors[ci % 5] << "\" font-size=\"12\">" << escape_xml(curves[ci].first)
        << "</text>\n";
  }
  svg << "</svg>\n";
  write_file(path, svg.str());
}

std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& metrics_csv,
                                              const std::filesystem::path& out_dir) {
  std::ifstream in(metrics_csv);
  if (!in) throw std::runtime_error("emit_plots: cannot open " + metrics_csv.string());
  std::string line;
  if (!std::getline(in, line) || line != "case,condition,metric,value")
    throw std::invalid_argument(
        "emit_plots: expected header case,condition,metric,value");

  // metric -> condition -> values, in first-seen order.
  std::vector<std::pair<std::string, std::vector<PlotGroup>>> metrics;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string case_id, condition, metric, value;
    if (!std::getline(ss, case_id, ',') || !std::getline(ss, condition, ',') ||
        !std::getline(ss, metric, ',') || !std::getline(ss, value))
      throw std::invalid_argument("emit_plots: malformed row at line " +
                                  std::to_string(lineno));
    auto m = std::find_if(metrics.begin(), metrics.end(),
                          [&](const auto& p) { return p.first == metric; });
    if (m == metrics.end()) {
      metrics.push_back({metric, {}});
      m = std::prev(metrics.end());
    }
    auto g = std::find_if(m->second.begin(), m->second.end(),
                          [&](const PlotGroup& p) { return p.first == condition; });
    if (g == m->second.end()) {
      m->second.push_back({condition, {}});
      g = std::prev(m->second.end());
    }
    g->second.push_back(std::stod(value));
  }
  if (metrics.empty()) throw std::invalid_argument("emit_plots: no data rows");

  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& [metric, groups] : metrics) {
    const std::filesystem::path path = out_dir / (metric + ".svg");
    write_boxplot_svg(path, groups, metric);
    written.push_back(path);
  }
  return written;
}

}  // namespace moco
