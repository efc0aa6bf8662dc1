#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace moco {

struct BoxStats {
  double whisker_lo = 0.0;  // smallest value above q1 - 1.5 IQR
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double whisker_hi = 0.0;  // largest value below q3 + 1.5 IQR
  int n = 0;
};

// Quartiles by linear interpolation between order statistics.
BoxStats box_stats(std::vector<double> values);

using PlotGroup = std::pair<std::string, std::vector<double>>;

// One box per group. The SVG carries a <metadata> block with the exact box
// statistics as JSON so plots stay machine-checkable.
void write_boxplot_svg(const std::filesystem::path& path,
                       const std::vector<PlotGroup>& groups,
                       const std::string& title);

// One polyline per named curve, x = sample index.
void write_lineplot_svg(const std::filesystem::path& path,
                        const std::vector<PlotGroup>& curves,
                        const std::string& title);

// Reads a long-format metrics CSV (header: case,condition,metric,value) and
// writes one boxplot SVG per metric into out_dir, one box per condition.
// Returns the written file paths.
std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& metrics_csv,
                                              const std::filesystem::path& out_dir);

}  // namespace moco
