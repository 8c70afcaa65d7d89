#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace sst {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct PlotSpec {
  std::string title, x_label, y_label;
  double y_min = 0.0, y_max = 1.0;  // y_min == y_max: autoscale
  std::vector<std::pair<std::string, double>> hlines;  // labelled reference lines
};

// Minimal static SVG charts; nothing interactive.
void write_line_plot(const std::filesystem::path& path, const std::vector<Series>& series, const PlotSpec& spec);
void write_bar_plot(const std::filesystem::path& path, const std::vector<std::string>& labels,
                    const std::vector<Series>& groups, const PlotSpec& spec);
// Overlaid histograms with shared bins.
void write_histogram(const std::filesystem::path& path, const std::vector<Series>& samples, int bins,
                     const PlotSpec& spec);

}  // namespace sst
