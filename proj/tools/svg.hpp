#pragma once

#include <map>
#include <string>
#include <vector>

namespace prsfda::cli {

struct Series {
  std::string name;
  std::vector<double> values;  // plotted at x = 0, 1, 2, ...
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<std::string> x_ticks;  // optional; one per x position
  std::vector<Series> series;
  std::map<std::string, std::string> metadata;  // written into <desc> and the footer
};

// Self-contained SVG line chart. Non-finite values are skipped.
std::string render_svg(const Chart& chart);

}  // namespace prsfda::cli
