#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace prsfda::cli {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 160.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 80.0;

constexpr const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

std::string render_svg(const Chart& chart) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  std::size_t points = chart.x_ticks.size();
  for (const auto& s : chart.series) {
    points = std::max(points, s.values.size());
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const auto x_at = [&](std::size_t i) {
    return kLeft + (points <= 1 ? plot_w / 2.0 : plot_w * static_cast<double>(i) / static_cast<double>(points - 1));
  };
  const auto y_at = [&](double v) { return kTop + plot_h * (hi - v) / (hi - lo); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<title>" << escape(chart.title) << "</title>\n<desc>";
  for (const auto& [k, v] : chart.metadata) os << escape(k) << '=' << escape(v) << ';';
  os << "</desc>\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(kWidth / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
     << escape(chart.title) << "</text>\n";

  os << "<g stroke=\"#999\" fill=\"none\">\n";
  os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft) << "\" y2=\""
     << num(kTop + plot_h) << "\"/>\n";
  os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop + plot_h) << "\" x2=\"" << num(kLeft + plot_w)
     << "\" y2=\"" << num(kTop + plot_h) << "\"/>\n</g>\n";

  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    os << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(y_at(v) + 4) << "\" text-anchor=\"end\">" << tick(v)
       << "</text>\n";
  }
  const std::size_t stride = std::max<std::size_t>(1, points / 10);
  for (std::size_t i = 0; i < points; i += stride) {
    const std::string label = i < chart.x_ticks.size() ? chart.x_ticks[i] : std::to_string(i);
    os << "<text x=\"" << num(x_at(i)) << "\" y=\"" << num(kTop + plot_h + 16)
       << "\" text-anchor=\"middle\" font-size=\"10\">" << escape(label) << "</text>\n";
  }
  os << "<text x=\"" << num(kLeft + plot_w / 2) << "\" y=\"" << num(kTop + plot_h + 36)
     << "\" text-anchor=\"middle\">" << escape(chart.x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << num(kTop + plot_h / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(chart.y_label) << "</text>\n";

  for (std::size_t s = 0; s < chart.series.size(); ++s) {
    const auto& series = chart.series[s];
    const char* colour = kColours[s % std::size(kColours)];
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < series.values.size(); ++i) {
      if (!std::isfinite(series.values[i])) continue;
      os << (first ? "" : " ") << num(x_at(i)) << ',' << num(y_at(series.values[i]));
      first = false;
    }
    os << "\"/>\n";
    for (std::size_t i = 0; i < series.values.size(); ++i) {
      if (!std::isfinite(series.values[i])) continue;
      os << "<circle cx=\"" << num(x_at(i)) << "\" cy=\"" << num(y_at(series.values[i])) << "\" r=\"2.5\" fill=\""
         << colour << "\"/>\n";
    }
    const double ly = kTop + 14.0 + 18.0 * static_cast<double>(s);
    os << "<rect x=\"" << num(kLeft + plot_w + 12) << "\" y=\"" << num(ly - 9) << "\" width=\"10\" height=\"10\" fill=\""
       << colour << "\"/>\n";
    os << "<text x=\"" << num(kLeft + plot_w + 28) << "\" y=\"" << num(ly) << "\" font-size=\"11\">"
       << escape(series.name) << "</text>\n";
  }

  std::string footer;
  for (const auto& [k, v] : chart.metadata) footer += (footer.empty() ? "" : "  ") + k + '=' + v;
  os << "<text x=\"" << num(kLeft) << "\" y=\"" << num(kHeight - 12) << "\" font-size=\"10\" fill=\"#555\">"
     << escape(footer) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace prsfda::cli
