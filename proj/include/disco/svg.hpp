#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "disco/mixture.hpp"
#include "disco/tensor.hpp"

namespace disco {

// 8-color palette, one per codebook index / mixture component.
inline const char* svg_palette(std::size_t i) {
  static const char* colors[8] = {"#e41a1c", "#377eb8", "#4daf4a", "#984ea3",
                                  "#ff7f00", "#a65628", "#f781bf", "#17becf"};
  return colors[i % 8];
}

namespace detail {

struct SvgCanvas {
  static constexpr double kSize = 800.0;
  static constexpr double kMargin = 60.0;
  double x_lo, x_hi, y_lo, y_hi;
  std::ostringstream os;

  SvgCanvas(double xl, double xh, double yl, double yh) : x_lo(xl), x_hi(xh), y_lo(yl), y_hi(yh) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 800\" "
          "width=\"800\" height=\"800\">\n"
       << "<rect width=\"800\" height=\"800\" fill=\"white\"/>\n";
  }

  double px(double x) const {
    return kMargin + (x - x_lo) / (x_hi - x_lo) * (kSize - 2 * kMargin);
  }
  double py(double y) const {
    return kSize - kMargin - (y - y_lo) / (y_hi - y_lo) * (kSize - 2 * kMargin);
  }

  void frame(const std::string& x_label, const std::string& y_label) {
    os << "<rect x=\"60\" y=\"60\" width=\"680\" height=\"680\" fill=\"none\" "
          "stroke=\"#333\" stroke-width=\"1\"/>\n"
       << "<text x=\"400\" y=\"785\" text-anchor=\"middle\" font-size=\"16\">" << x_label
       << "</text>\n"
       << "<text x=\"20\" y=\"400\" text-anchor=\"middle\" font-size=\"16\" "
          "transform=\"rotate(-90 20 400)\">"
       << y_label << "</text>\n";
  }

  void circle(double x, double y, double r, const char* color, double opacity) {
    os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"" << r << "\" fill=\""
       << color << "\" fill-opacity=\"" << opacity << "\"/>\n";
  }

  void polyline(const std::vector<Vec2>& pts, const char* color, bool dotted) {
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1\"";
    if (dotted) os << " stroke-dasharray=\"2,4\"";
    os << " points=\"";
    for (const Vec2& p : pts) os << px(p[0]) << "," << py(p[1]) << " ";
    os << "\"/>\n";
  }

  void text(double sx, double sy, const std::string& s, const char* color) {
    os << "<text x=\"" << sx << "\" y=\"" << sy << "\" font-size=\"14\" fill=\"" << color << "\">"
       << s << "</text>\n";
  }

  std::string finish() {
    os << "</svg>\n";
    return os.str();
  }
};

}  // namespace detail

// Scatter of 2D samples colored by an integer index (latent code or
// component label), with optional dotted trajectory overlays.
inline std::string scatter_svg(const Tensor& points, const std::vector<int>& color_idx,
                               const std::vector<std::vector<Vec2>>& trajectories = {}) {
  double lo = -5.0, hi = 5.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    lo = std::min({lo, points(i, 0), points(i, 1)});
    hi = std::max({hi, points(i, 0), points(i, 1)});
  }
  detail::SvgCanvas c(lo, hi, lo, hi);
  c.frame("x", "y");
  for (const auto& tr : trajectories) c.polyline(tr, "#888888", true);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const char* color = i < color_idx.size() ? svg_palette(static_cast<std::size_t>(color_idx[i]))
                                             : "#333333";
    c.circle(points(i, 0), points(i, 1), 2.0, color, 0.6);
  }
  return c.finish();
}

struct SvgSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Line plot of metric profiles vs t, log-x, linear or log-y.
inline std::string profile_svg(const std::vector<SvgSeries>& series, const std::string& x_label,
                               const std::string& y_label, bool log_y = false) {
  double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      double xv = std::log10(s.x[i]);
      double yv = log_y ? std::log10(std::max(s.y[i], 1e-12)) : s.y[i];
      xlo = std::min(xlo, xv);
      xhi = std::max(xhi, xv);
      ylo = std::min(ylo, yv);
      yhi = std::max(yhi, yv);
    }
  if (xlo >= xhi) xhi = xlo + 1;
  if (ylo >= yhi) yhi = ylo + 1;
  detail::SvgCanvas c(xlo, xhi, ylo, yhi);
  c.frame("log10 " + x_label, (log_y ? "log10 " : "") + y_label);
  for (std::size_t si = 0; si < series.size(); ++si) {
    std::vector<Vec2> pts;
    for (std::size_t i = 0; i < series[si].x.size(); ++i) {
      double yv = log_y ? std::log10(std::max(series[si].y[i], 1e-12)) : series[si].y[i];
      pts.push_back({std::log10(series[si].x[i]), yv});
    }
    c.polyline(pts, svg_palette(si), false);
    c.text(80.0, 80.0 + 20.0 * static_cast<double>(si), series[si].name, svg_palette(si));
  }
  return c.finish();
}

}  // namespace disco
