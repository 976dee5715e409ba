#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace progdisp {

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
  int series = 0;  ///< colour index, e.g. the group
};

struct ScatterOptions {
  std::string title;
  std::string x_label = "true";
  std::string y_label = "estimated";
  std::vector<std::string> series_names;  ///< legend entries by series index
  bool identity_line = true;
  int width = 480;
  int height = 480;
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
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(double v, int precision = 2) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

}  // namespace detail

/// Static true-vs-estimated scatterplot. Output depends only on the input,
/// so identical data gives byte-identical files.
inline std::string render_scatter_svg(const std::vector<ScatterPoint>& points, const ScatterOptions& opt = {}) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const double left = 60, right = 20, top = 40, bottom = 50;
  const double w = opt.width, h = opt.height;
  const double pw = w - left - right, ph = h - top - bottom;

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) continue;
    lo = std::min({lo, p.x, p.y});
    hi = std::max({hi, p.x, p.y});
  }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto sx = [&](double v) { return left + (v - lo) / (hi - lo) * pw; };
  auto sy = [&](double v) { return top + ph - (v - lo) / (hi - lo) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
    << "\" viewBox=\"0 0 " << opt.width << ' ' << opt.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << detail::fmt(w / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << detail::xml_escape(opt.title) << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << detail::fmt(pw) << "\" height=\"" << detail::fmt(ph)
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    o << "<text x=\"" << detail::fmt(sx(v)) << "\" y=\"" << detail::fmt(top + ph + 16)
      << "\" text-anchor=\"middle\">" << detail::tick_label(v) << "</text>\n";
    o << "<text x=\"" << detail::fmt(left - 6) << "\" y=\"" << detail::fmt(sy(v) + 4) << "\" text-anchor=\"end\">"
      << detail::tick_label(v) << "</text>\n";
  }
  o << "<text x=\"" << detail::fmt(left + pw / 2) << "\" y=\"" << detail::fmt(h - 10) << "\" text-anchor=\"middle\">"
    << detail::xml_escape(opt.x_label) << "</text>\n";
  o << "<text transform=\"translate(14 " << detail::fmt(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << detail::xml_escape(opt.y_label) << "</text>\n";
  if (opt.identity_line)
    o << "<line x1=\"" << detail::fmt(sx(lo)) << "\" y1=\"" << detail::fmt(sy(lo)) << "\" x2=\"" << detail::fmt(sx(hi))
      << "\" y2=\"" << detail::fmt(sy(hi)) << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) continue;
    const char* colour = palette[static_cast<std::size_t>(std::abs(p.series)) % std::size(palette)];
    o << "<circle cx=\"" << detail::fmt(sx(p.x)) << "\" cy=\"" << detail::fmt(sy(p.y)) << "\" r=\"2.5\" fill=\""
      << colour << "\" fill-opacity=\"0.6\"/>\n";
  }
  for (std::size_t k = 0; k < opt.series_names.size(); ++k) {
    const double y = top + 14 + 16 * static_cast<double>(k);
    o << "<circle cx=\"" << detail::fmt(left + 12) << "\" cy=\"" << detail::fmt(y - 4) << "\" r=\"4\" fill=\""
      << palette[k % std::size(palette)] << "\"/>\n";
    o << "<text x=\"" << detail::fmt(left + 22) << "\" y=\"" << detail::fmt(y) << "\">"
      << detail::xml_escape(opt.series_names[k]) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace progdisp
