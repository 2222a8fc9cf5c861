#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "wealthmap/common.hpp"
#include "wealthmap/csv.hpp"

namespace wealthmap::plot {

// Small deterministic SVG emitter for the report figures: line charts with
// standard-deviation bands, bar charts with error bars, and image panels.

struct Series {
  std::string label;
  std::string color = "#1f77b4";
  std::vector<double> x, y;
  std::vector<double> ystd;  // optional band, same length as y
};

struct Bar {
  std::string label;
  std::string color = "#888888";
  double value = 0.0;
  double err = 0.0;
};

namespace detail {

inline std::string f2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string f4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

struct Axis {
  double lo = 0.0, hi = 1.0;
  bool log = false;

  double unit(double v) const {
    const double a = log ? std::log10(lo) : lo;
    const double b = log ? std::log10(hi) : hi;
    const double t = log ? std::log10(v) : v;
    return (t - a) / (b - a);
  }

  std::vector<double> ticks() const {
    std::vector<double> out;
    if (log) {
      for (double t = std::pow(10.0, std::floor(std::log10(lo))); t <= hi * 1.0001; t *= 10.0) {
        if (t >= lo * 0.9999) out.push_back(t);
      }
      if (out.size() < 3) {
        out.clear();
        for (double t : {1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0}) {
          if (t >= lo * 0.9999 && t <= hi * 1.0001) out.push_back(t);
        }
      }
      return out;
    }
    const double span = hi - lo;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
      if (raw / mag <= m) {
        step = m * mag;
        break;
      }
    }
    for (double t = std::ceil(lo / step) * step; t <= hi + 1e-12; t += step) out.push_back(t);
    return out;
  }
};

inline const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};

}  // namespace detail

// Line chart with optional std bands. x may be plotted on a log axis.
inline std::string line_chart(const std::string& title, const std::string& xlabel,
                              const std::string& ylabel, std::vector<Series> series,
                              bool log_x = false, double hline = std::nan("")) {
  const int W = 640, H = 420, ml = 64, mr = 16, mt = 40, mb = 52;
  const int pw = W - ml - mr, ph = H - mt - mb;

  detail::Axis xa, ya;
  xa.log = log_x;
  double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i].color.empty() || series[i].color == "#1f77b4") {
      series[i].color = detail::kPalette[i % 5];
    }
    for (std::size_t k = 0; k < series[i].x.size(); ++k) {
      xlo = std::min(xlo, series[i].x[k]);
      xhi = std::max(xhi, series[i].x[k]);
      const double sd = k < series[i].ystd.size() ? series[i].ystd[k] : 0.0;
      ylo = std::min(ylo, series[i].y[k] - sd);
      yhi = std::max(yhi, series[i].y[k] + sd);
    }
  }
  if (!std::isnan(hline)) {
    ylo = std::min(ylo, hline);
    yhi = std::max(yhi, hline);
  }
  if (ylo == yhi) {
    ylo -= 0.5;
    yhi += 0.5;
  }
  const double pad = 0.06 * (yhi - ylo);
  ya.lo = ylo - pad;
  ya.hi = yhi + pad;
  xa.lo = xlo;
  xa.hi = xhi > xlo ? xhi : xlo + 1.0;

  auto px = [&](double v) { return ml + xa.unit(v) * pw; };
  auto py = [&](double v) { return mt + (1.0 - ya.unit(v)) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  svg << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
  svg << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15' "
      << "font-family='sans-serif'>" << title << "</text>\n";

  for (double t : xa.ticks()) {
    svg << "<line x1='" << detail::f2(px(t)) << "' y1='" << mt << "' x2='" << detail::f2(px(t))
        << "' y2='" << mt + ph << "' stroke='#eeeeee'/>\n";
    svg << "<text x='" << detail::f2(px(t)) << "' y='" << mt + ph + 18
        << "' text-anchor='middle' font-size='11' font-family='sans-serif'>" << detail::f4(t)
        << "</text>\n";
  }
  for (double t : ya.ticks()) {
    svg << "<line x1='" << ml << "' y1='" << detail::f2(py(t)) << "' x2='" << ml + pw << "' y2='"
        << detail::f2(py(t)) << "' stroke='#eeeeee'/>\n";
    svg << "<text x='" << ml - 8 << "' y='" << detail::f2(py(t) + 4)
        << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << detail::f4(t)
        << "</text>\n";
  }
  svg << "<rect x='" << ml << "' y='" << mt << "' width='" << pw << "' height='" << ph
      << "' fill='none' stroke='#333333'/>\n";
  svg << "<text x='" << ml + pw / 2 << "' y='" << H - 12
      << "' text-anchor='middle' font-size='12' font-family='sans-serif'>" << xlabel
      << "</text>\n";
  svg << "<text x='16' y='" << mt + ph / 2
      << "' text-anchor='middle' font-size='12' font-family='sans-serif' transform='rotate(-90 16 "
      << mt + ph / 2 << ")'>" << ylabel << "</text>\n";

  if (!std::isnan(hline)) {
    svg << "<line x1='" << ml << "' y1='" << detail::f2(py(hline)) << "' x2='" << ml + pw
        << "' y2='" << detail::f2(py(hline)) << "' stroke='#555555' stroke-dasharray='6,4'/>\n";
  }

  for (const auto& s : series) {
    if (!s.ystd.empty()) {
      std::ostringstream band;
      for (std::size_t k = 0; k < s.x.size(); ++k) {
        band << detail::f2(px(s.x[k])) << ',' << detail::f2(py(s.y[k] + s.ystd[k])) << ' ';
      }
      for (std::size_t k = s.x.size(); k-- > 0;) {
        band << detail::f2(px(s.x[k])) << ',' << detail::f2(py(s.y[k] - s.ystd[k])) << ' ';
      }
      svg << "<polygon points='" << band.str() << "' fill='" << s.color
          << "' fill-opacity='0.15' stroke='none'/>\n";
    }
    std::ostringstream line;
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      line << detail::f2(px(s.x[k])) << ',' << detail::f2(py(s.y[k])) << ' ';
    }
    svg << "<polyline points='" << line.str() << "' fill='none' stroke='" << s.color
        << "' stroke-width='2'/>\n";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      svg << "<circle cx='" << detail::f2(px(s.x[k])) << "' cy='" << detail::f2(py(s.y[k]))
          << "' r='2.5' fill='" << s.color << "'/>\n";
    }
  }

  double ly = mt + 14;
  for (const auto& s : series) {
    svg << "<line x1='" << ml + 10 << "' y1='" << ly - 4 << "' x2='" << ml + 34 << "' y2='"
        << ly - 4 << "' stroke='" << s.color << "' stroke-width='2'/>\n";
    svg << "<text x='" << ml + 40 << "' y='" << ly
        << "' font-size='12' font-family='sans-serif'>" << s.label << "</text>\n";
    ly += 16;
  }
  svg << "</svg>\n";
  return svg.str();
}

// Bar chart with error bars and an optional dashed baseline.
inline std::string bar_chart(const std::string& title, const std::string& ylabel,
                             const std::vector<Bar>& bars, double hline = std::nan("")) {
  const int W = 560, H = 400, ml = 64, mr = 16, mt = 40, mb = 64;
  const int pw = W - ml - mr, ph = H - mt - mb;

  double ylo = 0.0, yhi = 0.0;
  for (const auto& b : bars) {
    ylo = std::min(ylo, b.value - b.err);
    yhi = std::max(yhi, b.value + b.err);
  }
  if (!std::isnan(hline)) yhi = std::max(yhi, hline);
  if (yhi == ylo) yhi = ylo + 1.0;
  detail::Axis ya;
  ya.lo = ylo - 0.06 * (yhi - ylo);
  ya.hi = yhi + 0.06 * (yhi - ylo);
  auto py = [&](double v) { return mt + (1.0 - ya.unit(v)) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  svg << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
  svg << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15' "
      << "font-family='sans-serif'>" << title << "</text>\n";
  for (double t : ya.ticks()) {
    svg << "<line x1='" << ml << "' y1='" << detail::f2(py(t)) << "' x2='" << ml + pw << "' y2='"
        << detail::f2(py(t)) << "' stroke='#eeeeee'/>\n";
    svg << "<text x='" << ml - 8 << "' y='" << detail::f2(py(t) + 4)
        << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << detail::f4(t)
        << "</text>\n";
  }
  svg << "<rect x='" << ml << "' y='" << mt << "' width='" << pw << "' height='" << ph
      << "' fill='none' stroke='#333333'/>\n";
  svg << "<text x='16' y='" << mt + ph / 2
      << "' text-anchor='middle' font-size='12' font-family='sans-serif' transform='rotate(-90 16 "
      << mt + ph / 2 << ")'>" << ylabel << "</text>\n";

  const double slot = static_cast<double>(pw) / bars.size();
  const double bw = slot * 0.62;
  const double y0 = py(std::max(0.0, ya.lo));
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double cx = ml + slot * (i + 0.5);
    const double yt = py(bars[i].value);
    svg << "<rect x='" << detail::f2(cx - bw / 2) << "' y='" << detail::f2(std::min(yt, y0))
        << "' width='" << detail::f2(bw) << "' height='" << detail::f2(std::abs(y0 - yt))
        << "' fill='" << bars[i].color << "' stroke='#333333'/>\n";
    if (bars[i].err > 0) {
      svg << "<line x1='" << detail::f2(cx) << "' y1='" << detail::f2(py(bars[i].value - bars[i].err))
          << "' x2='" << detail::f2(cx) << "' y2='" << detail::f2(py(bars[i].value + bars[i].err))
          << "' stroke='#222222' stroke-width='1.5'/>\n";
    }
    svg << "<text x='" << detail::f2(cx) << "' y='" << mt + ph + 18
        << "' text-anchor='middle' font-size='11' font-family='sans-serif'>" << bars[i].label
        << "</text>\n";
  }
  if (!std::isnan(hline)) {
    svg << "<line x1='" << ml << "' y1='" << detail::f2(py(hline)) << "' x2='" << ml + pw
        << "' y2='" << detail::f2(py(hline)) << "' stroke='#555555' stroke-dasharray='6,4'/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

namespace detail {
inline std::string base64(const std::string& bytes) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 2 < bytes.size()) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += alphabet[(v >> 18) & 63];
    out += alphabet[(v >> 12) & 63];
    out += alphabet[(v >> 6) & 63];
    out += alphabet[v & 63];
    i += 3;
  }
  if (i + 1 == bytes.size()) {
    const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out += alphabet[(v >> 18) & 63];
    out += alphabet[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out += alphabet[(v >> 18) & 63];
    out += alphabet[(v >> 12) & 63];
    out += alphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::string read_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("svg panel: cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}
}  // namespace detail

struct Panel {
  std::string png_path;
  std::string caption;
};

// Grid of embedded PNG panels with row titles; used for the attribution
// comparison and feature-visualization figures.
inline std::string panel_grid(const std::string& title, const std::vector<std::string>& row_titles,
                              const std::vector<std::vector<Panel>>& rows, int cell_px = 140) {
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  const int pad = 8, cap_h = 16, row_title_w = 120;
  const int W = row_title_w + static_cast<int>(cols) * (cell_px + pad) + pad;
  const int H = 46 + static_cast<int>(rows.size()) * (cell_px + cap_h + pad);

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  svg << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
  svg << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='15' "
      << "font-family='sans-serif'>" << title << "</text>\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int y0 = 40 + static_cast<int>(r) * (cell_px + cap_h + pad);
    if (r < row_titles.size()) {
      svg << "<text x='8' y='" << y0 + cell_px / 2
          << "' font-size='12' font-family='sans-serif'>" << row_titles[r] << "</text>\n";
    }
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const int x0 = row_title_w + static_cast<int>(c) * (cell_px + pad);
      svg << "<image x='" << x0 << "' y='" << y0 << "' width='" << cell_px << "' height='"
          << cell_px << "' href='data:image/png;base64,"
          << detail::base64(detail::read_binary(rows[r][c].png_path)) << "'/>\n";
      svg << "<text x='" << x0 + cell_px / 2 << "' y='" << y0 + cell_px + 12
          << "' text-anchor='middle' font-size='10' font-family='sans-serif'>"
          << rows[r][c].caption << "</text>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

inline void save_svg(const std::string& path, const std::string& svg) {
  std::ofstream out(path);
  if (!out) throw DataError("svg: cannot write " + path);
  out << svg;
}

}  // namespace wealthmap::plot
