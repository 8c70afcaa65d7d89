#include "sst/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sst/errors.hpp"

namespace sst {

namespace {

constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 55;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else if (c == '&')
      out += "&amp;";
    else
      out += c;
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

void fix_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
}

void open_svg(std::ostringstream& o, const PlotSpec& spec) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(spec.title)
    << "</text>\n";
}

void axes(std::ostringstream& o, const Frame& f, const PlotSpec& spec, bool x_ticks) {
  const double l = kLeft, r = kW - kRight, t = kTop, b = kH - kBottom;
  o << "<rect x=\"" << l << "\" y=\"" << t << "\" width=\"" << r - l << "\" height=\"" << b - t
    << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double yv = f.y0 + (f.y1 - f.y0) * i / 5.0;
    o << "<line x1=\"" << l << "\" x2=\"" << r << "\" y1=\"" << f.py(yv) << "\" y2=\"" << f.py(yv)
      << "\" stroke=\"#ddd\"/>\n<text x=\"" << l - 6 << "\" y=\"" << f.py(yv) + 4 << "\" text-anchor=\"end\">"
      << num(yv) << "</text>\n";
    if (x_ticks) {
      const double xv = f.x0 + (f.x1 - f.x0) * i / 5.0;
      o << "<text x=\"" << f.px(xv) << "\" y=\"" << b + 16 << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n";
    }
  }
  o << "<text x=\"" << (l + r) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << esc(spec.x_label)
    << "</text>\n<text transform=\"translate(16," << (t + b) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << esc(spec.y_label) << "</text>\n";
  for (const auto& [label, v] : spec.hlines) {
    if (v < f.y0 || v > f.y1) continue;
    o << "<line x1=\"" << l << "\" x2=\"" << r << "\" y1=\"" << f.py(v) << "\" y2=\"" << f.py(v)
      << "\" stroke=\"#555\" stroke-dasharray=\"5,4\"/>\n<text x=\"" << r - 4 << "\" y=\"" << f.py(v) - 4
      << "\" text-anchor=\"end\" fill=\"#555\">" << esc(label) << "</text>\n";
  }
}

void legend(std::ostringstream& o, const std::vector<Series>& s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double y = kTop + 10 + 20.0 * i;
    o << "<rect x=\"" << kW - kRight + 12 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\""
      << kPalette[i % 6] << "\"/>\n<text x=\"" << kW - kRight + 30 << "\" y=\"" << y + 1 << "\">" << esc(s[i].name)
      << "</text>\n";
  }
}

void save(const std::filesystem::path& path, std::ostringstream& o) {
  o << "</svg>\n";
  std::ofstream f(path);
  if (!f) throw IOError("cannot write " + path.string());
  f << o.str();
}

void y_range(const PlotSpec& spec, const std::vector<double>& ys, double& lo, double& hi) {
  if (spec.y_max > spec.y_min) {
    lo = spec.y_min;
    hi = spec.y_max;
    return;
  }
  lo = 0.0;
  hi = 0.0;
  for (double v : ys)
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  for (const auto& h : spec.hlines) hi = std::max(hi, h.second);
  hi *= 1.1;
  fix_range(lo, hi);
}

}  // namespace

void write_line_plot(const std::filesystem::path& path, const std::vector<Series>& series, const PlotSpec& spec) {
  double x0 = 1e300, x1 = -1e300;
  std::vector<double> ys;
  for (const auto& s : series) {
    for (double x : s.x) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
    }
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  if (x0 > x1) x0 = x1 = 0.0;
  fix_range(x0, x1);
  Frame f{x0, x1, 0, 0};
  y_range(spec, ys, f.y0, f.y1);

  std::ostringstream o;
  open_svg(o, spec);
  axes(o, f, spec, true);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    o << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << kPalette[i % 6] << "\" points=\"";
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) o << f.px(s.x[k]) << "," << f.py(s.y[k]) << " ";
    o << "\"/>\n";
    for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k)
      o << "<circle r=\"3\" fill=\"" << kPalette[i % 6] << "\" cx=\"" << f.px(s.x[k]) << "\" cy=\"" << f.py(s.y[k])
        << "\"/>\n";
  }
  legend(o, series);
  save(path, o);
}

void write_bar_plot(const std::filesystem::path& path, const std::vector<std::string>& labels,
                    const std::vector<Series>& groups, const PlotSpec& spec) {
  std::vector<double> ys;
  for (const auto& g : groups) ys.insert(ys.end(), g.y.begin(), g.y.end());
  const double n = std::max<std::size_t>(labels.size(), 1);
  Frame f{0, n, 0, 0};
  y_range(spec, ys, f.y0, f.y1);

  std::ostringstream o;
  open_svg(o, spec);
  axes(o, f, spec, false);
  const double slot = (f.px(1) - f.px(0)) * 0.8;
  const double bw = slot / std::max<std::size_t>(groups.size(), 1);
  for (std::size_t c = 0; c < labels.size(); ++c) {
    const double base = f.px(static_cast<double>(c)) + (f.px(1) - f.px(0)) * 0.1;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (c >= groups[g].y.size()) continue;
      const double v = std::clamp(groups[g].y[c], f.y0, f.y1);
      const double top = std::min(f.py(v), f.py(0.0)), h = std::abs(f.py(v) - f.py(0.0));
      o << "<rect x=\"" << base + bw * g << "\" y=\"" << top << "\" width=\"" << bw * 0.95 << "\" height=\"" << h
        << "\" fill=\"" << kPalette[g % 6] << "\"/>\n";
    }
    o << "<text x=\"" << f.px(c + 0.5) << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\">"
      << esc(labels[c]) << "</text>\n";
  }
  legend(o, groups);
  save(path, o);
}

void write_histogram(const std::filesystem::path& path, const std::vector<Series>& samples, int bins,
                     const PlotSpec& spec) {
  bins = std::max(bins, 1);
  double lo = 1e300, hi = -1e300;
  for (const auto& s : samples)
    for (double v : s.y)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  if (lo > hi) lo = hi = 0.0;
  fix_range(lo, hi);
  const double width = (hi - lo) / bins;

  std::vector<Series> density;
  std::vector<double> all;
  for (const auto& s : samples) {
    Series d{s.name, {}, std::vector<double>(bins, 0.0)};
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      const int b = std::min(bins - 1, static_cast<int>((v - lo) / width));
      d.y[b] += 1.0 / std::max<std::size_t>(s.y.size(), 1);
    }
    all.insert(all.end(), d.y.begin(), d.y.end());
    density.push_back(std::move(d));
  }
  Frame f{lo, hi, 0, 0};
  PlotSpec auto_y = spec;
  auto_y.y_min = auto_y.y_max = 0.0;
  y_range(auto_y, all, f.y0, f.y1);

  std::ostringstream o;
  open_svg(o, spec);
  axes(o, f, spec, true);
  for (std::size_t i = 0; i < density.size(); ++i)
    for (int b = 0; b < bins; ++b) {
      const double v = density[i].y[b];
      if (v <= 0) continue;
      o << "<rect x=\"" << f.px(lo + b * width) << "\" y=\"" << f.py(v) << "\" width=\""
        << f.px(lo + (b + 1) * width) - f.px(lo + b * width) << "\" height=\"" << f.py(0) - f.py(v) << "\" fill=\""
        << kPalette[i % 6] << "\" fill-opacity=\"0.5\"/>\n";
    }
  legend(o, density);
  save(path, o);
}

}  // namespace sst
