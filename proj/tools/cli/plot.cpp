#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <vector>

#include "simofdm/error.hpp"

namespace simofdm::cli {
namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 72, kRight = 616, kTop = 36, kBottom = 364;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
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

struct Sample {
  double x = 0, ber = 0, half_width = 0;
};

struct Series {
  std::string mode;
  std::vector<Sample> samples;
};

bool parse_number(const std::string& s, double& v) {
  if (s.empty()) return false;
  char* end = nullptr;
  v = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(v);
}

const char* color_for(std::size_t i) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  return kColors[i % 4];
}

void marker(std::ostringstream& os, const std::string& mode, double x, double y, const char* color, bool hollow) {
  const std::string fill = hollow ? "none" : color;
  if (mode == "dpsim") {
    os << "<rect class=\"marker " << escape(mode) << "\" x=\"" << num(x - 4) << "\" y=\"" << num(y - 4)
       << "\" width=\"8\" height=\"8\" fill=\"" << fill << "\" stroke=\"" << color << "\"/>\n";
  } else {
    os << "<circle class=\"marker " << escape(mode) << "\" cx=\"" << num(x) << "\" cy=\"" << num(y)
       << "\" r=\"4\" fill=\"" << fill << "\" stroke=\"" << color << "\"/>\n";
  }
}

}  // namespace

std::string render_svg(const evaluator::BerReport& report, const std::string& title) {
  // x positions: numeric when every point value parses, else categorical.
  std::vector<const evaluator::BerPoint*> kept;
  for (const auto& p : report.points) {
    if (!p.skipped) kept.push_back(&p);
  }
  if (kept.empty()) throw ConfigError("plot: report has no plottable point");

  const bool power_axis = report.axis == "power_dbm" || report.axis.empty();
  bool numeric = true;
  std::vector<std::string> categories;
  for (const auto* p : kept) {
    double v = 0;
    if (!power_axis && !parse_number(p->value, v)) numeric = false;
    if (std::find(categories.begin(), categories.end(), p->value) == categories.end()) categories.push_back(p->value);
  }
  auto x_of = [&](const evaluator::BerPoint& p) {
    if (power_axis) return p.power_dbm;
    if (numeric) return std::strtod(p.value.c_str(), nullptr);
    return static_cast<double>(std::find(categories.begin(), categories.end(), p.value) - categories.begin());
  };

  std::vector<Series> series;
  for (const auto* p : kept) {
    auto it = std::find_if(series.begin(), series.end(), [&](const Series& s) { return s.mode == p->mode; });
    if (it == series.end()) {
      series.push_back({p->mode, {}});
      it = series.end() - 1;
    }
    it->samples.push_back({x_of(*p), p->aggregate.ber(), p->aggregate.half_width()});
  }
  for (auto& s : series) {
    std::stable_sort(s.samples.begin(), s.samples.end(), [](const Sample& a, const Sample& b) { return a.x < b.x; });
  }

  double xmin = 1e300, xmax = -1e300, min_positive = 1.0;
  for (const auto& s : series) {
    for (const auto& q : s.samples) {
      xmin = std::min(xmin, q.x);
      xmax = std::max(xmax, q.x);
      if (q.ber > 0) min_positive = std::min(min_positive, q.ber);
    }
  }
  if (xmax - xmin < 1e-12) {
    xmin -= 1;
    xmax += 1;
  }
  const double pad = 0.04 * (xmax - xmin);
  xmin -= pad;
  xmax += pad;
  const int lo = std::min(-1, static_cast<int>(std::floor(std::log10(min_positive))));
  const int hi = 0;

  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * (kRight - kLeft); };
  auto py = [&](double ber) {
    const double l = std::clamp(std::log10(std::max(ber, std::pow(10.0, lo))), double(lo), double(hi));
    return kBottom - (l - lo) / (hi - lo) * (kBottom - kTop);
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight)
     << "\" viewBox=\"0 0 " << num(kWidth) << ' ' << num(kHeight) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num((kLeft + kRight) / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
     << escape(title) << "</text>\n";

  // Decade grid and labels.
  for (int d = lo; d <= hi; ++d) {
    const double y = py(std::pow(10.0, d));
    os << "<line class=\"grid\" x1=\"" << num(kLeft) << "\" y1=\"" << num(y) << "\" x2=\"" << num(kRight)
       << "\" y2=\"" << num(y) << "\" stroke=\"#dddddd\"/>\n";
    os << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">1e" << d
       << "</text>\n";
  }
  // x ticks at the data positions, thinned to at most 12 labels.
  std::vector<std::pair<double, std::string>> ticks;
  for (const auto* p : kept) {
    const double x = x_of(*p);
    if (std::none_of(ticks.begin(), ticks.end(), [&](const auto& t) { return t.first == x; })) {
      ticks.push_back({x, power_axis ? num(p->power_dbm) : p->value});
    }
  }
  std::sort(ticks.begin(), ticks.end());
  const std::size_t stride = (ticks.size() + 11) / 12;
  for (std::size_t i = 0; i < ticks.size(); i += stride) {
    const double x = px(ticks[i].first);
    std::string label = ticks[i].second;
    if (power_axis) {
      while (label.back() == '0') label.pop_back();
      if (label.back() == '.') label.pop_back();
    }
    os << "<line x1=\"" << num(x) << "\" y1=\"" << num(kBottom) << "\" x2=\"" << num(x) << "\" y2=\""
       << num(kBottom + 4) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(x) << "\" y=\"" << num(kBottom + 16) << "\" text-anchor=\"middle\">" << escape(label)
       << "</text>\n";
  }
  os << "<rect class=\"frame\" x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(kRight - kLeft)
     << "\" height=\"" << num(kBottom - kTop) << "\" fill=\"none\" stroke=\"black\"/>\n";
  const std::string axis_label = power_axis ? "transmit power (dBm)" : report.axis;
  os << "<text x=\"" << num((kLeft + kRight) / 2) << "\" y=\"" << num(kHeight - 14)
     << "\" text-anchor=\"middle\">" << escape(axis_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << num((kTop + kBottom) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << num((kTop + kBottom) / 2) << ")\">BER</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const Series& s = series[si];
    const char* color = color_for(si);
    os << "<polyline class=\"series " << escape(s.mode) << "\" fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < s.samples.size(); ++i) {
      os << (i ? " " : "") << num(px(s.samples[i].x)) << ',' << num(py(s.samples[i].ber));
    }
    os << "\"/>\n";
    for (const Sample& q : s.samples) {
      if (q.half_width > 0) {
        os << "<line class=\"whisker\" x1=\"" << num(px(q.x)) << "\" y1=\"" << num(py(q.ber + q.half_width))
           << "\" x2=\"" << num(px(q.x)) << "\" y2=\"" << num(py(q.ber - q.half_width)) << "\" stroke=\"" << color
           << "\"/>\n";
      }
      marker(os, s.mode, px(q.x), py(q.ber), color, q.ber <= 0);
    }
  }

  // Legend: one row per series, stacked in the top-right corner.
  const double lw = 96, lh = 8 + 16 * static_cast<double>(series.size());
  const double lx = kRight - lw - 8, ly = kTop + 8;
  os << "<rect class=\"legend\" x=\"" << num(lx) << "\" y=\"" << num(ly) << "\" width=\"" << num(lw)
     << "\" height=\"" << num(lh) << "\" fill=\"white\" stroke=\"#888888\"/>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const double y = ly + 12 + 16 * static_cast<double>(si);
    os << "<line x1=\"" << num(lx + 8) << "\" y1=\"" << num(y) << "\" x2=\"" << num(lx + 32) << "\" y2=\"" << num(y)
       << "\" stroke=\"" << color_for(si) << "\"/>\n";
    os << "<text class=\"legend-label\" x=\"" << num(lx + 40) << "\" y=\"" << num(y + 4) << "\">"
       << escape(series[si].mode == "dpsim" ? "DPSIM" : series[si].mode == "sim" ? "SIM" : series[si].mode)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace simofdm::cli
