#include "tracekit/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace tracekit {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
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

struct Rgb {
  int r, g, b;
};

Rgb lerp(Rgb a, Rgb b, double t) {
  auto mix = [&](int x, int y) { return int(std::lround(x + (y - x) * t)); };
  return {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
}

std::string hex(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

constexpr Rgb kLow{33, 102, 172};    // blue
constexpr Rgb kMid{247, 247, 247};   // near white
constexpr Rgb kHigh{178, 24, 43};    // red

}  // namespace

std::string color_for(double v, double lo, double hi) {
  if (std::isnan(v)) return "#cccccc";
  double t = (std::clamp(v, lo, hi) - lo) / (hi - lo);
  if (t < 0.5) return hex(lerp(kLow, kMid, t * 2));
  return hex(lerp(kMid, kHigh, (t - 0.5) * 2));
}

namespace {

void check_spec(const FigureSpec& spec) {
  if (!std::isfinite(spec.min_value) || !std::isfinite(spec.max_value) ||
      spec.min_value >= spec.max_value)
    throw error("figure bounds must be finite with min < max");
}

std::string svg_open(double width, double height, const std::string& title) {
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" +
                    num(width) + "\" height=\"" + num(height) + "\" viewBox=\"0 0 " +
                    num(width) + " " + num(height) + "\">\n";
  out += "<rect width=\"" + num(width) + "\" height=\"" + num(height) + "\" fill=\"#ffffff\"/>\n";
  out += "<text x=\"" + num(width / 2) +
         "\" y=\"18.000\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
         xml_escape(title) + "</text>\n";
  return out;
}

}  // namespace

std::string heatmap_svg(const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels,
                        const std::vector<double>& values, const FigureSpec& spec) {
  check_spec(spec);
  const size_t rows = row_labels.size(), cols = col_labels.size();
  if (rows == 0 || cols == 0) throw error("empty heatmap grid");
  if (values.size() != rows * cols) throw error("heatmap value count mismatch");

  const double cell = 24, ml = 120, mt = 36, mr = 16, mb = 80;
  const double width = ml + cols * cell + mr;
  const double height = mt + rows * cell + mb;

  std::vector<double> shown(values);
  if (spec.row_normalize) {
    for (size_t r = 0; r < rows; ++r) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (size_t c = 0; c < cols; ++c) {
        double v = values[r * cols + c];
        if (std::isnan(v)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      for (size_t c = 0; c < cols; ++c) {
        double v = values[r * cols + c];
        if (std::isnan(v)) continue;
        shown[r * cols + c] = hi > lo ? (v - lo) / (hi - lo) : 0.5;
      }
    }
  }
  const double lo = spec.row_normalize ? 0.0 : spec.min_value;
  const double hi = spec.row_normalize ? 1.0 : spec.max_value;

  std::string out = svg_open(width, height, spec.title);
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) {
      double raw = values[r * cols + c];
      out += "<rect class=\"cell\" x=\"" + num(ml + c * cell) + "\" y=\"" +
             num(mt + r * cell) + "\" width=\"" + num(cell) + "\" height=\"" + num(cell) +
             "\" fill=\"" + color_for(shown[r * cols + c], lo, hi) + "\"><title>" +
             xml_escape(row_labels[r]) + "," + xml_escape(col_labels[c]) + "," +
             (std::isnan(raw) ? std::string("undefined") : num(raw)) + "</title></rect>\n";
    }
  }
  for (size_t r = 0; r < rows; ++r)
    out += "<text class=\"rowlabel\" x=\"" + num(ml - 6) + "\" y=\"" +
           num(mt + r * cell + cell / 2 + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
           xml_escape(row_labels[r]) + "</text>\n";
  for (size_t c = 0; c < cols; ++c) {
    double x = ml + c * cell + cell / 2;
    double y = mt + rows * cell + 12;
    out += "<text class=\"collabel\" x=\"" + num(x) + "\" y=\"" + num(y) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-45 " +
           num(x) + " " + num(y) + ")\">" + xml_escape(col_labels[c]) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

std::string correlation_heatmap_svg(const CorrelationMatrix& m, const std::string& title) {
  std::vector<double> values;
  values.reserve(m.size() * m.size());
  for (size_t i = 0; i < m.size(); ++i)
    for (size_t j = 0; j < m.size(); ++j) {
      auto rho = m.at(i, j);
      values.push_back(rho ? *rho : std::numeric_limits<double>::quiet_NaN());
    }
  FigureSpec spec;
  spec.kind = FigureKind::CorrelationHeatmap;
  spec.title = title;
  spec.min_value = -1.0;
  spec.max_value = 1.0;
  return heatmap_svg(m.labels, m.labels, values, spec);
}

namespace {

double band_half_width(const LinePlotSeries& s, size_t l) {
  if (s.count[l] < 1) return 0;
  return 1.96 * s.stddev[l] / std::sqrt(double(s.count[l]));
}

const char* kPalette[] = {"#1b6ca8", "#c2403c", "#2e8540", "#8031a7",
                          "#b26a00", "#00707a", "#84394f", "#4d4d4d"};

}  // namespace

FigureSpec lineplot_spec(const std::vector<LinePlotSeries>& series, const std::string& title) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const LinePlotSeries& s : series)
    for (size_t l = 0; l < s.mean.size(); ++l) {
      double half = band_half_width(s, l);
      lo = std::min(lo, s.mean[l] - half);
      hi = std::max(hi, s.mean[l] + half);
    }
  if (!(lo < hi)) {
    lo -= 0.5;
    hi += 0.5;
  }
  double pad = (hi - lo) * 0.05;
  FigureSpec spec;
  spec.kind = FigureKind::AieLinePlot;
  spec.title = title;
  spec.min_value = lo - pad;
  spec.max_value = hi + pad;
  return spec;
}

std::string lineplot_svg(const std::vector<LinePlotSeries>& series, const FigureSpec& spec) {
  check_spec(spec);
  if (series.empty()) throw error("line plot needs at least one series");
  const size_t layers = series.front().mean.size();
  if (layers == 0) throw error("line plot needs at least one layer");
  for (const LinePlotSeries& s : series)
    if (s.mean.size() != layers || s.stddev.size() != layers || s.count.size() != layers)
      throw error("series '" + s.name + "' length mismatch");

  const double ml = 64, mt = 36, mr = 150, mb = 64;
  const double pw = 480, ph = 300;
  const double width = ml + pw + mr, height = mt + ph + mb;

  auto xpos = [&](size_t l) {
    return layers == 1 ? ml + pw / 2 : ml + double(l) * pw / double(layers - 1);
  };
  auto ypos = [&](double v) {
    return mt + (spec.max_value - v) / (spec.max_value - spec.min_value) * ph;
  };

  std::string out = svg_open(width, height, spec.title);
  out += "<rect x=\"" + num(ml) + "\" y=\"" + num(mt) + "\" width=\"" + num(pw) +
         "\" height=\"" + num(ph) + "\" fill=\"none\" stroke=\"#999999\"/>\n";

  for (int t = 0; t <= 4; ++t) {
    double v = spec.min_value + (spec.max_value - spec.min_value) * t / 4.0;
    char label[40];
    std::snprintf(label, sizeof label, "%.6g", v);
    out += "<text class=\"ytick\" x=\"" + num(ml - 8) + "\" y=\"" + num(ypos(v) + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + label +
           "</text>\n";
    out += "<line x1=\"" + num(ml - 4) + "\" y1=\"" + num(ypos(v)) + "\" x2=\"" + num(ml) +
           "\" y2=\"" + num(ypos(v)) + "\" stroke=\"#999999\"/>\n";
  }
  size_t xstep = layers > 12 ? (layers + 11) / 12 : 1;
  for (size_t l = 0; l < layers; l += xstep) {
    out += "<text class=\"xtick\" x=\"" + num(xpos(l)) + "\" y=\"" + num(mt + ph + 16) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
           std::to_string(l) + "</text>\n";
  }
  out += "<text x=\"" + num(ml + pw / 2) + "\" y=\"" + num(mt + ph + 34) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">layer</text>\n";

  for (size_t i = 0; i < series.size(); ++i) {
    const LinePlotSeries& s = series[i];
    const std::string color = kPalette[i % (sizeof kPalette / sizeof *kPalette)];

    std::string band = "<polygon class=\"band\" data-series=\"" + xml_escape(s.name) +
                       "\" fill=\"" + color + "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
    for (size_t l = 0; l < layers; ++l)
      band += num(xpos(l)) + "," + num(ypos(s.mean[l] + band_half_width(s, l))) + " ";
    for (size_t l = layers; l-- > 0;)
      band += num(xpos(l)) + "," + num(ypos(s.mean[l] - band_half_width(s, l))) + " ";
    band.pop_back();
    out += band + "\"/>\n";

    std::string line = "<polyline class=\"line\" data-series=\"" + xml_escape(s.name) +
                       "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"";
    for (size_t l = 0; l < layers; ++l) line += num(xpos(l)) + "," + num(ypos(s.mean[l])) + " ";
    line.pop_back();
    out += line + "\"/>\n";

    double ly = mt + 14 + double(i) * 16;
    out += "<rect x=\"" + num(ml + pw + 12) + "\" y=\"" + num(ly - 8) +
           "\" width=\"12.000\" height=\"12.000\" fill=\"" + color + "\"/>\n";
    out += "<text class=\"legend\" x=\"" + num(ml + pw + 28) + "\" y=\"" + num(ly + 2) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + xml_escape(s.name) + "</text>\n";
  }

  out += "<text class=\"footer\" x=\"" + num(ml) + "\" y=\"" + num(height - 10) +
         "\" font-family=\"sans-serif\" font-size=\"10\">band: mean +/- 1.96*stddev/sqrt(count)"
         "</text>\n";
  out += "</svg>\n";
  return out;
}

std::string max_aie_table(const std::vector<MaxAieRow>& rows) {
  std::string out = "subcategory mlp_layer mlp_aie attn_layer attn_aie\n";
  for (const MaxAieRow& r : rows) {
    auto [ml, mv] = max_aie_layer(r.mlp_last_subject);
    auto [al, av] = max_aie_layer(r.attn_last_token);
    out += r.name + " " + std::to_string(ml) + " " + num(mv) + " " + std::to_string(al) + " " +
           num(av) + "\n";
  }
  return out;
}

}  // namespace tracekit
