#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "tracekit/report.hpp"
#include "tracekit/rng.hpp"

using namespace tracekit;

namespace {

size_t count_of(const std::string& hay, const std::string& needle) {
  size_t n = 0, pos = 0;
  while ((pos = hay.find(needle, pos)) != std::string::npos) {
    ++n;
    pos += needle.size();
  }
  return n;
}

// tick label text paired with the exact pixel of its tick mark
struct Tick {
  double value;
  double y;
};

std::vector<Tick> parse_yticks(const std::string& svg) {
  std::vector<Tick> out;
  size_t pos = 0;
  while ((pos = svg.find("class=\"ytick\"", pos)) != std::string::npos) {
    size_t gt = svg.find('>', pos);
    size_t lt = svg.find('<', gt);
    Tick t;
    t.value = std::stod(svg.substr(gt + 1, lt - gt - 1));
    size_t y1 = svg.find("y1=\"", lt);
    REQUIRE(y1 != std::string::npos);
    t.y = std::stod(svg.substr(y1 + 4));
    out.push_back(t);
    pos = lt;
  }
  return out;
}

std::vector<std::pair<double, double>> parse_points(const std::string& svg,
                                                    const std::string& cls,
                                                    const std::string& series) {
  std::string key = "class=\"" + cls + "\" data-series=\"" + series + "\"";
  size_t pos = svg.find(key);
  REQUIRE(pos != std::string::npos);
  size_t p0 = svg.find("points=\"", pos);
  REQUIRE(p0 != std::string::npos);
  p0 += 8;
  size_t p1 = svg.find('"', p0);
  std::istringstream in(svg.substr(p0, p1 - p0));
  std::vector<std::pair<double, double>> pts;
  std::string pair;
  while (in >> pair) {
    size_t comma = pair.find(',');
    pts.emplace_back(std::stod(pair.substr(0, comma)), std::stod(pair.substr(comma + 1)));
  }
  return pts;
}

CorrelationMatrix square(std::vector<std::string> labels, std::vector<double> entries) {
  CorrelationMatrix m;
  m.labels = std::move(labels);
  for (double e : entries) m.rho.push_back(e);
  return m;
}

}  // namespace

TEST_CASE("the recorded crow statistics format to the expected row") {
  MaxAieRow crow;
  crow.name = "Am. Crow";
  crow.mlp_last_subject.assign(48, 0.01);
  crow.mlp_last_subject[5] = 0.142;
  crow.attn_last_token.assign(48, 0.003);
  crow.attn_last_token[27] = 0.087;
  std::string table = max_aie_table({crow});
  std::istringstream in(table);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "subcategory mlp_layer mlp_aie attn_layer attn_aie");
  CHECK(row == "Am. Crow 5 0.142 27 0.087");
}

TEST_CASE("a baseline style fixture reports its max layers") {
  MaxAieRow base;
  base.name = "Baseline";
  base.mlp_last_subject.assign(48, 0.0);
  base.mlp_last_subject[17] = 0.2015;
  base.attn_last_token.assign(48, 0.0);
  base.attn_last_token[31] = 0.0444;
  std::string table = max_aie_table({base});
  CHECK(table.find("Baseline 17 0.202 31 0.044\n") != std::string::npos);
}

TEST_CASE("an empty table is just the header") {
  CHECK(max_aie_table({}) == "subcategory mlp_layer mlp_aie attn_layer attn_aie\n");
}

TEST_CASE("the color scale hits its anchors") {
  CHECK(color_for(-1, -1, 1) == "#2166ac");
  CHECK(color_for(0, -1, 1) == "#f7f7f7");
  CHECK(color_for(1, -1, 1) == "#b2182b");
  CHECK(color_for(5, -1, 1) == "#b2182b");
  CHECK(color_for(std::nan(""), -1, 1) == "#cccccc");
}

TEST_CASE("a single perfect correlation renders one full-intensity cell") {
  CorrelationMatrix m = square({"solo"}, {1.0});
  std::string svg = correlation_heatmap_svg(m, "solo map");
  CHECK(count_of(svg, "class=\"cell\"") == 1);
  CHECK(svg.find("fill=\"#b2182b\"") != std::string::npos);
  CHECK(svg.find("<title>solo,solo,1.000</title>") != std::string::npos);
  CHECK(svg.rfind("<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\"", 0) == 0);
}

TEST_CASE("symmetric matrices render identically after transposition") {
  CorrelationMatrix m = square({"a", "b", "c"},
                               {1.0, 0.25, -0.5,
                                0.25, 1.0, 0.75,
                                -0.5, 0.75, 1.0});
  CorrelationMatrix t = m;
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 3; ++j) t.rho[i * 3 + j] = m.rho[j * 3 + i];
  CHECK(correlation_heatmap_svg(m, "x") == correlation_heatmap_svg(t, "x"));
}

TEST_CASE("undefined correlations render gray with a marker title") {
  CorrelationMatrix m = square({"a", "b"}, {1.0, 0.0, 0.0, 1.0});
  m.rho[1] = std::nullopt;
  m.rho[2] = std::nullopt;
  std::string svg = correlation_heatmap_svg(m, "gaps");
  CHECK(count_of(svg, "fill=\"#cccccc\"") == 2);
  CHECK(count_of(svg, ",undefined</title>") == 2);
}

TEST_CASE("emissions are byte-identical across calls") {
  CorrelationMatrix m = square({"p", "q"}, {1.0, 0.3, 0.3, 1.0});
  CHECK(correlation_heatmap_svg(m, "t") == correlation_heatmap_svg(m, "t"));

  LinePlotSeries s;
  s.name = "only";
  s.mean = {0.1, 0.3, 0.2};
  s.stddev = {0.05, 0.05, 0.05};
  s.count = {9, 9, 9};
  FigureSpec spec = lineplot_spec({s}, "t");
  CHECK(lineplot_svg({s}, spec) == lineplot_svg({s}, spec));
}

TEST_CASE("row normalization rescales colors but keeps raw values in titles") {
  FigureSpec spec;
  spec.kind = FigureKind::LayerImportanceHeatmap;
  spec.title = "imp";
  spec.min_value = 0;
  spec.max_value = 1;
  spec.row_normalize = true;
  std::string svg = heatmap_svg({"r1", "r2"}, {"0", "1", "2"},
                                {0.1, 0.2, 0.3, 5.0, 5.0, 10.0}, spec);
  CHECK(svg.find("<title>r1,0,0.100</title>") != std::string::npos);
  CHECK(svg.find("<title>r2,2,10.000</title>") != std::string::npos);
  // each row spans the full scale independently
  CHECK(count_of(svg, "fill=\"#2166ac\"") >= 2);
  CHECK(count_of(svg, "fill=\"#b2182b\"") >= 2);
}

TEST_CASE("heatmap input rules are enforced") {
  FigureSpec spec;
  spec.min_value = 0;
  spec.max_value = 1;
  CHECK_THROWS_AS(heatmap_svg({}, {"c"}, {}, spec), error);
  CHECK_THROWS_AS(heatmap_svg({"r"}, {"c"}, {0.1, 0.2}, spec), error);
  spec.max_value = 0;
  CHECK_THROWS_AS(heatmap_svg({"r"}, {"c"}, {0.1}, spec), error);
}

TEST_CASE("confidence bands recover from the emitted coordinates") {
  LinePlotSeries a;
  a.name = "group a";
  LinePlotSeries b;
  b.name = "group b";
  for (int l = 0; l < 6; ++l) {
    a.mean.push_back(0.01 + 0.02 * l);
    a.stddev.push_back(0.05 + 0.01 * l);
    a.count.push_back(25);
    b.mean.push_back(0.12 - 0.015 * l);
    b.stddev.push_back(0.03);
    b.count.push_back(16);
  }
  FigureSpec spec = lineplot_spec({a, b}, "bands");
  std::string svg = lineplot_svg({a, b}, spec);

  std::vector<Tick> ticks = parse_yticks(svg);
  REQUIRE(ticks.size() == 5);
  auto value_at = [&](double y) {
    const Tick& t0 = ticks.front();
    const Tick& t1 = ticks.back();
    return t0.value + (y - t0.y) * (t1.value - t0.value) / (t1.y - t0.y);
  };

  for (const LinePlotSeries& s : {a, b}) {
    auto band = parse_points(svg, "band", s.name);
    auto line = parse_points(svg, "line", s.name);
    REQUIRE(band.size() == 12);
    REQUIRE(line.size() == 6);
    for (size_t l = 0; l < 6; ++l) {
      double want_half = 1.96 * s.stddev[l] / std::sqrt(double(s.count[l]));
      double upper = value_at(band[l].second);
      double lower = value_at(band[11 - l].second);
      CHECK(band[l].first == band[11 - l].first);
      CHECK(std::abs(value_at(line[l].second) - s.mean[l]) < 1e-4);
      CHECK(std::abs((upper - lower) / 2 - want_half) < 1e-4);
      CHECK(std::abs((upper + lower) / 2 - s.mean[l]) < 1e-4);
    }
  }
  CHECK(svg.find("band: mean +/- 1.96*stddev/sqrt(count)") != std::string::npos);
  CHECK(count_of(svg, "class=\"legend\"") == 2);
}

TEST_CASE("count one and constant series degenerate cleanly") {
  LinePlotSeries s;
  s.name = "flat";
  s.mean = {0.2, 0.2, 0.2};
  s.stddev = {0.0, 0.0, 0.0};
  s.count = {1, 1, 1};
  FigureSpec spec = lineplot_spec({s}, "flat");
  CHECK(spec.min_value < spec.max_value);
  std::string svg = lineplot_svg({s}, spec);
  auto band = parse_points(svg, "band", "flat");
  auto line = parse_points(svg, "line", "flat");
  REQUIRE(band.size() == 6);
  for (size_t l = 0; l < 3; ++l) CHECK(band[l].second == band[5 - l].second);
  CHECK(line[0].second == line[1].second);
  CHECK(line[1].second == line[2].second);
}

TEST_CASE("a committed golden heatmap stays reproducible") {
  SplitMix64 rng(8881);
  std::vector<LayerImportanceVector> vecs;
  for (int i = 0; i < 8; ++i) {
    LayerImportanceVector v;
    v.label = "sub" + std::to_string(i + 1);
    for (int l = 0; l < 12; ++l) v.values.push_back(rng.next_double());
    vecs.push_back(v);
  }
  std::string svg = correlation_heatmap_svg(pairwise_matrix(vecs), "eight subcategories");
  std::ifstream f(std::string(FIXTURE_DIR) + "/golden/heatmap8.svg", std::ios::binary);
  REQUIRE(f.good());
  std::stringstream buf;
  buf << f.rdbuf();
  CHECK(svg == buf.str());
}
