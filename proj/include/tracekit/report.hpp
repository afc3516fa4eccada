#pragma once

#include <string>
#include <vector>

#include "tracekit/locality.hpp"

namespace tracekit {

enum class FigureKind : uint8_t { CorrelationHeatmap, LayerImportanceHeatmap, AieLinePlot };

struct FigureSpec {
  FigureKind kind = FigureKind::CorrelationHeatmap;
  std::string title;
  double min_value = -1.0;  // color scale for heatmaps, y axis for line plots
  double max_value = 1.0;
  bool row_normalize = false;  // layer-importance grids: per-row min-max
};

// Diverging blue/white/red scale; v clamped to [lo, hi]. NaN gets a flat
// gray so missing cells stay visible.
std::string color_for(double v, double lo, double hi);

// Grid heatmap, values row-major, NaN = missing cell. Valid standalone
// SVG 1.1, byte-deterministic for identical inputs.
std::string heatmap_svg(const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels,
                        const std::vector<double>& values, const FigureSpec& spec);

std::string correlation_heatmap_svg(const CorrelationMatrix& m, const std::string& title);

struct LinePlotSeries {
  std::string name;
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<long long> count;
};

// y bounds covering every mean +- its confidence band, padded 5%
FigureSpec lineplot_spec(const std::vector<LinePlotSeries>& series, const std::string& title);

// One line per series over layers, shaded 95% normal CI band
// (mean +- 1.96*stddev/sqrt(count)); the formula is printed in the footer.
std::string lineplot_svg(const std::vector<LinePlotSeries>& series, const FigureSpec& spec);

struct MaxAieRow {
  std::string name;
  std::vector<double> mlp_last_subject;  // AIE per layer
  std::vector<double> attn_last_token;
};

// One line per subcategory: name, MLP max layer and value at the last
// subject token, attention max layer and value at the last token.
// Values print with 3 decimals, columns join with single spaces.
std::string max_aie_table(const std::vector<MaxAieRow>& rows);

}  // namespace tracekit
