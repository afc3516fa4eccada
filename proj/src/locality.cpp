#include "tracekit/locality.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace tracekit {

std::vector<double> average_ranks(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    double shared = (double(i) + double(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size())
    throw LengthMismatch("vector lengths differ: " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()));
  if (x.size() < 2) throw LengthMismatch("need at least 2 values");
  auto constant = [](const std::vector<double>& v) {
    for (double e : v)
      if (e != v.front()) return false;
    return true;
  };
  if (constant(x) || constant(y)) return std::nullopt;
  std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double cov = 0, vx = 0, vy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    double dx = rx[i] - mx, dy = ry[i] - my;
    cov += dx * dy;
    vx += dx * dx;
    vy += dy * dy;
  }
  double rho = cov / std::sqrt(vx * vy);
  return std::clamp(rho, -1.0, 1.0);
}

LayerImportanceVector layer_vector_from_rows(const std::vector<AggregateRow>& rows, Bucket b,
                                             Component c, int n_layer,
                                             const std::string& label) {
  LayerImportanceVector v;
  v.label = label;
  v.bucket = b;
  v.component = c;
  v.values.assign(size_t(n_layer), std::numeric_limits<double>::quiet_NaN());
  for (const AggregateRow& r : rows) {
    if (r.bucket != b || r.component != c) continue;
    if (r.layer < 0 || r.layer >= n_layer)
      throw error("layer " + std::to_string(r.layer) + " outside 0.." +
                  std::to_string(n_layer - 1));
    v.values[size_t(r.layer)] = r.mean_aie;
  }
  for (int l = 0; l < n_layer; ++l)
    if (std::isnan(v.values[size_t(l)]))
      throw error(label + ": no aggregate row for layer " + std::to_string(l) + ", bucket " +
                  bucket_name(b) + ", component " + component_name(c));
  return v;
}

std::pair<int, double> max_aie_layer(const std::vector<double>& values) {
  if (values.empty()) throw error("empty layer vector");
  int best = 0;
  for (int l = 1; l < int(values.size()); ++l)
    if (values[size_t(l)] > values[size_t(best)]) best = l;
  return {best, values[size_t(best)]};
}

int CorrelationMatrix::index_of(const std::string& label) const {
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return int(i);
  return -1;
}

CorrelationMatrix pairwise_matrix(const std::vector<LayerImportanceVector>& vectors) {
  CorrelationMatrix m;
  const size_t n = vectors.size();
  m.labels.reserve(n);
  for (const auto& v : vectors) m.labels.push_back(v.label);
  m.rho.assign(n * n, std::nullopt);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i; j < n; ++j) {
      std::optional<double> rho = spearman(vectors[i].values, vectors[j].values);
      m.rho[i * n + j] = rho;
      m.rho[j * n + i] = rho;
    }
  }
  return m;
}

namespace {

PairAverage reduce_pairs(const std::vector<std::optional<double>>& picked) {
  PairAverage out;
  double sum = 0;
  for (const auto& rho : picked) {
    if (!rho) {
      ++out.undefined;
      continue;
    }
    sum += *rho;
    ++out.pairs;
  }
  if (out.pairs == 0)
    throw EmptyComparison("no defined pairs to average (" + std::to_string(out.undefined) +
                          " undefined)");
  out.mean = sum / double(out.pairs);
  return out;
}

int require_member(const CorrelationMatrix& m, const std::string& label) {
  int i = m.index_of(label);
  if (i < 0) throw error("label '" + label + "' not in matrix");
  return i;
}

}  // namespace

PairAverage intra_category_avg(const CorrelationMatrix& m,
                               const std::vector<std::string>& members) {
  std::vector<std::optional<double>> picked;
  for (size_t a = 0; a < members.size(); ++a) {
    int i = require_member(m, members[a]);
    for (size_t b = a + 1; b < members.size(); ++b)
      picked.push_back(m.at(size_t(i), size_t(require_member(m, members[b]))));
  }
  if (picked.empty()) throw EmptyComparison("fewer than two members");
  return reduce_pairs(picked);
}

PairAverage inter_category_avg(const CorrelationMatrix& m, const std::vector<std::string>& a,
                               const std::vector<std::string>& b,
                               const std::set<std::string>& shared) {
  std::vector<std::optional<double>> picked;
  for (const std::string& la : a) {
    if (shared.count(la)) continue;
    int i = require_member(m, la);
    for (const std::string& lb : b) {
      if (shared.count(lb)) continue;
      picked.push_back(m.at(size_t(i), size_t(require_member(m, lb))));
    }
  }
  if (picked.empty()) throw EmptyComparison("no pairs left after exclusions");
  return reduce_pairs(picked);
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string matrix_to_csv(const CorrelationMatrix& m) {
  std::string out;
  for (const std::string& l : m.labels) {
    out += ',';
    out += l;
  }
  out += '\n';
  for (size_t i = 0; i < m.size(); ++i) {
    out += m.labels[i];
    for (size_t j = 0; j < m.size(); ++j) {
      out += ',';
      if (auto rho = m.at(i, j)) out += fmt_double(*rho);
    }
    out += '\n';
  }
  return out;
}

namespace {

// keeps empty trailing fields, unlike getline on a drained stream
std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> out;
  size_t pos = 0;
  for (;;) {
    size_t comma = line.find(',', pos);
    if (comma == std::string::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
}

}  // namespace

CorrelationMatrix parse_matrix_csv(std::istream& in) {
  CorrelationMatrix m;
  std::string line;
  if (!std::getline(in, line)) throw error("empty matrix CSV");
  {
    std::vector<std::string> cells = split_cells(line);
    if (cells.empty() || !cells.front().empty())
      throw error("matrix CSV must start with an empty corner cell");
    m.labels.assign(cells.begin() + 1, cells.end());
  }
  const size_t n = m.labels.size();
  if (n == 0) throw error("matrix CSV has no labels");
  m.rho.assign(n * n, std::nullopt);
  size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (row >= n) throw error("matrix CSV has more rows than labels");
    std::vector<std::string> cells = split_cells(line);
    if (cells.size() != n + 1) throw error("bad cell count in row " + std::to_string(row + 1));
    if (cells[0] != m.labels[row]) throw error("row label '" + cells[0] + "' out of order");
    for (size_t j = 0; j < n; ++j)
      if (!cells[j + 1].empty()) m.rho[row * n + j] = std::stod(cells[j + 1]);
    ++row;
  }
  if (row != n) throw error("matrix CSV has fewer rows than labels");
  return m;
}

CorrelationMatrix read_matrix_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw error("cannot open '" + path + "'");
  return parse_matrix_csv(f);
}

}  // namespace tracekit
