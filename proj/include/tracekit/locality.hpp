#pragma once

#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tracekit/tracing.hpp"

namespace tracekit {

class LengthMismatch : public error {
  using error::error;
};
class EmptyComparison : public error {
  using error::error;
};

// Average (fractional) ranks, 1-based; ties share the mean of their ranks.
std::vector<double> average_ranks(const std::vector<double>& x);

// Pearson correlation of average ranks. nullopt when either vector is
// constant: the ordering is undefined, which is not the same as rho 0.
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

struct LayerImportanceVector {
  std::string label;  // subcategory name
  Bucket bucket = Bucket::LastSubject;
  Component component = Component::MlpOut;
  std::vector<double> values;  // AIE per layer
};

// Builds one per-layer vector out of aggregate rows. Every layer must be
// present for the requested (bucket, component).
LayerImportanceVector layer_vector_from_rows(const std::vector<AggregateRow>& rows, Bucket b,
                                             Component c, int n_layer,
                                             const std::string& label);

// First index attaining the maximum; ties break toward the lowest layer.
std::pair<int, double> max_aie_layer(const std::vector<double>& values);

struct CorrelationMatrix {
  std::vector<std::string> labels;
  std::vector<std::optional<double>> rho;  // row-major, square; nullopt undefined

  size_t size() const { return labels.size(); }
  std::optional<double> at(size_t i, size_t j) const { return rho[i * labels.size() + j]; }
  int index_of(const std::string& label) const;  // -1 if absent
};

CorrelationMatrix pairwise_matrix(const std::vector<LayerImportanceVector>& vectors);

struct PairAverage {
  double mean = 0;
  size_t pairs = 0;      // defined pairs included in the mean
  size_t undefined = 0;  // degenerate pairs excluded from the mean
};

// Mean rho over unordered distinct pairs within members, diagonal excluded.
PairAverage intra_category_avg(const CorrelationMatrix& m,
                               const std::vector<std::string>& members);

// Mean rho over all (a, b) with a in A minus shared, b in B minus shared.
PairAverage inter_category_avg(const CorrelationMatrix& m, const std::vector<std::string>& a,
                               const std::vector<std::string>& b,
                               const std::set<std::string>& shared);

std::string matrix_to_csv(const CorrelationMatrix& m);
CorrelationMatrix parse_matrix_csv(std::istream& in);
CorrelationMatrix read_matrix_csv(const std::string& path);

}  // namespace tracekit
