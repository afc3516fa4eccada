#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tracekit/darc.hpp"
#include "tracekit/model.hpp"
#include "tracekit/tokenizer.hpp"

namespace tracekit {

class EmptyCalibration : public error {
  using error::error;
};
class NotCorrectlyPredicted : public error {
  using error::error;
};

// Which token-position buckets get traced. Quick runs restrict to
// {last_subject, last_token}; full runs trace every position.
using BucketFilter = std::array<bool, kBucketCount>;
using ComponentFilter = std::array<bool, kComponentCount>;

constexpr BucketFilter all_buckets() {
  BucketFilter f{};
  f.fill(true);
  return f;
}
constexpr ComponentFilter all_components() {
  ComponentFilter f{};
  f.fill(true);
  return f;
}

// "all" or a comma-separated list of bucket names
BucketFilter bucket_filter_from_spec(std::string_view spec);
std::string bucket_filter_spec(const BucketFilter& f);
ComponentFilter component_filter_from_spec(std::string_view spec);
std::string component_filter_spec(const ComponentFilter& f);

struct TraceConfig {
  double noise_scale_factor = 3.0;
  int noise_samples = 10;
  int window = 10;  // MlpOut/AttnOut restore across this many layers, clipped
  uint64_t seed = 42;
  int threads = 1;
  BucketFilter positions = all_buckets();
  ComponentFilter components = all_components();
};

// population std of token-embedding vector components over the calibration
// prompts' tokens, duplicates counted
double calibrate_noise(const ModelWeights& w,
                       const std::vector<std::vector<int>>& prompt_token_ids);
double calibrate_noise_text(const ModelWeights& w, const std::vector<std::string>& prompts,
                            const Vocab& vocab);

// First token of the object encoded with a leading space when the prompt does
// not end in whitespace; the bare encoding is accepted as a fallback.
struct ObjectTokens {
  int primary = -1;
  int raw = -1;
};
ObjectTokens resolve_object_tokens(const FactRecord& fact, const Vocab& vocab);

bool is_correct_prediction(const FactRecord& fact, const ModelWeights& w, const Vocab& vocab,
                           std::string* reason = nullptr);

struct FactTrace {
  std::string fact_key;
  std::string group;
  int seq_len = 0;
  int n_layer = 0;
  TokenSpan subject_span;
  std::vector<Bucket> buckets;        // per position
  std::vector<int> traced_positions;  // sorted
  int object_token_id = -1;
  double clean_p = 0;
  double corrupt_p_mean = 0;
  double total_effect = 0;  // clean_p - corrupt_p_mean
  // indexed (layer * seq_len + position) * 3 + component; NaN when untraced
  std::vector<double> ie;

  double ie_at(int layer, int position, Component c) const;
};

FactTrace trace_fact(const FactRecord& fact, const ModelWeights& w, const Vocab& vocab,
                     const TraceConfig& cfg, double sigma);

// mean IE over the fact's traced positions carrying the bucket label
std::optional<double> fact_bucket_mean(const FactTrace& ft, int layer, Bucket b, Component c);

struct AggregateCell {
  long long count = 0;
  double mean = 0;
  double m2 = 0;  // sum of squared deviations (single-pass)

  void update(double x);
  double stddev() const;  // sample stddev, 0 when count < 2
};

struct CategoryAggregate {
  std::string group;
  int n_layer = 0;
  double sigma = 0;
  std::vector<AggregateCell> cells;  // n_layer * bucket * component
  AggregateCell te;
  size_t total_facts = 0;
  size_t traced = 0;
  size_t skipped_wrong_prediction = 0;
  size_t skipped_subject_not_found = 0;
  size_t skipped_error = 0;
  std::vector<std::string> skip_log;

  AggregateCell& cell(int layer, Bucket b, Component c);
  const AggregateCell& cell(int layer, Bucket b, Component c) const;
};

CategoryAggregate trace_category(const std::vector<FactRecord>& facts, const ModelWeights& w,
                                 const Vocab& vocab, const TraceConfig& cfg, double sigma);

// collects the per-fact traces too (used by tests and --dump-facts)
CategoryAggregate trace_category_collect(const std::vector<FactRecord>& facts,
                                         const ModelWeights& w, const Vocab& vocab,
                                         const TraceConfig& cfg, double sigma,
                                         std::vector<FactTrace>* out_traces);

struct AggregateRow {
  int layer = 0;
  Bucket bucket = Bucket::LastSubject;
  Component component = Component::MlpOut;
  double mean_aie = 0;
  long long count = 0;
  double stddev = 0;
};

std::string aggregate_to_csv(const CategoryAggregate& agg);
std::vector<AggregateRow> parse_aggregate_csv(std::istream& in);
std::vector<AggregateRow> read_aggregate_csv(const std::string& path);

std::string aggregate_sidecar_json(const CategoryAggregate& agg, const TraceConfig& cfg,
                                   const std::string& model_id);

std::string fact_traces_to_csv(const std::vector<FactTrace>& traces);

}  // namespace tracekit
