#include "tracekit/tracing.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "tracekit/rng.hpp"

namespace tracekit {

using nlohmann::json;

namespace {

std::vector<std::string> split_csv_list(std::string_view spec) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos <= spec.size()) {
    size_t comma = spec.find(',', pos);
    if (comma == std::string_view::npos) comma = spec.size();
    std::string item(spec.substr(pos, comma - pos));
    size_t a = item.find_first_not_of(" \t");
    size_t b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
    pos = comma + 1;
  }
  return out;
}

}  // namespace

BucketFilter bucket_filter_from_spec(std::string_view spec) {
  if (spec == "all" || spec.empty()) return all_buckets();
  BucketFilter f{};
  for (const std::string& name : split_csv_list(spec)) f[size_t(bucket_from_name(name))] = true;
  return f;
}

std::string bucket_filter_spec(const BucketFilter& f) {
  if (f == all_buckets()) return "all";
  std::string out;
  for (int b = 0; b < kBucketCount; ++b) {
    if (!f[size_t(b)]) continue;
    if (!out.empty()) out += ',';
    out += bucket_name(Bucket(b));
  }
  return out;
}

ComponentFilter component_filter_from_spec(std::string_view spec) {
  if (spec == "all" || spec.empty()) return all_components();
  ComponentFilter f{};
  for (const std::string& name : split_csv_list(spec))
    f[size_t(component_from_name(name))] = true;
  return f;
}

std::string component_filter_spec(const ComponentFilter& f) {
  if (f == all_components()) return "all";
  std::string out;
  for (int c = 0; c < kComponentCount; ++c) {
    if (!f[size_t(c)]) continue;
    if (!out.empty()) out += ',';
    out += component_name(Component(c));
  }
  return out;
}

double calibrate_noise(const ModelWeights& w,
                       const std::vector<std::vector<int>>& prompt_token_ids) {
  long long tokens = 0;
  for (const auto& ids : prompt_token_ids) tokens += (long long)ids.size();
  if (tokens < 100)
    throw EmptyCalibration("need at least 100 calibration tokens, got " + std::to_string(tokens));
  long long count = 0;
  double mean = 0, m2 = 0;
  for (const auto& ids : prompt_token_ids)
    for (int id : ids) {
      if (id < 0 || id >= w.config.vocab_size) throw UnknownId(id);
      for (int c = 0; c < w.config.d_model; ++c) {
        double x = w.wte(id, c);
        ++count;
        double delta = x - mean;
        mean += delta / double(count);
        m2 += delta * (x - mean);
      }
    }
  return std::sqrt(m2 / double(count));
}

double calibrate_noise_text(const ModelWeights& w, const std::vector<std::string>& prompts,
                            const Vocab& vocab) {
  std::vector<std::vector<int>> ids;
  ids.reserve(prompts.size());
  for (const std::string& p : prompts) ids.push_back(encode(p, vocab));
  return calibrate_noise(w, ids);
}

namespace {

bool ends_with_whitespace(const std::string& s) {
  return !s.empty() && std::isspace(static_cast<unsigned char>(s.back()));
}

double prob_from_logits(const VectorF& logits, int id) {
  Eigen::VectorXd z = logits.cast<double>();
  double mx = z.maxCoeff();
  z = (z.array() - mx).exp();
  return z(id) / z.sum();
}

int argmax_of(const VectorF& logits) {
  int arg = 0;
  logits.maxCoeff(&arg);
  return arg;
}

}  // namespace

ObjectTokens resolve_object_tokens(const FactRecord& fact, const Vocab& vocab) {
  if (fact.prediction.empty()) throw error("fact has an empty prediction");
  ObjectTokens out;
  std::vector<int> raw = encode(fact.prediction, vocab);
  out.raw = raw.front();
  if (ends_with_whitespace(fact.prompt)) {
    out.primary = out.raw;
  } else {
    std::vector<int> spaced = encode(" " + fact.prediction, vocab);
    out.primary = spaced.front();
  }
  return out;
}

bool is_correct_prediction(const FactRecord& fact, const ModelWeights& w, const Vocab& vocab,
                           std::string* reason) {
  try {
    std::vector<int> tokens = encode(fact.prompt, vocab);
    VectorF logits = forward(tokens, w).final_logits;
    int arg = argmax_of(logits);
    ObjectTokens obj = resolve_object_tokens(fact, vocab);
    if (arg == obj.primary) return true;
    if (arg == obj.raw) return true;  // bare-encoding fallback
    if (reason)
      *reason = "argmax " + std::to_string(arg) + " is not the object token " +
                std::to_string(obj.primary);
    return false;
  } catch (const error& e) {
    if (reason) *reason = e.what();
    return false;
  }
}

double FactTrace::ie_at(int layer, int position, Component c) const {
  return ie[size_t((layer * seq_len + position) * kComponentCount + int(c))];
}

namespace {

MatrixRM draw_noise(uint64_t seed, int rows, int cols, double scale) {
  GaussianRng g(seed);
  MatrixRM m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = float(g.next() * scale);
  return m;
}

std::vector<int> pick_positions(const std::vector<Bucket>& buckets, const BucketFilter& filter) {
  std::vector<int> out;
  for (int p = 0; p < int(buckets.size()); ++p)
    if (filter[size_t(buckets[size_t(p)])]) out.push_back(p);
  return out;
}

}  // namespace

FactTrace trace_fact(const FactRecord& fact, const ModelWeights& w, const Vocab& vocab,
                     const TraceConfig& cfg, double sigma) {
  if (cfg.noise_samples < 1) throw error("noise_samples must be >= 1");
  if (cfg.window < 1) throw error("window must be >= 1");
  const ModelConfig& mc = w.config;
  FactTrace ft;
  ft.fact_key = fact.key();
  ft.group = fact.group;

  std::vector<int> tokens = encode(fact.prompt, vocab);
  ft.seq_len = int(tokens.size());
  ft.n_layer = mc.n_layer;
  ft.subject_span = locate_subject(fact.prompt, fact.subject, vocab);
  ft.buckets = bucketize(ft.subject_span, ft.seq_len).assignment;

  ForwardResult clean = forward(tokens, w, nullptr, true);
  int arg = argmax_of(clean.final_logits);
  ObjectTokens obj = resolve_object_tokens(fact, vocab);
  if (arg == obj.primary)
    ft.object_token_id = obj.primary;
  else if (arg == obj.raw)
    ft.object_token_id = obj.raw;
  else
    throw NotCorrectlyPredicted("fact " + ft.fact_key + ": argmax " + std::to_string(arg) +
                                " does not match object token " + std::to_string(obj.primary));
  ft.clean_p = prob_from_logits(clean.final_logits, ft.object_token_id);

  const int span_len = ft.subject_span.length();
  const double scale = cfg.noise_scale_factor * sigma;
  std::vector<MatrixRM> noise(size_t(cfg.noise_samples));
  std::vector<double> corrupt_p(size_t(cfg.noise_samples));
  double corrupt_sum = 0;
  for (int s = 0; s < cfg.noise_samples; ++s) {
    noise[size_t(s)] =
        draw_noise(derive_seed(cfg.seed, ft.fact_key, uint64_t(s)), span_len, mc.d_model, scale);
    InterventionSet iv;
    iv.embedding_noise = EmbeddingNoise{ft.subject_span, noise[size_t(s)]};
    VectorF logits = forward(tokens, w, &iv).final_logits;
    corrupt_p[size_t(s)] = prob_from_logits(logits, ft.object_token_id);
    corrupt_sum += corrupt_p[size_t(s)];
  }
  ft.corrupt_p_mean = corrupt_sum / cfg.noise_samples;
  ft.total_effect = ft.clean_p - ft.corrupt_p_mean;

  ft.traced_positions = pick_positions(ft.buckets, cfg.positions);
  ft.ie.assign(size_t(mc.n_layer) * size_t(ft.seq_len) * kComponentCount,
               std::numeric_limits<double>::quiet_NaN());

  for (int l = 0; l < mc.n_layer; ++l) {
    for (int p : ft.traced_positions) {
      for (int ci = 0; ci < kComponentCount; ++ci) {
        if (!cfg.components[size_t(ci)]) continue;
        Component c = Component(ci);
        std::vector<Restoration> rest;
        if (c == Component::Residual) {
          rest.push_back({l, p, c, &*clean.cache});
        } else {
          int lo = std::max(0, l - cfg.window / 2);
          int hi = std::min(mc.n_layer, l + cfg.window - cfg.window / 2);
          for (int L = lo; L < hi; ++L) rest.push_back({L, p, c, &*clean.cache});
        }
        double acc = 0;
        for (int s = 0; s < cfg.noise_samples; ++s) {
          InterventionSet iv;
          iv.embedding_noise = EmbeddingNoise{ft.subject_span, noise[size_t(s)]};
          iv.restorations = rest;
          VectorF logits = forward(tokens, w, &iv).final_logits;
          acc += prob_from_logits(logits, ft.object_token_id) - corrupt_p[size_t(s)];
        }
        ft.ie[size_t((l * ft.seq_len + p) * kComponentCount + ci)] = acc / cfg.noise_samples;
      }
    }
  }
  return ft;
}

std::optional<double> fact_bucket_mean(const FactTrace& ft, int layer, Bucket b, Component c) {
  double sum = 0;
  int n = 0;
  for (int p : ft.traced_positions) {
    if (ft.buckets[size_t(p)] != b) continue;
    double v = ft.ie_at(layer, p, c);
    if (std::isnan(v)) continue;
    sum += v;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

void AggregateCell::update(double x) {
  ++count;
  double delta = x - mean;
  mean += delta / double(count);
  m2 += delta * (x - mean);
}

double AggregateCell::stddev() const {
  if (count < 2) return 0;
  return std::sqrt(m2 / double(count - 1));
}

AggregateCell& CategoryAggregate::cell(int layer, Bucket b, Component c) {
  return cells[size_t((layer * kBucketCount + int(b)) * kComponentCount + int(c))];
}

const AggregateCell& CategoryAggregate::cell(int layer, Bucket b, Component c) const {
  return cells[size_t((layer * kBucketCount + int(b)) * kComponentCount + int(c))];
}

CategoryAggregate trace_category_collect(const std::vector<FactRecord>& facts,
                                         const ModelWeights& w, const Vocab& vocab,
                                         const TraceConfig& cfg, double sigma,
                                         std::vector<FactTrace>* out_traces) {
  CategoryAggregate agg;
  agg.group = facts.empty() ? "" : facts.front().group;
  agg.n_layer = w.config.n_layer;
  agg.sigma = sigma;
  agg.total_facts = facts.size();
  agg.cells.assign(size_t(agg.n_layer) * kBucketCount * kComponentCount, {});

  struct Outcome {
    enum Kind { Ok, WrongPrediction, NoSubject, Failed } kind = Ok;
    std::optional<FactTrace> trace;
    std::string reason;
  };
  std::vector<Outcome> outcomes(facts.size());

  auto run_one = [&](size_t i) {
    Outcome& o = outcomes[i];
    try {
      o.trace = trace_fact(facts[i], w, vocab, cfg, sigma);
    } catch (const NotCorrectlyPredicted& e) {
      o.kind = Outcome::WrongPrediction;
      o.reason = e.what();
    } catch (const SubjectNotFound& e) {
      o.kind = Outcome::NoSubject;
      o.reason = e.what();
    } catch (const std::exception& e) {
      o.kind = Outcome::Failed;
      o.reason = e.what();
    }
  };

  int threads = std::max(1, cfg.threads);
  if (threads == 1 || facts.size() <= 1) {
    for (size_t i = 0; i < facts.size(); ++i) run_one(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (;;) {
          size_t i = next.fetch_add(1);
          if (i >= facts.size()) return;
          run_one(i);
        }
      });
    for (auto& th : pool) th.join();
  }

  // reduction stays in fact order so thread count cannot reorder the sums
  for (size_t i = 0; i < facts.size(); ++i) {
    Outcome& o = outcomes[i];
    switch (o.kind) {
      case Outcome::WrongPrediction: ++agg.skipped_wrong_prediction; break;
      case Outcome::NoSubject: ++agg.skipped_subject_not_found; break;
      case Outcome::Failed: ++agg.skipped_error; break;
      case Outcome::Ok: break;
    }
    if (o.kind != Outcome::Ok) {
      agg.skip_log.push_back(facts[i].key() + ": " + o.reason);
      continue;
    }
    const FactTrace& ft = *o.trace;
    ++agg.traced;
    agg.te.update(ft.total_effect);
    for (int l = 0; l < agg.n_layer; ++l)
      for (int b = 0; b < kBucketCount; ++b)
        for (int ci = 0; ci < kComponentCount; ++ci) {
          auto v = fact_bucket_mean(ft, l, Bucket(b), Component(ci));
          if (v) agg.cell(l, Bucket(b), Component(ci)).update(*v);
        }
    if (out_traces) out_traces->push_back(std::move(*o.trace));
  }
  return agg;
}

CategoryAggregate trace_category(const std::vector<FactRecord>& facts, const ModelWeights& w,
                                 const Vocab& vocab, const TraceConfig& cfg, double sigma) {
  return trace_category_collect(facts, w, vocab, cfg, sigma, nullptr);
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string aggregate_to_csv(const CategoryAggregate& agg) {
  std::string out = "layer,bucket,component,mean_aie,count,stddev\n";
  for (int l = 0; l < agg.n_layer; ++l)
    for (int b = 0; b < kBucketCount; ++b)
      for (int ci = 0; ci < kComponentCount; ++ci) {
        const AggregateCell& c = agg.cell(l, Bucket(b), Component(ci));
        if (c.count == 0) continue;
        out += std::to_string(l);
        out += ',';
        out += bucket_name(Bucket(b));
        out += ',';
        out += component_name(Component(ci));
        out += ',';
        out += fmt_double(c.mean);
        out += ',';
        out += std::to_string(c.count);
        out += ',';
        out += fmt_double(c.stddev());
        out += '\n';
      }
  return out;
}

std::vector<AggregateRow> parse_aggregate_csv(std::istream& in) {
  std::vector<AggregateRow> rows;
  std::string line;
  if (!std::getline(in, line)) throw error("empty aggregate CSV");
  if (line.rfind("layer,bucket,component", 0) != 0)
    throw error("aggregate CSV header mismatch: " + line);
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string layer, bucket, component, mean, count, stddev;
    if (!std::getline(ls, layer, ',') || !std::getline(ls, bucket, ',') ||
        !std::getline(ls, component, ',') || !std::getline(ls, mean, ',') ||
        !std::getline(ls, count, ',') || !std::getline(ls, stddev))
      throw error("bad aggregate CSV line " + std::to_string(lineno));
    AggregateRow r;
    r.layer = std::stoi(layer);
    r.bucket = bucket_from_name(bucket);
    r.component = component_from_name(component);
    r.mean_aie = std::stod(mean);
    r.count = std::stoll(count);
    r.stddev = std::stod(stddev);
    rows.push_back(r);
  }
  return rows;
}

std::vector<AggregateRow> read_aggregate_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw error("cannot open '" + path + "'");
  return parse_aggregate_csv(f);
}

std::string aggregate_sidecar_json(const CategoryAggregate& agg, const TraceConfig& cfg,
                                   const std::string& model_id) {
  json j;
  j["model"] = model_id;
  j["group"] = agg.group;
  j["sigma"] = agg.sigma;
  j["trace_config"] = {{"noise_scale_factor", cfg.noise_scale_factor},
                       {"noise_samples", cfg.noise_samples},
                       {"window", cfg.window},
                       {"seed", cfg.seed},
                       {"threads", cfg.threads},
                       {"positions", bucket_filter_spec(cfg.positions)},
                       {"components", component_filter_spec(cfg.components)}};
  j["facts"] = {{"total", agg.total_facts},
                {"traced", agg.traced},
                {"skipped_wrong_prediction", agg.skipped_wrong_prediction},
                {"skipped_subject_not_found", agg.skipped_subject_not_found},
                {"skipped_error", agg.skipped_error}};
  j["total_effect"] = {{"mean", agg.te.count ? agg.te.mean : 0.0},
                       {"count", agg.te.count},
                       {"stddev", agg.te.stddev()}};
  j["skip_log"] = agg.skip_log;
  return j.dump(2);
}

std::string fact_traces_to_csv(const std::vector<FactTrace>& traces) {
  std::string out = "fact,layer,position,bucket,component,ie\n";
  for (const FactTrace& ft : traces)
    for (int l = 0; l < ft.n_layer; ++l)
      for (int p : ft.traced_positions)
        for (int ci = 0; ci < kComponentCount; ++ci) {
          double v = ft.ie_at(l, p, Component(ci));
          if (std::isnan(v)) continue;
          out += ft.fact_key;
          out += ',';
          out += std::to_string(l);
          out += ',';
          out += std::to_string(p);
          out += ',';
          out += bucket_name(ft.buckets[size_t(p)]);
          out += ',';
          out += component_name(Component(ci));
          out += ',';
          out += fmt_double(v);
          out += '\n';
        }
  return out;
}

}  // namespace tracekit
