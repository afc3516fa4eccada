#include "tracekit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tracekit/hash.hpp"
#include "tracekit/report.hpp"

namespace tracekit {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw error("cannot write '" + path.string() + "'");
  f << content;
}

// underscores anything a filesystem might object to
std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name) {
    bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                c == '.' || c == '-';
    out += keep ? c : '_';
  }
  return out.empty() ? std::string("_") : out;
}

std::string normalize_name(std::string s) {
  std::replace(s.begin(), s.end(), '-', '_');
  return s;
}

fs::path stage_dir(const RunConfig& cfg, const char* stage) {
  fs::path dir = fs::path(cfg.resolve(cfg.outdir)) / stage;
  fs::create_directories(dir);
  return dir;
}

// manifest.json carries the hash of every artifact; it is written last and
// never lists itself
void write_manifest(const RunConfig& cfg, StageReport& rep) {
  fs::path dir = stage_dir(cfg, rep.stage.c_str());
  std::sort(rep.artifacts.begin(), rep.artifacts.end());
  json artifacts = json::object();
  for (const std::string& rel : rep.artifacts) artifacts[rel] = sha256_hex(read_text(dir / rel));
  json m = {{"stage", rep.stage}, {"artifacts", artifacts}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  rep.artifacts.push_back("manifest.json");
}

const json* find_obj(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) return nullptr;
  if (!it->is_object()) throw ConfigError(std::string(name) + " must be an object");
  return &*it;
}

std::string get_str(const json& j, const char* name, const std::string& fallback) {
  auto it = j.find(name);
  if (it == j.end() || it->is_null()) return fallback;
  if (!it->is_string()) throw ConfigError(std::string(name) + " must be a string");
  return it->get<std::string>();
}

std::vector<std::string> get_str_list(const json& j, const char* name) {
  std::vector<std::string> out;
  auto it = j.find(name);
  if (it == j.end() || it->is_null()) return out;
  if (!it->is_array()) throw ConfigError(std::string(name) + " must be an array");
  for (const json& e : *it) {
    if (!e.is_string()) throw ConfigError(std::string(name) + " entries must be strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace

std::string RunConfig::resolve(const std::string& path) const {
  if (path.empty() || config_dir.empty()) return path;
  fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(config_dir) / p).string();
}

RunConfig RunConfig::from_json_text(std::string_view text, const std::string& config_dir) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("config is not a JSON object");
  RunConfig cfg;
  cfg.config_dir = config_dir;

  if (const json* model = find_obj(j, "model")) {
    cfg.model_checkpoint = get_str(*model, "checkpoint", "");
    cfg.model_config = get_str(*model, "config", "");
  }
  if (const json* tok = find_obj(j, "tokenizer")) {
    cfg.vocab_path = get_str(*tok, "vocab", "");
    cfg.merges_path = get_str(*tok, "merges", "");
  }
  cfg.facts_paths = get_str_list(j, "facts");
  cfg.manifest_paths = get_str_list(j, "manifests");
  cfg.outdir = get_str(j, "outdir", cfg.outdir);

  if (const json* t = find_obj(j, "trace")) {
    cfg.trace.noise_scale_factor = t->value("noise_scale_factor", cfg.trace.noise_scale_factor);
    cfg.trace.noise_samples = t->value("noise_samples", cfg.trace.noise_samples);
    cfg.trace.window = t->value("window", cfg.trace.window);
    cfg.trace.seed = t->value("seed", cfg.trace.seed);
    cfg.trace.threads = t->value("threads", cfg.trace.threads);
    cfg.trace.positions = bucket_filter_from_spec(normalize_name(get_str(*t, "positions", "all")));
    cfg.trace.components =
        component_filter_from_spec(normalize_name(get_str(*t, "components", "all")));
    cfg.fact_limit = t->value("limit", cfg.fact_limit);
    auto sig = t->find("sigma");
    if (sig != t->end() && sig->is_number()) cfg.sigma = sig->get<double>();
  }

  if (const json* c = find_obj(j, "correlate")) {
    cfg.correlate_bucket = normalize_name(get_str(*c, "bucket", cfg.correlate_bucket));
    cfg.correlate_component = normalize_name(get_str(*c, "component", cfg.correlate_component));
  }
  if (const json* cats = find_obj(j, "categories")) {
    for (auto it = cats->begin(); it != cats->end(); ++it) {
      if (!it.value().is_array()) throw ConfigError("categories entries must be arrays");
      std::vector<std::string> members;
      for (const json& m : it.value()) members.push_back(m.get<std::string>());
      cfg.categories[it.key()] = std::move(members);
    }
  }
  if (const json* r = find_obj(j, "report")) {
    cfg.report_selections = get_str_list(*r, "selections");
    cfg.lineplot_bucket = normalize_name(get_str(*r, "lineplot_bucket", cfg.lineplot_bucket));
    cfg.lineplot_component =
        normalize_name(get_str(*r, "lineplot_component", cfg.lineplot_component));
  }
  if (const json* g = find_obj(j, "generate")) {
    cfg.gen_model = get_str(*g, "model", cfg.gen_model);
    cfg.gen_endpoint = get_str(*g, "endpoint", "");
    cfg.replay_dir = get_str(*g, "replay", "");
    auto jobs = g->find("jobs");
    if (jobs != g->end()) {
      if (!jobs->is_array()) throw ConfigError("generate.jobs must be an array");
      for (const json& e : *jobs) {
        GenJobConfig job;
        job.subcategory = get_str(e, "subcategory", "");
        job.topic = get_str(e, "topic", "");
        if (job.subcategory.empty() || job.topic.empty())
          throw ConfigError("generate.jobs entries need subcategory and topic");
        auto ex = get_str_list(e, "exemplars");
        if (ex.size() != 3) throw ConfigError("generate.jobs entries need exactly 3 exemplars");
        std::copy(ex.begin(), ex.end(), job.exemplars.begin());
        job.batches = e.value("batches", job.batches);
        job.batch_size = e.value("batch_size", job.batch_size);
        if (job.batches < 1 || job.batch_size < 1)
          throw ConfigError("generate.jobs batches and batch_size must be positive");
        cfg.jobs.push_back(std::move(job));
      }
    }
  }
  return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  fs::path p(path);
  std::string dir = p.has_parent_path() ? p.parent_path().string() : std::string(".");
  try {
    return from_json_text(read_text(p), dir);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

StageReport run_validate(const RunConfig& cfg) {
  StageReport rep;
  rep.stage = "validate";
  if (cfg.facts_paths.empty()) throw ConfigError("facts: no fact files configured");
  fs::path dir = stage_dir(cfg, "validate");

  json files = json::array();
  std::vector<FactRecord> all_records;
  for (const std::string& raw_path : cfg.facts_paths) {
    ParseResult pr = parse_facts_file(cfg.resolve(raw_path));
    json errors = json::array();
    for (const SchemaError& e : pr.errors)
      errors.push_back({{"line", e.line}, {"field", e.field}, {"message", e.message}});
    std::map<std::string, size_t> issue_counts;
    for (const FactRecord& rec : pr.records)
      for (const Issue& issue : validate_fact(rec)) ++issue_counts[issue_name(issue.kind)];
    files.push_back({{"path", raw_path},
                     {"records", pr.records.size()},
                     {"schema_errors", errors},
                     {"issues", issue_counts}});
    rep.notes.push_back(raw_path + ": " + std::to_string(pr.records.size()) + " records, " +
                        std::to_string(pr.errors.size()) + " errors");
    if (!pr.errors.empty()) rep.ok = false;
    all_records.insert(all_records.end(), pr.records.begin(), pr.records.end());
  }
  json report = {{"files", files}, {"total_records", all_records.size()}, {"ok", rep.ok}};
  write_text(dir / "report.json", report.dump(2) + "\n");
  rep.artifacts.push_back("report.json");

  if (!cfg.manifest_paths.empty()) {
    std::vector<CategoryManifest> manifests;
    for (const std::string& m : cfg.manifest_paths)
      manifests.push_back(CategoryManifest::from_json_file(cfg.resolve(m)));
    json cats = json::array();
    for (const CategorySummary& s : summarize(all_records, manifests)) {
      json subs = json::array();
      for (const SubcategorySummary& sub : s.subcategories)
        subs.push_back({{"name", sub.name}, {"facts", sub.facts}});
      cats.push_back({{"category", s.category},
                      {"subcategories", s.subcategory_count},
                      {"facts", s.total_facts},
                      {"per_subcategory", subs}});
      rep.notes.push_back(s.category + ": " + std::to_string(s.subcategory_count) +
                          " subcategories, " + std::to_string(s.total_facts) + " facts");
    }
    json violations = json::array();
    for (const CategoryManifest& m : manifests)
      for (const ExclusivityViolation& v : check_mutual_exclusivity(all_records, m))
        violations.push_back({{"subcategory", v.subcategory},
                              {"fact_index", v.fact_index},
                              {"subject", v.subject},
                              {"term", v.term},
                              {"term_subcategory", v.term_subcategory}});
    json summary = {{"categories", cats}, {"exclusivity_violations", violations}};
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    rep.artifacts.push_back("summary.json");
    if (!violations.empty())
      rep.notes.push_back(std::to_string(violations.size()) + " exclusivity violations");
  }

  write_manifest(cfg, rep);
  return rep;
}

StageReport run_generate(const RunConfig& cfg, ChatClient* client) {
  StageReport rep;
  rep.stage = "generate";
  if (cfg.jobs.empty()) throw ConfigError("generate.jobs is empty");
  fs::path dir = stage_dir(cfg, "generate");

  std::unique_ptr<ChatClient> owned;
  if (client == nullptr) {
    if (!cfg.replay_dir.empty()) {
      // archived responses are replayed in the exact order the stage posts
      fs::path replay(cfg.resolve(cfg.replay_dir));
      std::vector<ChatReply> replies;
      for (const GenJobConfig& job : cfg.jobs)
        for (int b = 0; b < job.batches; ++b) {
          std::string base = sanitize(job.subcategory) + "-b" + std::to_string(b);
          replies.push_back(archived_reply((replay / (base + ".stage1.response.json")).string()));
          replies.push_back(archived_reply((replay / (base + ".stage2.response.json")).string()));
        }
      owned = std::make_unique<ReplayClient>(std::move(replies));
    } else if (!cfg.gen_endpoint.empty()) {
      const char* key = std::getenv("FACTGEN_API_KEY");
      owned = std::make_unique<HttpChatClient>(cfg.gen_endpoint, key ? key : "");
    } else {
      owned = std::make_unique<HttpChatClient>(HttpChatClient::from_env());
    }
    client = owned.get();
  }

  json job_reports = json::array();
  for (const GenJobConfig& jc : cfg.jobs) {
    GenerationJob job;
    job.subcategory = jc.subcategory;
    job.topic = jc.topic;
    job.batch_size = jc.batch_size;
    job.exemplars = jc.exemplars;

    std::vector<FactRecord> kept;
    std::set<std::string> seen;
    size_t duplicates = 0, parse_skipped = 0;
    int attempts = 0;
    std::string base = sanitize(jc.subcategory);
    for (int b = 0; b < jc.batches; ++b) {
      std::string prefix = (dir / "archive" / (base + "-b" + std::to_string(b))).string();
      StageResult s1 = run_stage(*client, cfg.gen_model, build_generation_prompt(job),
                                 prefix + ".stage1");
      attempts += s1.attempts;
      std::vector<std::string> lines = split_fact_lines(s1.text);
      StageResult s2 = run_stage(*client, cfg.gen_model,
                                 build_conversion_prompt(lines, jc.subcategory),
                                 prefix + ".stage2");
      attempts += s2.attempts;
      Stage2Result parsed = parse_stage2(s2.text);
      parse_skipped += parsed.skipped.size();
      for (FactRecord& rec : parsed.records) {
        rec.group = jc.subcategory;
        if (seen.insert(normalized_fact_key(rec.full_fact)).second)
          kept.push_back(std::move(rec));
        else
          ++duplicates;
      }
      MergeResult merged = dedupe_and_merge(lines, job.prior_facts);
      job.prior_facts = std::move(merged.merged);
      for (const char* side : {".stage1.request.json", ".stage1.response.json",
                               ".stage2.request.json", ".stage2.response.json"})
        rep.artifacts.push_back("archive/" + base + "-b" + std::to_string(b) + side);
    }

    std::string facts_rel = base + ".facts.jsonl";
    write_facts_file((dir / facts_rel).string(), kept);
    rep.artifacts.push_back(facts_rel);

    AuditSample sample = audit_sample(jc.subcategory, kept, cfg.trace.seed);
    json audit = {{"subcategory", sample.subcategory}, {"fact_keys", sample.fact_keys}};
    write_text(dir / "audit" / (base + ".sample.json"), audit.dump(2) + "\n");
    rep.artifacts.push_back("audit/" + base + ".sample.json");

    job_reports.push_back({{"subcategory", jc.subcategory},
                           {"batches", jc.batches},
                           {"records", kept.size()},
                           {"duplicates_removed", duplicates},
                           {"parse_skipped", parse_skipped},
                           {"attempts", attempts}});
    rep.notes.push_back(jc.subcategory + ": " + std::to_string(kept.size()) + " facts over " +
                        std::to_string(jc.batches) + " batches");
  }
  write_text(dir / "report.json", json{{"jobs", job_reports}}.dump(2) + "\n");
  rep.artifacts.push_back("report.json");

  write_manifest(cfg, rep);
  return rep;
}

namespace {

std::vector<FactRecord> load_facts(const RunConfig& cfg) {
  std::vector<std::string> paths;
  for (const std::string& p : cfg.facts_paths) paths.push_back(cfg.resolve(p));
  if (paths.empty()) {
    // fall back to the generate stage's output
    fs::path gen = fs::path(cfg.resolve(cfg.outdir)) / "generate";
    std::vector<std::string> found;
    if (fs::is_directory(gen))
      for (const auto& entry : fs::directory_iterator(gen)) {
        std::string name = entry.path().filename().string();
        if (name.size() > 12 && name.substr(name.size() - 12) == ".facts.jsonl")
          found.push_back(entry.path().string());
      }
    std::sort(found.begin(), found.end());
    paths = std::move(found);
  }
  if (paths.empty()) throw ConfigError("no fact files: configure facts or run generate first");
  std::vector<FactRecord> all;
  for (const std::string& p : paths) {
    ParseResult pr = parse_facts_file(p);
    if (!pr.errors.empty())
      throw error(p + ": " + std::to_string(pr.errors.size()) +
                  " schema errors; run validate for details");
    all.insert(all.end(), pr.records.begin(), pr.records.end());
  }
  return all;
}

struct GroupedFacts {
  std::vector<std::string> order;  // first-seen group order
  std::map<std::string, std::vector<FactRecord>> by_group;
};

GroupedFacts group_facts(std::vector<FactRecord> facts, int limit) {
  GroupedFacts g;
  for (FactRecord& rec : facts) {
    auto [it, inserted] = g.by_group.try_emplace(rec.group);
    if (inserted) g.order.push_back(rec.group);
    if (limit <= 0 || it->second.size() < size_t(limit)) it->second.push_back(std::move(rec));
  }
  return g;
}

json read_json_artifact(const fs::path& path) {
  json j = json::parse(read_text(path), nullptr, false);
  if (j.is_discarded()) throw error(path.string() + " is not valid JSON");
  return j;
}

}  // namespace

StageReport run_trace(const RunConfig& cfg) {
  StageReport rep;
  rep.stage = "trace";
  for (const auto& [field, value] :
       std::initializer_list<std::pair<const char*, const std::string&>>{
           {"model.checkpoint", cfg.model_checkpoint},
           {"model.config", cfg.model_config},
           {"tokenizer.vocab", cfg.vocab_path},
           {"tokenizer.merges", cfg.merges_path}})
    if (value.empty()) throw ConfigError(std::string(field) + " is not configured");
  for (const auto& [field, value] :
       std::initializer_list<std::pair<const char*, std::string>>{
           {"model.checkpoint", cfg.resolve(cfg.model_checkpoint)},
           {"model.config", cfg.resolve(cfg.model_config)},
           {"tokenizer.vocab", cfg.resolve(cfg.vocab_path)},
           {"tokenizer.merges", cfg.resolve(cfg.merges_path)}})
    if (!fs::exists(value)) throw ConfigError(std::string(field) + ": '" + value + "' not found");

  ModelConfig mc = ModelConfig::from_json_file(cfg.resolve(cfg.model_config));
  ModelWeights w = load_model(cfg.resolve(cfg.model_checkpoint), mc);
  Vocab vocab = Vocab::load(cfg.resolve(cfg.vocab_path), cfg.resolve(cfg.merges_path));

  std::vector<FactRecord> facts = load_facts(cfg);
  // sigma comes from the whole dataset so a --limit run stays comparable
  double sigma;
  if (cfg.sigma) {
    sigma = *cfg.sigma;
  } else {
    std::vector<std::string> prompts;
    for (const FactRecord& rec : facts) prompts.push_back(rec.prompt);
    sigma = calibrate_noise_text(w, prompts, vocab);
  }

  GroupedFacts grouped = group_facts(std::move(facts), cfg.fact_limit);
  fs::path dir = stage_dir(cfg, "trace");
  std::string model_id = fs::path(cfg.model_checkpoint).filename().string();

  json groups = json::array();
  for (const std::string& name : grouped.order) {
    std::vector<FactTrace> traces;
    CategoryAggregate agg =
        trace_category_collect(grouped.by_group[name], w, vocab, cfg.trace, sigma, &traces);
    std::string base = sanitize(name);
    write_text(dir / (base + ".facts.csv"), fact_traces_to_csv(traces));
    write_text(dir / (base + ".sidecar.json"), aggregate_sidecar_json(agg, cfg.trace, model_id));
    rep.artifacts.push_back(base + ".facts.csv");
    rep.artifacts.push_back(base + ".sidecar.json");
    groups.push_back({{"name", name}, {"file", base}});
    rep.notes.push_back(name + ": traced " + std::to_string(agg.traced) + "/" +
                        std::to_string(agg.total_facts) + ", skipped " +
                        std::to_string(agg.total_facts - agg.traced));
  }
  json index = {{"sigma", sigma}, {"n_layer", mc.n_layer}, {"groups", groups}};
  write_text(dir / "groups.json", index.dump(2) + "\n");
  rep.artifacts.push_back("groups.json");

  write_manifest(cfg, rep);
  return rep;
}

namespace {

// Rebuilds per-fact bucket means from a per-fact trace dump. Rows for one
// fact are contiguous and ordered (layer, position, component) ascending,
// so sums fold in the same order the tracer used.
CategoryAggregate fold_fact_rows(const fs::path& csv_path, const std::string& group, int n_layer,
                                 double sigma) {
  CategoryAggregate agg;
  agg.group = group;
  agg.n_layer = n_layer;
  agg.sigma = sigma;
  agg.cells.assign(size_t(n_layer) * kBucketCount * kComponentCount, {});

  std::ifstream f(csv_path);
  if (!f) throw error("cannot open '" + csv_path.string() + "'");
  std::string line;
  if (!std::getline(f, line) || line != "fact,layer,position,bucket,component,ie")
    throw error(csv_path.string() + ": unexpected fact-trace header");

  struct Acc {
    double sum = 0;
    long long n = 0;
  };
  std::vector<Acc> acc(agg.cells.size());
  std::string current;
  bool any = false;
  auto flush = [&] {
    for (size_t i = 0; i < acc.size(); ++i) {
      if (acc[i].n > 0) agg.cells[i].update(acc[i].sum / double(acc[i].n));
      acc[i] = {};
    }
    ++agg.traced;
    agg.total_facts = agg.traced;
  };
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string fact, layer_s, pos_s, bucket_s, comp_s, ie_s;
    if (!std::getline(row, fact, ',') || !std::getline(row, layer_s, ',') ||
        !std::getline(row, pos_s, ',') || !std::getline(row, bucket_s, ',') ||
        !std::getline(row, comp_s, ',') || !std::getline(row, ie_s))
      throw error(csv_path.string() + ": malformed row '" + line + "'");
    if (any && fact != current) flush();
    current = fact;
    any = true;
    int layer = std::stoi(layer_s);
    Bucket b = bucket_from_name(bucket_s);
    Component c = component_from_name(comp_s);
    if (layer < 0 || layer >= n_layer)
      throw error(csv_path.string() + ": layer " + layer_s + " out of range");
    size_t idx = (size_t(layer) * kBucketCount + size_t(b)) * kComponentCount + size_t(c);
    acc[idx].sum += std::stod(ie_s);
    acc[idx].n += 1;
  }
  if (any) flush();
  return agg;
}

}  // namespace

StageReport run_aggregate(const RunConfig& cfg) {
  StageReport rep;
  rep.stage = "aggregate";
  fs::path trace_dir = fs::path(cfg.resolve(cfg.outdir)) / "trace";
  json index = read_json_artifact(trace_dir / "groups.json");
  fs::path dir = stage_dir(cfg, "aggregate");

  double sigma = index.at("sigma").get<double>();
  int n_layer = index.at("n_layer").get<int>();
  for (const json& g : index.at("groups")) {
    std::string name = g.at("name").get<std::string>();
    std::string base = g.at("file").get<std::string>();
    CategoryAggregate agg = fold_fact_rows(trace_dir / (base + ".facts.csv"), name, n_layer, sigma);
    write_text(dir / (base + ".csv"), aggregate_to_csv(agg));
    rep.artifacts.push_back(base + ".csv");
    rep.notes.push_back(name + ": " + std::to_string(agg.traced) + " facts folded");
  }
  write_text(dir / "groups.json", index.dump(2) + "\n");
  rep.artifacts.push_back("groups.json");

  write_manifest(cfg, rep);
  return rep;
}

namespace {

struct AggregateSet {
  double sigma = 0;
  int n_layer = 0;
  std::vector<std::string> names;
  std::vector<std::string> files;
  std::vector<std::vector<AggregateRow>> rows;  // parallel to names
};

AggregateSet load_aggregates(const RunConfig& cfg) {
  fs::path dir = fs::path(cfg.resolve(cfg.outdir)) / "aggregate";
  json index = read_json_artifact(dir / "groups.json");
  AggregateSet out;
  out.sigma = index.at("sigma").get<double>();
  out.n_layer = index.at("n_layer").get<int>();
  for (const json& g : index.at("groups")) {
    out.names.push_back(g.at("name").get<std::string>());
    out.files.push_back(g.at("file").get<std::string>());
    out.rows.push_back(read_aggregate_csv((dir / (out.files.back() + ".csv")).string()));
  }
  return out;
}

}  // namespace

StageReport run_correlate(const RunConfig& cfg) {
  StageReport rep;
  rep.stage = "correlate";
  AggregateSet set = load_aggregates(cfg);
  if (set.names.empty()) throw error("aggregate stage produced no groups");
  Bucket b = bucket_from_name(cfg.correlate_bucket);
  Component c = component_from_name(cfg.correlate_component);
  fs::path dir = stage_dir(cfg, "correlate");

  std::vector<LayerImportanceVector> vectors;
  for (size_t i = 0; i < set.names.size(); ++i)
    vectors.push_back(layer_vector_from_rows(set.rows[i], b, c, set.n_layer, set.names[i]));
  CorrelationMatrix m = pairwise_matrix(vectors);
  write_text(dir / "matrix.csv", matrix_to_csv(m));
  rep.artifacts.push_back("matrix.csv");
  rep.notes.push_back("matrix: " + std::to_string(m.size()) + " groups, " + cfg.correlate_component +
                      " at " + cfg.correlate_bucket);

  if (!cfg.categories.empty()) {
    for (const auto& [label, members] : cfg.categories)
      for (const std::string& member : members)
        if (std::find(set.names.begin(), set.names.end(), member) == set.names.end())
          throw ConfigError("category " + label + " member '" + member + "' has no traced group");
    json intra = json::object();
    for (const auto& [label, members] : cfg.categories) {
      try {
        PairAverage avg = intra_category_avg(m, members);
        intra[label] = {{"mean", avg.mean}, {"pairs", avg.pairs}, {"undefined", avg.undefined}};
      } catch (const EmptyComparison&) {
        intra[label] = {{"mean", nullptr}, {"pairs", 0}, {"undefined", 0}};
      }
    }
    json inter = json::array();
    for (auto a = cfg.categories.begin(); a != cfg.categories.end(); ++a)
      for (auto bb = std::next(a); bb != cfg.categories.end(); ++bb) {
        std::set<std::string> shared;
        std::set<std::string> left(a->second.begin(), a->second.end());
        for (const std::string& mname : bb->second)
          if (left.count(mname)) shared.insert(mname);
        json entry = {{"a", a->first},
                      {"b", bb->first},
                      {"shared", std::vector<std::string>(shared.begin(), shared.end())}};
        try {
          PairAverage avg = inter_category_avg(m, a->second, bb->second, shared);
          entry["mean"] = avg.mean;
          entry["pairs"] = avg.pairs;
          entry["undefined"] = avg.undefined;
        } catch (const EmptyComparison&) {
          entry["mean"] = nullptr;
          entry["pairs"] = 0;
          entry["undefined"] = 0;
        }
        inter.push_back(entry);
      }
    write_text(dir / "averages.json", json{{"intra", intra}, {"inter", inter}}.dump(2) + "\n");
    rep.artifacts.push_back("averages.json");
  }

  write_manifest(cfg, rep);
  return rep;
}

namespace {

std::vector<double> layer_means(const std::vector<AggregateRow>& rows, Bucket b, Component c,
                                int n_layer, const std::string& label) {
  return layer_vector_from_rows(rows, b, c, n_layer, label).values;
}

}  // namespace

StageReport run_report(const RunConfig& cfg) {
  StageReport rep;
  rep.stage = "report";
  AggregateSet set = load_aggregates(cfg);
  if (set.names.empty()) throw error("aggregate stage produced no groups");
  fs::path dir = stage_dir(cfg, "report");

  std::vector<std::string> selections = cfg.report_selections;
  if (selections.empty())
    selections = {"correlation_heatmap", "layer_importance_heatmap", "aie_lineplot",
                  "max_aie_table"};

  Bucket corr_b = bucket_from_name(cfg.correlate_bucket);
  Component corr_c = component_from_name(cfg.correlate_component);
  Bucket line_b = bucket_from_name(cfg.lineplot_bucket);
  Component line_c = component_from_name(cfg.lineplot_component);

  auto importance_grid = [&](bool normalize) {
    std::vector<std::string> cols;
    for (int l = 0; l < set.n_layer; ++l) cols.push_back("L" + std::to_string(l));
    std::vector<double> values;
    double lo = 0, hi = 0;
    bool first = true;
    for (size_t i = 0; i < set.names.size(); ++i)
      for (double v : layer_means(set.rows[i], corr_b, corr_c, set.n_layer, set.names[i])) {
        values.push_back(v);
        if (std::isnan(v)) continue;
        lo = first ? v : std::min(lo, v);
        hi = first ? v : std::max(hi, v);
        first = false;
      }
    if (first) throw error("layer-importance grid has no defined cells");
    if (lo == hi) {
      lo -= 0.5;
      hi += 0.5;
    }
    FigureSpec spec;
    spec.kind = FigureKind::LayerImportanceHeatmap;
    spec.title = "average indirect effect by layer";
    spec.row_normalize = normalize;
    spec.min_value = normalize ? 0.0 : lo;
    spec.max_value = normalize ? 1.0 : hi;
    return heatmap_svg(set.names, cols, values, spec);
  };

  for (const std::string& sel : selections) {
    if (sel == "correlation_heatmap") {
      CorrelationMatrix m =
          read_matrix_csv((fs::path(cfg.resolve(cfg.outdir)) / "correlate" / "matrix.csv").string());
      write_text(dir / "correlation_heatmap.svg",
                 correlation_heatmap_svg(m, "layer profile correlation"));
      rep.artifacts.push_back("correlation_heatmap.svg");
    } else if (sel == "layer_importance_heatmap") {
      write_text(dir / "layer_importance_heatmap.svg", importance_grid(true));
      rep.artifacts.push_back("layer_importance_heatmap.svg");
    } else if (sel == "layer_importance_heatmap_raw") {
      write_text(dir / "layer_importance_heatmap_raw.svg", importance_grid(false));
      rep.artifacts.push_back("layer_importance_heatmap_raw.svg");
    } else if (sel == "aie_lineplot") {
      std::vector<LinePlotSeries> series;
      for (size_t i = 0; i < set.names.size(); ++i) {
        LinePlotSeries s;
        s.name = set.names[i];
        s.mean.assign(size_t(set.n_layer), 0);
        s.stddev.assign(size_t(set.n_layer), 0);
        s.count.assign(size_t(set.n_layer), 0);
        for (const AggregateRow& row : set.rows[i])
          if (row.bucket == line_b && row.component == line_c && row.layer >= 0 &&
              row.layer < set.n_layer) {
            s.mean[size_t(row.layer)] = row.mean_aie;
            s.stddev[size_t(row.layer)] = row.stddev;
            s.count[size_t(row.layer)] = row.count;
          }
        series.push_back(std::move(s));
      }
      FigureSpec spec = lineplot_spec(series, "average indirect effect by layer");
      write_text(dir / "aie_lineplot.svg", lineplot_svg(series, spec));
      rep.artifacts.push_back("aie_lineplot.svg");
    } else if (sel == "max_aie_table") {
      std::vector<MaxAieRow> rows;
      for (size_t i = 0; i < set.names.size(); ++i) {
        MaxAieRow row;
        row.name = set.names[i];
        row.mlp_last_subject = layer_means(set.rows[i], Bucket::LastSubject, Component::MlpOut,
                                           set.n_layer, set.names[i]);
        row.attn_last_token = layer_means(set.rows[i], Bucket::LastToken, Component::AttnOut,
                                          set.n_layer, set.names[i]);
        rows.push_back(std::move(row));
      }
      write_text(dir / "max_aie_table.txt", max_aie_table(rows));
      rep.artifacts.push_back("max_aie_table.txt");
    } else {
      throw ConfigError("unknown report selection '" + sel + "'");
    }
    rep.notes.push_back(sel);
  }

  write_manifest(cfg, rep);
  return rep;
}

}  // namespace tracekit
