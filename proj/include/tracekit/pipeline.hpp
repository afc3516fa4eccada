#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tracekit/factgen.hpp"
#include "tracekit/hash.hpp"
#include "tracekit/tracing.hpp"

namespace tracekit {

struct GenJobConfig {
  std::string subcategory;
  std::string topic;
  std::array<std::string, 3> exemplars;
  int batches = 1;
  int batch_size = 100;
};

// One JSON file drives every stage; relative paths resolve against the
// directory holding the config file.
struct RunConfig {
  std::string config_dir;

  std::string model_checkpoint;
  std::string model_config;
  std::string vocab_path;
  std::string merges_path;
  std::vector<std::string> facts_paths;
  std::vector<std::string> manifest_paths;
  std::string outdir = "out";

  TraceConfig trace;
  int fact_limit = 0;           // per group, 0 = uncapped
  std::optional<double> sigma;  // fixed noise scale; default calibrates from fact prompts

  std::string correlate_bucket = "last_subject";
  std::string correlate_component = "mlp";
  std::map<std::string, std::vector<std::string>> categories;  // label -> member groups

  std::vector<std::string> report_selections;  // empty = default set
  std::string lineplot_bucket = "last_subject";
  std::string lineplot_component = "mlp";

  std::string gen_model = "gpt-4";
  std::string gen_endpoint;  // empty = FACTGEN_ENDPOINT
  std::string replay_dir;    // serve archived responses instead of posting
  std::vector<GenJobConfig> jobs;

  static RunConfig from_json_file(const std::string& path);
  static RunConfig from_json_text(std::string_view text, const std::string& config_dir);

  std::string resolve(const std::string& path) const;  // against config_dir
};

struct StageReport {
  std::string stage;
  bool ok = true;
  std::vector<std::string> artifacts;  // relative to <outdir>/<stage>/
  std::vector<std::string> notes;
};

// Stages read their inputs from the config or the previous stage's artifact
// directory and write under <outdir>/<stage>/, closing with a manifest.json
// of artifact hashes.
StageReport run_validate(const RunConfig& cfg);
StageReport run_generate(const RunConfig& cfg, ChatClient* client = nullptr);
StageReport run_trace(const RunConfig& cfg);
StageReport run_aggregate(const RunConfig& cfg);
StageReport run_correlate(const RunConfig& cfg);
StageReport run_report(const RunConfig& cfg);

}  // namespace tracekit
