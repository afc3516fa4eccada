#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "tracekit/pipeline.hpp"

namespace {

using tracekit::RunConfig;
using tracekit::StageReport;

struct StageFlags {
  std::string config_path;
  std::string positions;
  std::string components;
  std::string replay;
  int limit = -1;
  int threads = 0;
};

std::string normalize_spec(std::string s) {
  for (char& c : s)
    if (c == '-') c = '_';
  return s;
}

RunConfig load_config(const StageFlags& flags) {
  RunConfig cfg = RunConfig::from_json_file(flags.config_path);
  if (!flags.positions.empty())
    cfg.trace.positions = tracekit::bucket_filter_from_spec(normalize_spec(flags.positions));
  if (!flags.components.empty())
    cfg.trace.components = tracekit::component_filter_from_spec(normalize_spec(flags.components));
  if (flags.limit >= 0) cfg.fact_limit = flags.limit;
  if (flags.threads > 0) cfg.trace.threads = flags.threads;
  if (!flags.replay.empty()) cfg.replay_dir = flags.replay;
  return cfg;
}

void print_report(const StageReport& rep) {
  for (const std::string& note : rep.notes) std::printf("%s: %s\n", rep.stage.c_str(), note.c_str());
  std::printf("%s: %zu artifacts, %s\n", rep.stage.c_str(), rep.artifacts.size(),
              rep.ok ? "ok" : "FAILED");
}

int fail(const std::string& stage, const char* kind, const std::string& message) {
  nlohmann::json err = {{"error", {{"stage", stage}, {"kind", kind}, {"message", message}}}};
  std::fprintf(stderr, "%s\n", err.dump().c_str());
  return std::string(kind) == "ConfigError" ? 2 : 1;
}

int run(const std::string& stage, const StageFlags& flags) {
  RunConfig cfg;
  try {
    cfg = load_config(flags);
  } catch (const tracekit::error& e) {
    return fail(stage, "ConfigError", e.what());
  }
  try {
    StageReport rep;
    if (stage == "validate")
      rep = tracekit::run_validate(cfg);
    else if (stage == "generate")
      rep = tracekit::run_generate(cfg);
    else if (stage == "trace")
      rep = tracekit::run_trace(cfg);
    else if (stage == "aggregate")
      rep = tracekit::run_aggregate(cfg);
    else if (stage == "correlate")
      rep = tracekit::run_correlate(cfg);
    else
      rep = tracekit::run_report(cfg);
    print_report(rep);
    if (!rep.ok) return fail(stage, "StageFailed", "see stage report for per-item errors");
    return 0;
  } catch (const tracekit::ConfigError& e) {
    return fail(stage, "ConfigError", e.what());
  } catch (const tracekit::error& e) {
    return fail(stage, "StageError", e.what());
  } catch (const std::exception& e) {
    return fail(stage, "Error", e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"causal-tracing pipeline"};
  app.require_subcommand(1);

  StageFlags flags;
  const char* stages[] = {"validate", "generate", "trace", "aggregate", "correlate", "report"};
  const char* help[] = {"check fact files and dataset accounting",
                        "produce facts through a chat endpoint",
                        "run causal traces over the fact set",
                        "fold per-fact traces into per-group tables",
                        "correlate layer profiles across groups",
                        "emit figures and tables"};
  for (size_t i = 0; i < 6; ++i) {
    CLI::App* sub = app.add_subcommand(stages[i], help[i]);
    sub->add_option("--config", flags.config_path, "run configuration JSON")->required();
    if (std::string(stages[i]) == "trace") {
      sub->add_option("--positions", flags.positions,
                      "token buckets to trace, e.g. last-subject,last-token");
      sub->add_option("--components", flags.components, "components to trace, e.g. mlp,attn");
      sub->add_option("--limit", flags.limit, "cap facts per group");
      sub->add_option("--threads", flags.threads, "worker threads");
    }
    if (std::string(stages[i]) == "generate")
      sub->add_option("--replay", flags.replay, "serve archived responses from this directory");
  }

  CLI11_PARSE(app, argc, argv);
  return run(app.get_subcommands()[0]->get_name(), flags);
}
