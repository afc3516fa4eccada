#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tracekit/checkpoint.hpp"
#include "tracekit/darc.hpp"
#include "tracekit/locality.hpp"
#include "tracekit/model.hpp"
#include "tracekit/pipeline.hpp"
#include "tracekit/report.hpp"
#include "tracekit/tokenizer.hpp"
#include "tracekit/tracing.hpp"

namespace py = pybind11;
using namespace tracekit;

namespace {

std::vector<std::string> bucket_names(const std::vector<Bucket>& xs) {
  std::vector<std::string> names;
  names.reserve(xs.size());
  for (Bucket x : xs) names.emplace_back(bucket_name(x));
  return names;
}

}  // namespace

PYBIND11_MODULE(_tracekit, m) {
  m.doc() = "causal tracing engine bindings";

  py::register_exception<error>(m, "TracekitError");

  py::class_<Vocab>(m, "Vocab")
      .def_static("load", &Vocab::load, py::arg("vocab_json"), py::arg("merges_txt"))
      .def("size", &Vocab::size)
      .def("token_id", &Vocab::token_id)
      .def("token_string", &Vocab::token_string);

  py::class_<TokenSpan>(m, "TokenSpan")
      .def_readonly("start", &TokenSpan::start)
      .def_readonly("end", &TokenSpan::end)
      .def("__repr__", [](const TokenSpan& s) {
        return "TokenSpan(" + std::to_string(s.start) + ", " + std::to_string(s.end) + ")";
      });

  m.def("encode", &encode, py::arg("text"), py::arg("vocab"));
  m.def("decode", &decode, py::arg("ids"), py::arg("vocab"));
  m.def("locate_subject", &locate_subject, py::arg("prompt"), py::arg("subject"),
        py::arg("vocab"));
  m.def(
      "bucketize",
      [](const TokenSpan& span, int seq_len) {
        return bucket_names(bucketize(span, seq_len).assignment);
      },
      py::arg("span"), py::arg("seq_len"));

  py::class_<ModelConfig>(m, "ModelConfig")
      .def_static("from_json_file", &ModelConfig::from_json_file)
      .def_readonly("n_layer", &ModelConfig::n_layer)
      .def_readonly("n_head", &ModelConfig::n_head)
      .def_readonly("d_model", &ModelConfig::d_model)
      .def_readonly("n_ctx", &ModelConfig::n_ctx)
      .def_readonly("vocab_size", &ModelConfig::vocab_size);

  py::class_<ModelWeights>(m, "ModelWeights")
      .def_property_readonly("config", [](const ModelWeights& w) { return w.config; });

  m.def("load_model", &load_model, py::arg("container_path"), py::arg("config"));
  m.def(
      "final_logits",
      [](const std::vector<int>& tokens, const ModelWeights& w) {
        return forward(tokens, w).final_logits;
      },
      py::arg("tokens"), py::arg("weights"));
  m.def(
      "next_token_distribution",
      [](const std::vector<int>& tokens, const ModelWeights& w) {
        return next_token_distribution(tokens, w);
      },
      py::arg("tokens"), py::arg("weights"));
  m.def(
      "object_probability",
      [](const std::vector<int>& tokens, int object_id, const ModelWeights& w) {
        return object_probability(tokens, object_id, w);
      },
      py::arg("tokens"), py::arg("object_id"), py::arg("weights"));

  py::class_<FactRecord>(m, "FactRecord")
      .def(py::init<>())
      .def_readwrite("known_id", &FactRecord::known_id)
      .def_readwrite("full_fact", &FactRecord::full_fact)
      .def_readwrite("subject", &FactRecord::subject)
      .def_readwrite("attribute", &FactRecord::attribute)
      .def_readwrite("prediction", &FactRecord::prediction)
      .def_readwrite("prompt", &FactRecord::prompt)
      .def_readwrite("group", &FactRecord::group)
      .def_readwrite("relation_id", &FactRecord::relation_id)
      .def_readwrite("template_", &FactRecord::template_)
      .def("key", &FactRecord::key);

  m.def(
      "read_facts",
      [](const std::string& path) {
        ParseResult r = parse_facts_file(path);
        std::vector<std::tuple<size_t, std::string, std::string>> errs;
        errs.reserve(r.errors.size());
        for (const SchemaError& e : r.errors) errs.emplace_back(e.line, e.field, e.message);
        return py::make_tuple(r.records, errs);
      },
      py::arg("path"), "Parse a facts jsonl file; returns (records, schema_errors).");
  m.def(
      "check_fact",
      [](const FactRecord& rec) {
        std::vector<std::pair<std::string, std::string>> out;
        for (const Issue& i : validate_fact(rec)) out.emplace_back(issue_name(i.kind), i.detail);
        return out;
      },
      py::arg("record"), "Content checks beyond the schema; returns (issue, detail) pairs.");

  py::class_<TraceConfig>(m, "TraceConfig")
      .def(py::init<>())
      .def_readwrite("noise_scale_factor", &TraceConfig::noise_scale_factor)
      .def_readwrite("noise_samples", &TraceConfig::noise_samples)
      .def_readwrite("window", &TraceConfig::window)
      .def_readwrite("seed", &TraceConfig::seed)
      .def_readwrite("threads", &TraceConfig::threads)
      .def_property(
          "positions", [](const TraceConfig& c) { return bucket_filter_spec(c.positions); },
          [](TraceConfig& c, const std::string& spec) {
            c.positions = bucket_filter_from_spec(spec);
          })
      .def_property(
          "components", [](const TraceConfig& c) { return component_filter_spec(c.components); },
          [](TraceConfig& c, const std::string& spec) {
            c.components = component_filter_from_spec(spec);
          });

  m.def(
      "calibrate_noise",
      [](const ModelWeights& w, const std::vector<std::string>& prompts, const Vocab& vocab) {
        return calibrate_noise_text(w, prompts, vocab);
      },
      py::arg("weights"), py::arg("prompts"), py::arg("vocab"));

  m.def(
      "is_correct_prediction",
      [](const FactRecord& fact, const ModelWeights& w, const Vocab& vocab) {
        std::string reason;
        bool ok = is_correct_prediction(fact, w, vocab, &reason);
        return py::make_tuple(ok, reason);
      },
      py::arg("fact"), py::arg("weights"), py::arg("vocab"));

  py::class_<FactTrace>(m, "FactTrace")
      .def_readonly("fact_key", &FactTrace::fact_key)
      .def_readonly("group", &FactTrace::group)
      .def_readonly("seq_len", &FactTrace::seq_len)
      .def_readonly("n_layer", &FactTrace::n_layer)
      .def_readonly("subject_span", &FactTrace::subject_span)
      .def_property_readonly("buckets",
                             [](const FactTrace& t) { return bucket_names(t.buckets); })
      .def_readonly("traced_positions", &FactTrace::traced_positions)
      .def_readonly("object_token_id", &FactTrace::object_token_id)
      .def_readonly("clean_p", &FactTrace::clean_p)
      .def_readonly("corrupt_p_mean", &FactTrace::corrupt_p_mean)
      .def_readonly("total_effect", &FactTrace::total_effect)
      .def(
          "ie_at",
          [](const FactTrace& t, int layer, int position, const std::string& component) {
            return t.ie_at(layer, position, component_from_name(component));
          },
          py::arg("layer"), py::arg("position"), py::arg("component"));

  m.def("trace_fact", &trace_fact, py::arg("fact"), py::arg("weights"), py::arg("vocab"),
        py::arg("config"), py::arg("sigma"));

  py::class_<CategoryAggregate>(m, "CategoryAggregate")
      .def_readonly("group", &CategoryAggregate::group)
      .def_readonly("n_layer", &CategoryAggregate::n_layer)
      .def_readonly("sigma", &CategoryAggregate::sigma)
      .def_readonly("total_facts", &CategoryAggregate::total_facts)
      .def_readonly("traced", &CategoryAggregate::traced)
      .def_readonly("skipped_wrong_prediction", &CategoryAggregate::skipped_wrong_prediction)
      .def_readonly("skipped_subject_not_found", &CategoryAggregate::skipped_subject_not_found)
      .def_readonly("skipped_error", &CategoryAggregate::skipped_error)
      .def_readonly("skip_log", &CategoryAggregate::skip_log)
      .def_property_readonly("mean_total_effect",
                             [](const CategoryAggregate& a) { return a.te.mean; })
      .def(
          "cell",
          [](const CategoryAggregate& a, int layer, const std::string& bucket,
             const std::string& component) {
            const AggregateCell& c =
                a.cell(layer, bucket_from_name(bucket), component_from_name(component));
            return py::make_tuple(c.mean, c.count, c.stddev());
          },
          py::arg("layer"), py::arg("bucket"), py::arg("component"),
          "Returns (mean, count, stddev) for one aggregate cell.")
      .def("to_csv", [](const CategoryAggregate& a) { return aggregate_to_csv(a); });

  m.def("trace_category", &trace_category, py::arg("facts"), py::arg("weights"),
        py::arg("vocab"), py::arg("config"), py::arg("sigma"),
        py::call_guard<py::gil_scoped_release>());

  py::class_<AggregateRow>(m, "AggregateRow")
      .def_readonly("layer", &AggregateRow::layer)
      .def_property_readonly("bucket",
                             [](const AggregateRow& r) { return bucket_name(r.bucket); })
      .def_property_readonly(
          "component", [](const AggregateRow& r) { return component_name(r.component); })
      .def_readonly("mean_aie", &AggregateRow::mean_aie)
      .def_readonly("count", &AggregateRow::count)
      .def_readonly("stddev", &AggregateRow::stddev);

  m.def("read_aggregate_csv", &read_aggregate_csv, py::arg("path"));
  m.def(
      "layer_profile",
      [](const std::vector<AggregateRow>& rows, const std::string& bucket,
         const std::string& component, int n_layer, const std::string& label) {
        return layer_vector_from_rows(rows, bucket_from_name(bucket),
                                      component_from_name(component), n_layer, label)
            .values;
      },
      py::arg("rows"), py::arg("bucket"), py::arg("component"), py::arg("n_layer"),
      py::arg("label") = std::string(),
      "Per-layer AIE vector for one (bucket, component) out of aggregate rows.");

  m.def("average_ranks", &average_ranks, py::arg("values"));
  m.def("spearman", &spearman, py::arg("x"), py::arg("y"),
        "Rank correlation; None when either input is constant.");
  m.def("max_aie_layer", &max_aie_layer, py::arg("values"),
        "Returns (layer, value) of the maximum; ties break toward layer 0.");

  py::class_<CorrelationMatrix>(m, "CorrelationMatrix")
      .def_readonly("labels", &CorrelationMatrix::labels)
      .def("at", &CorrelationMatrix::at, py::arg("i"), py::arg("j"))
      .def("size", &CorrelationMatrix::size)
      .def("to_csv", [](const CorrelationMatrix& m_) { return matrix_to_csv(m_); });

  m.def(
      "pairwise_matrix",
      [](const std::vector<std::pair<std::string, std::vector<double>>>& profiles) {
        std::vector<LayerImportanceVector> vecs;
        vecs.reserve(profiles.size());
        for (const auto& [label, values] : profiles) {
          LayerImportanceVector v;
          v.label = label;
          v.values = values;
          vecs.push_back(std::move(v));
        }
        return pairwise_matrix(vecs);
      },
      py::arg("profiles"), "Spearman matrix over (label, per-layer values) pairs.");
  m.def("read_matrix_csv", &read_matrix_csv, py::arg("path"));

  m.def(
      "correlation_heatmap_svg",
      [](const CorrelationMatrix& m_, const std::string& title) {
        return correlation_heatmap_svg(m_, title);
      },
      py::arg("matrix"), py::arg("title"));
  m.def(
      "max_aie_table",
      [](const std::vector<std::tuple<std::string, std::vector<double>, std::vector<double>>>&
             rows) {
        std::vector<MaxAieRow> converted;
        converted.reserve(rows.size());
        for (const auto& [name, mlp, attn] : rows)
          converted.push_back(MaxAieRow{name, mlp, attn});
        return max_aie_table(converted);
      },
      py::arg("rows"),
      "Rows are (name, mlp_last_subject_by_layer, attn_last_token_by_layer) tuples.");

  py::class_<RunConfig>(m, "RunConfig")
      .def_static("from_json_file", &RunConfig::from_json_file, py::arg("path"))
      .def_readwrite("outdir", &RunConfig::outdir)
      .def_readwrite("trace", &RunConfig::trace)
      .def_readwrite("fact_limit", &RunConfig::fact_limit)
      .def_readwrite("sigma", &RunConfig::sigma)
      .def_readwrite("replay_dir", &RunConfig::replay_dir)
      .def("resolve", &RunConfig::resolve, py::arg("path"));

  py::class_<StageReport>(m, "StageReport")
      .def_readonly("stage", &StageReport::stage)
      .def_readonly("ok", &StageReport::ok)
      .def_readonly("artifacts", &StageReport::artifacts)
      .def_readonly("notes", &StageReport::notes);

  m.def("run_validate", &run_validate, py::arg("config"));
  m.def(
      "run_generate", [](const RunConfig& cfg) { return run_generate(cfg); },
      py::arg("config"));
  m.def("run_trace", &run_trace, py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("run_aggregate", &run_aggregate, py::arg("config"));
  m.def("run_correlate", &run_correlate, py::arg("config"));
  m.def("run_report", &run_report, py::arg("config"));
}
