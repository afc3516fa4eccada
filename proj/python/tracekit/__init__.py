"""Python surface of the causal tracing engine.

The heavy lifting lives in the compiled _tracekit module; this package
re-exports it and adds small conveniences.
"""

from ._tracekit import (
    AggregateRow,
    CategoryAggregate,
    CorrelationMatrix,
    FactRecord,
    FactTrace,
    ModelConfig,
    ModelWeights,
    RunConfig,
    StageReport,
    TokenSpan,
    TraceConfig,
    TracekitError,
    Vocab,
    average_ranks,
    bucketize,
    calibrate_noise,
    check_fact,
    correlation_heatmap_svg,
    decode,
    encode,
    final_logits,
    is_correct_prediction,
    layer_profile,
    load_model,
    locate_subject,
    max_aie_layer,
    max_aie_table,
    next_token_distribution,
    object_probability,
    pairwise_matrix,
    read_aggregate_csv,
    read_facts,
    read_matrix_csv,
    run_aggregate,
    run_correlate,
    run_generate,
    run_report,
    run_trace,
    run_validate,
    spearman,
    trace_category,
    trace_fact,
)

__all__ = [
    "AggregateRow",
    "CategoryAggregate",
    "CorrelationMatrix",
    "FactRecord",
    "FactTrace",
    "ModelConfig",
    "ModelWeights",
    "RunConfig",
    "StageReport",
    "TokenSpan",
    "TraceConfig",
    "TracekitError",
    "Vocab",
    "average_ranks",
    "bucketize",
    "calibrate_noise",
    "check_fact",
    "correlation_heatmap_svg",
    "decode",
    "encode",
    "final_logits",
    "is_correct_prediction",
    "layer_profile",
    "load_model",
    "load_workspace",
    "locate_subject",
    "max_aie_layer",
    "max_aie_table",
    "next_token_distribution",
    "object_probability",
    "pairwise_matrix",
    "read_aggregate_csv",
    "read_facts",
    "read_matrix_csv",
    "run_aggregate",
    "run_correlate",
    "run_generate",
    "run_report",
    "run_trace",
    "run_validate",
    "spearman",
    "trace_category",
    "trace_fact",
]


def load_workspace(model_dir, tokenizer_dir):
    """Load (weights, vocab) from the standard file layout."""
    import os

    config = ModelConfig.from_json_file(os.path.join(model_dir, "config.json"))
    weights = load_model(os.path.join(model_dir, "model.safetensors"), config)
    vocab = Vocab.load(
        os.path.join(tokenizer_dir, "vocab.json"),
        os.path.join(tokenizer_dir, "merges.txt"),
    )
    return weights, vocab
