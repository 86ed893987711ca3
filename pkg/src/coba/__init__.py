"""Context-grounded backtracking decoder.

A model-agnostic autoregressive decoding engine that watches each candidate
token through two detectors (conditional probability against a threshold
delta, embedding distance to the source context against a threshold phi) and
backtracks over rejected prefixes instead of committing to likely
hallucinations. Ships with greedy/nucleus/CAD/lookahead baselines,
deterministic table and n-gram language models, a remote provider speaking a
small HTTP wire protocol, summarization metrics, and a corpus harness CLI.
"""

from .core import (
    EmbeddingTable,
    NextTokenDistribution,
    TokenSeq,
    Vocabulary,
    as_token_seq,
    cosine_distance,
    sequence_logprob,
)
from .decode import (
    CadConfig,
    DecodeConfig,
    DecodeEvent,
    DecodeResult,
    apply_cad,
    baseline_decode,
    coba_decode,
    decode,
    greedy_decode,
    lookahead_decode,
    nucleus_restrict,
)
from .detect import (
    ContextDistances,
    DetectorConfig,
    TokenVerdict,
    admissible_mask,
    classify_candidates,
    min_context_distance,
    span_profile,
)
from .harness import (
    CorpusError,
    CorpusRecord,
    RunSettings,
    load_corpus,
    run_corpus,
    run_profile,
    run_sweep,
)
from .lm import (
    EchoLm,
    LmError,
    LmProtocolError,
    LmProvider,
    LmTimeoutError,
    LmTransportError,
    NGramLm,
    RemoteLm,
    TableLm,
)
from .metrics import (
    DocMetrics,
    MetricReport,
    ProfileRow,
    aggregate_profiles,
    grounding_precision,
    hallucination_rate,
    lcs_length,
    rouge_l,
)
from .protocol_check import ConformanceReport, run_conformance
from .server import make_server, serve_lm

__version__ = "0.1.0"

__all__ = [
    "CadConfig",
    "ConformanceReport",
    "ContextDistances",
    "CorpusError",
    "CorpusRecord",
    "DecodeConfig",
    "DecodeEvent",
    "DecodeResult",
    "DetectorConfig",
    "DocMetrics",
    "EchoLm",
    "EmbeddingTable",
    "LmError",
    "LmProtocolError",
    "LmProvider",
    "LmTimeoutError",
    "LmTransportError",
    "MetricReport",
    "NGramLm",
    "NextTokenDistribution",
    "ProfileRow",
    "RemoteLm",
    "RunSettings",
    "TableLm",
    "TokenSeq",
    "TokenVerdict",
    "Vocabulary",
    "admissible_mask",
    "aggregate_profiles",
    "apply_cad",
    "as_token_seq",
    "baseline_decode",
    "classify_candidates",
    "coba_decode",
    "cosine_distance",
    "decode",
    "greedy_decode",
    "grounding_precision",
    "hallucination_rate",
    "lcs_length",
    "load_corpus",
    "lookahead_decode",
    "make_server",
    "min_context_distance",
    "nucleus_restrict",
    "rouge_l",
    "run_conformance",
    "run_corpus",
    "run_profile",
    "run_sweep",
    "sequence_logprob",
    "serve_lm",
    "span_profile",
]
