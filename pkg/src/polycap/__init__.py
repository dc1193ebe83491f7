"""Dataset curation toolkit for context-preserving multilingual captioning.

The pipeline selects one representative English caption per image, fans it
out to an ensemble of translation backends for 20 target languages, scores
every candidate by multilingual embedding similarity, retains the best
candidate per (image, language) with dynamic substitution, filters on a
closed similarity interval, and ships QA metrics plus human-rating
reliability statistics with an HTTP rating service.
"""

from .arbitration import (
    FilterReport,
    apply_filter,
    arbitrate,
    arbitrate_all,
    maybe_substitute,
    score_all,
    score_candidate,
)
from .corpus import (
    DatasetManifest,
    FilterPolicy,
    ImageRecord,
    TranslationCandidate,
    TranslationEntry,
    load_manifest,
    save_manifest,
    validate_manifest,
)
from .embedding import (
    EmbeddingBackend,
    EmbeddingRegistry,
    MockEmbeddingBackend,
    MockMultilingualBackend,
    cosine_similarity,
    embed,
    pairwise_similarity_matrix,
)
from .errors import (
    BackendError,
    BackendUnavailableError,
    InvariantError,
    LanguageError,
    ManifestError,
    MetricError,
    PolycapError,
    RatingsError,
    StageOrderError,
    UnsupportedPairError,
)
from .humaneval import (
    RatingRecord,
    RatingStore,
    ReliabilityReport,
    filter_invalid,
    fleiss_kappa,
    icc_average,
    ingest_ratings,
    language_summary,
    reliability_report,
    score_histogram,
)
from .languages import SOURCE_LANGUAGE, TARGET_LANGUAGES, validate_language
from .metrics import bleu_statistics, chrf_pp, corpus_bleu, tokenize
from .mt import (
    EnsembleRegistry,
    MockMTBackend,
    MTBackend,
    backtranslate,
    generate_candidates,
    translate,
)
from .pipeline import PipelineConfig, load_config, run_pipeline
from .qa import (
    LanguageStats,
    QualityReport,
    avg_word_count,
    backtranslation_score,
    dataset_stats,
    quality_report,
)
from .selection import SelectionResult, select_all, select_representative

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "BackendUnavailableError",
    "DatasetManifest",
    "EmbeddingBackend",
    "EmbeddingRegistry",
    "EnsembleRegistry",
    "FilterPolicy",
    "FilterReport",
    "ImageRecord",
    "InvariantError",
    "LanguageError",
    "LanguageStats",
    "ManifestError",
    "MetricError",
    "MockEmbeddingBackend",
    "MockMTBackend",
    "MockMultilingualBackend",
    "MTBackend",
    "PipelineConfig",
    "PolycapError",
    "QualityReport",
    "RatingRecord",
    "RatingStore",
    "RatingsError",
    "ReliabilityReport",
    "SelectionResult",
    "SOURCE_LANGUAGE",
    "StageOrderError",
    "TARGET_LANGUAGES",
    "TranslationCandidate",
    "TranslationEntry",
    "UnsupportedPairError",
    "apply_filter",
    "arbitrate",
    "arbitrate_all",
    "avg_word_count",
    "backtranslate",
    "backtranslation_score",
    "bleu_statistics",
    "chrf_pp",
    "corpus_bleu",
    "cosine_similarity",
    "dataset_stats",
    "embed",
    "filter_invalid",
    "fleiss_kappa",
    "generate_candidates",
    "icc_average",
    "ingest_ratings",
    "language_summary",
    "load_config",
    "load_manifest",
    "maybe_substitute",
    "pairwise_similarity_matrix",
    "quality_report",
    "reliability_report",
    "run_pipeline",
    "save_manifest",
    "score_all",
    "score_candidate",
    "score_histogram",
    "select_all",
    "select_representative",
    "tokenize",
    "translate",
    "validate_language",
    "validate_manifest",
]
