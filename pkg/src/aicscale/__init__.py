"""Toolkit for fine-grained subjective image-quality studies.

Builds triplet-comparison study designs over bitrate-matched stimulus
ladders, serves and stores participant responses, cleanses batch
instances, reconstructs JND-scale rate-distortion curves with bootstrap
confidence bands, and benchmarks objective metrics against the
reconstructed scale.
"""

__version__ = "0.1.0"

from .catalog import (  # noqa: F401
    BitrateRule,
    CodecRecipe,
    EncoderError,
    ManifestError,
    MatchResult,
    SourceImage,
    Stimulus,
    StudyManifest,
    load_manifest,
    match_bitrate,
    save_manifest,
)
from .design import (  # noqa: F401
    Batch,
    DesignError,
    Method,
    Side,
    StudyDesign,
    Triplet,
    build_design,
    load_design,
    parse_triplet_id,
    save_design,
)
from .store import (  # noqa: F401
    Ack,
    Choice,
    DuplicateConflict,
    LimitReached,
    Participant,
    Response,
    ResponseStore,
    StoreError,
    StudyComplete,
    read_responses_csv,
    summarize_responses,
    write_responses_csv,
)
from .cleansing import (  # noqa: F401
    BatchInstance,
    CleansingError,
    accuracy,
    cleanse,
    consistency,
)
from .model import (  # noqa: F401
    CodecParams,
    ModelError,
    QuestionTable,
    SourceModel,
    boost,
    build_question_table,
    choice_probability,
    negative_log_likelihood,
    rd_distortion,
)
from .fitting import (  # noqa: F401
    BootstrapConfig,
    BootstrapError,
    FitConfig,
    RDCurveBand,
    band_width_at,
    bootstrap_all,
    bootstrap_bands,
    fit_all,
    fit_source,
    load_bands,
    load_models,
    save_bands,
    save_models,
)
from .bench import (  # noqa: F401
    BenchError,
    CorrelationReport,
    MetricScores,
    grouped_correlation,
    mrr_test,
    plcc,
    srcc,
)
