"""Training-free composed image retrieval over precomputed embedding archives."""

from .composers import (
    BasicContext,
    BasicToggles,
    ComposedQuery,
    ComposerConfig,
    StoreBundle,
    build_basic_context,
    compose_basic,
    compose_freedom,
    compose_image_only,
    compose_product,
    compose_sum,
    compose_text_only,
    compose_weicom,
    run_query,
)
from .embedstore import (
    EmbeddingStore,
    LabelRecord,
    LabelTable,
    PoolResolver,
    QueryManifest,
    QueryRecord,
    RelevanceTable,
    VocabularyMemory,
    build_relevance,
    l2_normalize_rows,
    load_embeddings,
    load_labels,
    load_manifest,
)
from .evalkit import (
    EvalReport,
    average_precision,
    evaluate,
    evaluate_patterncom,
    evaluate_xview,
    sweep,
)
from .numerics import (
    ProjectionBasis,
    ScoreVector,
    contrastive_projection,
    covariance,
    minrange_normalize,
    project,
    std_normal_cdf,
    sym_eigen,
    zscore,
)
from .simcore import RankedList, rank, score_against, top_k_neighbors

__version__ = "0.1.0"
