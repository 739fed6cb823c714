"""Composition strategies mapping (query, stores, config) to score vectors.

Seven methods: text_only, image_only, sum, product, weicom, freedom, and
basic.  All are pure: identical inputs produce bit-identical outputs, and
shared precomputation (vocabulary memories, basic contexts) is read-only.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import errors, kernels
from .embedstore import (
    EmbeddingStore,
    LabelTable,
    PoolResolver,
    QueryRecord,
    VocabularyMemory,
    l2_normalize_rows,
)
from .numerics import (
    CALIBRATION_CDF,
    CALIBRATION_RAW,
    ProjectionBasis,
    ScoreVector,
    contrastive_projection,
    minrange_normalize,
    project,
    project_rows,
    zscore,
)
from .simcore import RankedList, rank, score_against

METHOD_TEXT_ONLY = "text_only"
METHOD_IMAGE_ONLY = "image_only"
METHOD_SUM = "sum"
METHOD_PRODUCT = "product"
METHOD_WEICOM = "weicom"
METHOD_FREEDOM = "freedom"
METHOD_BASIC = "basic"
METHODS = (
    METHOD_TEXT_ONLY,
    METHOD_IMAGE_ONLY,
    METHOD_SUM,
    METHOD_PRODUCT,
    METHOD_WEICOM,
    METHOD_FREEDOM,
    METHOD_BASIC,
)


@dataclass(frozen=True)
class BasicToggles:
    """Ablation switches for the basic pipeline, all on by default."""

    centering: bool = True
    projection: bool = True
    harris: bool = True
    minrange_norm: bool = True
    contextualized_text: bool = True
    query_expansion: bool = True

    def as_dict(self) -> dict[str, bool]:
        return {
            "centering": self.centering,
            "projection": self.projection,
            "harris": self.harris,
            "minrange_norm": self.minrange_norm,
            "contextualized_text": self.contextualized_text,
            "query_expansion": self.query_expansion,
        }


@dataclass(frozen=True)
class ComposerConfig:
    """Method selector plus every tunable the composers read.

    Defaults: equal modality weight 0.5 for weicom; k=20, m=7, n=7 for
    freedom; p=250 components, alpha=0.2, 25-neighbor query expansion,
    and harris weight 0.1 for basic.
    """

    method: str = METHOD_PRODUCT
    lambda_weight: float = 0.5
    k: int = 20
    m: int = 7
    n: int = 7
    p: int = 250
    alpha: float = 0.2
    qe_k: int = 25
    lambda_harris: float = 0.1
    toggles: BasicToggles = field(default_factory=BasicToggles)

    def validate(self, memory: VocabularyMemory | None = None) -> None:
        if self.method not in METHODS:
            raise errors.UnknownMethod(f"unknown method {self.method!r}")
        if self.method == METHOD_WEICOM and not 0.0 <= self.lambda_weight <= 1.0:
            raise errors.BadConfig(f"lambda must be in [0, 1], got {self.lambda_weight}")
        if self.method == METHOD_FREEDOM:
            if min(self.k, self.m, self.n) < 1:
                raise errors.BadConfig("freedom requires k, m, n >= 1")
            if memory is None:
                raise errors.BadConfig("freedom requires a vocabulary memory")
        if self.method == METHOD_BASIC:
            if self.p < 1 or self.alpha < 0 or self.qe_k < 0 or self.lambda_harris < 0:
                raise errors.BadConfig(
                    "basic requires p >= 1, alpha >= 0, qe_k >= 0, lambda_harris >= 0"
                )

    def snapshot(self) -> dict:
        return {
            "method": self.method,
            "lambda": self.lambda_weight,
            "k": self.k,
            "m": self.m,
            "n": self.n,
            "p": self.p,
            "alpha": self.alpha,
            "qe_k": self.qe_k,
            "lambda_harris": self.lambda_harris,
            "toggles": self.toggles.as_dict(),
            "zscore_std": "population",
            "harris_fusion": "sf*sg - lambda_harris*(sf+sg)^2",
        }


@dataclass(frozen=True)
class ComposedQuery:
    """The two query-side embeddings plus the raw modifier text."""

    image_embedding: np.ndarray
    text_embedding: np.ndarray
    modifier: str

    def __post_init__(self):
        for name in ("image_embedding", "text_embedding"):
            v = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            nrm = float(np.linalg.norm(v))
            if abs(nrm - 1.0) > 1e-4:
                raise errors.NotNormalized(f"{name} has norm {nrm:.6f}, expected 1 within 1e-4")
            v.setflags(write=False)
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class StoreBundle:
    """Everything the composers read: image/text stores plus optional labels."""

    images: EmbeddingStore
    texts: EmbeddingStore
    texts_contextualized: EmbeddingStore | None = None
    labels: LabelTable | None = None


def _renormalize(v: np.ndarray) -> np.ndarray:
    nrm = float(np.linalg.norm(v))
    if nrm == 0.0:
        raise errors.ZeroNormRow("vector collapsed to zero norm")
    return v / nrm


def compose_text_only(
    q: ComposedQuery, db: EmbeddingStore, pool: Sequence[str]
) -> ScoreVector:
    return score_against(q.text_embedding, db, pool)


def compose_image_only(
    q: ComposedQuery, db: EmbeddingStore, pool: Sequence[str]
) -> ScoreVector:
    return score_against(q.image_embedding, db, pool)


def compose_sum(q: ComposedQuery, db: EmbeddingStore, pool: Sequence[str]) -> ScoreVector:
    s_f = compose_image_only(q, db, pool)
    s_g = compose_text_only(q, db, pool)
    return ScoreVector(0.5 * (s_f.values + s_g.values), calibration=CALIBRATION_RAW)


def compose_product(q: ComposedQuery, db: EmbeddingStore, pool: Sequence[str]) -> ScoreVector:
    s_f = compose_image_only(q, db, pool)
    s_g = compose_text_only(q, db, pool)
    return ScoreVector(s_f.values * s_g.values, calibration=CALIBRATION_RAW)


def compose_weicom(
    q: ComposedQuery,
    db: EmbeddingStore,
    pool: Sequence[str],
    lambda_weight: float,
) -> ScoreVector:
    """Calibrated modality mix: lambda * cdf(z(text)) + (1-lambda) * cdf(z(image)).

    The calibration is strictly increasing for non-degenerate score
    distributions, so lambda = 0 reproduces the image-only ranking and
    lambda = 1 the text-only ranking exactly.
    """
    if len(pool) < 2:
        raise errors.TooShort("weicom needs a pool of at least 2 candidates")
    z_f = zscore(compose_image_only(q, db, pool))
    z_g = zscore(compose_text_only(q, db, pool))
    # Mix the CDF half-offsets around 0.5 so exactly opposing score
    # distributions cancel bitwise at lambda = 0.5.
    h_f = kernels.normal_cdf_half_array(z_f.values)
    h_g = kernels.normal_cdf_half_array(z_g.values)
    fused = 0.5 + (lambda_weight * h_g + (1.0 - lambda_weight) * h_f)
    return ScoreVector(
        fused, calibration=CALIBRATION_CDF, degenerate=z_f.degenerate or z_g.degenerate
    )


def _rank_word_indices(words: np.ndarray, scores: np.ndarray) -> np.ndarray:
    # descending score, ties by ascending word string
    return np.lexsort((words, -scores))


def compose_freedom(
    q: ComposedQuery,
    db: EmbeddingStore,
    pool: Sequence[str],
    memory: VocabularyMemory,
    k: int,
    m: int,
    n: int,
) -> ScoreVector:
    """Vocabulary-memory composition with proxy images and frequency voting.

    Proxies are the query image plus its k-1 nearest pool neighbors (k=1
    disables visual expansion).  Each proxy votes for its top-n words;
    the m most frequent words (frequency ties broken by summed proxy
    cosine, then word string) are fused through the composed-text table
    by frequency-weighted averaging.
    """
    if min(k, m, n) < 1:
        raise errors.BadConfig("freedom requires k, m, n >= 1")
    if k > 1 + len(pool):
        raise errors.KTooLarge(f"k={k} exceeds 1 + pool size {len(pool)}")
    if n > len(memory.words):
        raise errors.KTooLarge(f"n={n} exceeds vocabulary size {len(memory.words)}")

    proxies = [q.image_embedding]
    if k > 1:
        image_scores = score_against(q.image_embedding, db, pool)
        neighbor_ids = rank(image_scores, pool).ids[: k - 1]
        proxies.extend(db.vector(i) for i in neighbor_ids)

    words = np.asarray(memory.words, dtype=object)
    word_matrix = memory.word_store.matrix.astype(np.float64)
    votes: Counter[int] = Counter()
    summed_cos = np.zeros(len(words))
    for proxy in proxies:
        scores = word_matrix @ proxy
        summed_cos += scores
        for idx in _rank_word_indices(words, scores)[:n]:
            votes[int(idx)] += 1

    retained = sorted(votes, key=lambda i: (-votes[i], -summed_cos[i], words[i]))[:m]
    composed = np.zeros(db.dim)
    for idx in retained:
        word = str(words[idx])
        key = memory.composed_key(q.modifier, word)
        if key not in memory.composed_table:
            raise errors.MissingComposedEntry([key])
        composed += votes[idx] * memory.composed_vector(q.modifier, word)
    return score_against(_renormalize(composed), db, pool)


@dataclass(frozen=True)
class BasicContext:
    """Per-(database, corpora, config) precomputation reused across queries.

    Holds the centering means, the contrastive projection basis, and the
    database rows with centering/projection already applied (float64).
    """

    store: EmbeddingStore
    db_matrix: np.ndarray
    mu_img: np.ndarray | None
    mu_txt: np.ndarray | None
    basis: ProjectionBasis | None
    effective_p: int | None

    def transformed_rows(self, pool: Sequence[str]) -> np.ndarray:
        idx = [self.store.index_of(i) for i in pool]
        return self.db_matrix[idx]


def build_basic_context(
    db: EmbeddingStore,
    corpora: tuple[EmbeddingStore, EmbeddingStore],
    cfg: ComposerConfig,
    mu_img: np.ndarray | None = None,
    mu_txt: np.ndarray | None = None,
) -> BasicContext:
    """Precompute means, the projection basis, and transformed database rows.

    Means default to the database image mean and the positive-corpus text
    mean; pass explicit ones to use an external corpus instead.  The
    subspace dimension is capped at the embedding dimension.
    """
    c_plus, c_minus = corpora
    if c_plus.dim != db.dim or c_minus.dim != db.dim:
        raise errors.DimensionMismatch(
            f"corpora dims ({c_plus.dim}, {c_minus.dim}) vs database dim {db.dim}"
        )
    mat = db.matrix.astype(np.float64)
    use_mu_img = use_mu_txt = None
    if cfg.toggles.centering:
        use_mu_img = np.asarray(
            mat.mean(axis=0) if mu_img is None else mu_img, dtype=np.float64
        )
        use_mu_txt = np.asarray(
            c_plus.matrix.astype(np.float64).mean(axis=0) if mu_txt is None else mu_txt,
            dtype=np.float64,
        )
        mat = l2_normalize_rows(mat - use_mu_img)
    basis = None
    effective_p = None
    if cfg.toggles.projection:
        effective_p = min(cfg.p, db.dim)
        basis = contrastive_projection(c_plus, c_minus, cfg.alpha, effective_p)
        mat, _ = project_rows(basis, mat)
    return BasicContext(
        store=db,
        db_matrix=np.ascontiguousarray(mat),
        mu_img=use_mu_img,
        mu_txt=use_mu_txt,
        basis=basis,
        effective_p=effective_p,
    )


def compose_basic(
    q: ComposedQuery,
    pool: Sequence[str],
    ctx: BasicContext,
    cfg: ComposerConfig,
) -> ScoreVector:
    """Centering, projection, optional query expansion, calibration, and
    harris-regularized multiplicative fusion, each stage gated by its toggle."""
    v_y = q.image_embedding
    v_t = q.text_embedding
    if cfg.toggles.centering:
        v_y = _renormalize(v_y - ctx.mu_img)
        v_t = _renormalize(v_t - ctx.mu_txt)
    if cfg.toggles.projection:
        v_y, _ = project(ctx.basis, v_y)
        v_t, _ = project(ctx.basis, v_t)

    rows = ctx.transformed_rows(pool)
    if cfg.toggles.query_expansion and cfg.qe_k > 0:
        qe_k = min(cfg.qe_k, len(pool))
        neighbor_scores = ScoreVector(rows @ v_y, calibration=CALIBRATION_RAW)
        neighbor_ids = rank(neighbor_scores, pool).ids[:qe_k]
        neighbor_rows = ctx.transformed_rows(neighbor_ids)
        v_y = _renormalize(np.vstack([v_y[None, :], neighbor_rows]).mean(axis=0))

    s_f = ScoreVector(rows @ v_y, calibration=CALIBRATION_RAW)
    s_g = ScoreVector(rows @ v_t, calibration=CALIBRATION_RAW)
    degenerate = False
    if cfg.toggles.minrange_norm:
        s_f = minrange_normalize(s_f)
        s_g = minrange_normalize(s_g)
        degenerate = s_f.degenerate or s_g.degenerate
    fused = s_f.values * s_g.values
    if cfg.toggles.harris and cfg.lambda_harris != 0.0:
        fused = fused - cfg.lambda_harris * np.square(s_f.values + s_g.values)
    return ScoreVector(fused, calibration=CALIBRATION_RAW, degenerate=degenerate)


def resolve_text_embedding(
    record: QueryRecord, cfg: ComposerConfig, stores: StoreBundle
) -> np.ndarray:
    """Pick the text embedding for a modifier, honoring the contextualized toggle."""
    store = stores.texts
    if (
        cfg.method == METHOD_BASIC
        and cfg.toggles.contextualized_text
        and stores.texts_contextualized is not None
    ):
        store = stores.texts_contextualized
    if record.modifier not in store:
        raise errors.UnknownId(
            f"modifier {record.modifier!r} has no embedding in the text store"
        )
    return store.vector(record.modifier)


def run_query(
    record: QueryRecord,
    cfg: ComposerConfig,
    stores: StoreBundle,
    memory: VocabularyMemory | None = None,
    corpora: tuple[EmbeddingStore, EmbeddingStore] | None = None,
    basic_ctx: BasicContext | None = None,
    pool: Sequence[str] | None = None,
) -> RankedList:
    """Dispatch one query through the configured composer and rank the pool."""
    cfg.validate(memory=memory)
    db = stores.images
    if record.image_id not in db:
        raise errors.UnresolvedImageId(f"query image {record.image_id!r} not in store")
    if pool is None:
        pool = PoolResolver(db, stores.labels).resolve(record)
    q = ComposedQuery(
        image_embedding=db.vector(record.image_id),
        text_embedding=resolve_text_embedding(record, cfg, stores),
        modifier=record.modifier,
    )
    method = cfg.method
    if method == METHOD_TEXT_ONLY:
        scores = compose_text_only(q, db, pool)
    elif method == METHOD_IMAGE_ONLY:
        scores = compose_image_only(q, db, pool)
    elif method == METHOD_SUM:
        scores = compose_sum(q, db, pool)
    elif method == METHOD_PRODUCT:
        scores = compose_product(q, db, pool)
    elif method == METHOD_WEICOM:
        scores = compose_weicom(q, db, pool, cfg.lambda_weight)
    elif method == METHOD_FREEDOM:
        scores = compose_freedom(q, db, pool, memory, cfg.k, cfg.m, cfg.n)
    elif method == METHOD_BASIC:
        if basic_ctx is None:
            if corpora is None:
                raise errors.BadConfig("basic requires corpora or a prebuilt context")
            basic_ctx = build_basic_context(db, corpora, cfg)
        scores = compose_basic(q, pool, basic_ctx, cfg)
    else:
        raise errors.UnknownMethod(f"unknown method {method!r}")
    return rank(scores, pool)


def config_with(cfg: ComposerConfig, **overrides) -> ComposerConfig:
    """Frozen-dataclass update helper used by sweeps and the CLI."""
    toggles = overrides.pop("toggles", None)
    if toggles is not None and isinstance(toggles, dict):
        toggles = replace(cfg.toggles, **toggles)
        overrides["toggles"] = toggles
    elif toggles is not None:
        overrides["toggles"] = toggles
    return replace(cfg, **overrides)
