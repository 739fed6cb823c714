"""Average precision and the two benchmark evaluation protocols.

Attribute archives aggregate three levels deep (queries -> value ->
attribute type -> macro); change archives aggregate per disaster with
both an unweighted macro mean and a query-weighted overall mean.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import errors, kernels
from .composers import (
    METHOD_BASIC,
    METHOD_FREEDOM,
    BasicContext,
    ComposerConfig,
    StoreBundle,
    VocabularyMemory,
    build_basic_context,
    config_with,
    run_query,
)
from .embedstore import (
    PROTOCOL_CLASS_ATTRIBUTE,
    PROTOCOL_SCENE_STATE,
    EmbeddingStore,
    PoolResolver,
    QueryManifest,
    RelevanceTable,
)
from .simcore import RankedList

QueryRow = tuple[str, str, str, float]  # (query_id, group, target_value, ap)


def average_precision(ranked: RankedList, positives: Iterable[str]) -> float:
    """Mean of precision at each rank where a positive is retrieved."""
    pos = frozenset(positives)
    if not pos:
        raise errors.EmptyPositives("positive set is empty")
    outside = pos - set(ranked.ids)
    if outside:
        raise errors.PositiveOutsidePool(
            f"{len(outside)} positives outside the ranked pool, e.g. {sorted(outside)[:3]}"
        )
    hits = np.fromiter((i in pos for i in ranked.ids), dtype=np.uint8, count=len(ranked))
    return kernels.ap_from_hits(hits, len(pos))


@dataclass(frozen=True)
class EvalReport:
    """Per-query APs with every aggregation level and the run configuration."""

    protocol: str
    per_query: tuple[QueryRow, ...]
    per_value: Mapping[tuple[str, str], float]
    per_group: Mapping[str, float]
    macro_map: float
    overall_map: float
    config: Mapping[str, object]
    skipped: tuple[tuple[str, str], ...]

    def to_json_dict(self) -> dict:
        per_value_nested: dict[str, dict[str, float]] = {}
        for (group, value), ap in sorted(self.per_value.items()):
            per_value_nested.setdefault(group, {})[value] = ap
        return {
            "report_version": 1,
            "protocol": self.protocol,
            "config": dict(self.config),
            "macro_map": self.macro_map,
            "overall_map": self.overall_map,
            "per_group": {g: self.per_group[g] for g in sorted(self.per_group)},
            "per_value": per_value_nested,
            "per_query": [list(row) for row in self.per_query],
            "skipped": [list(s) for s in self.skipped],
        }


def aggregate_class_attribute(
    rows: Sequence[QueryRow],
) -> tuple[dict[tuple[str, str], float], dict[str, float], float, float]:
    """Three-level aggregation: queries -> value mean -> group mean -> macro."""
    by_value: dict[tuple[str, str], list[float]] = {}
    for _, group, value, ap in rows:
        by_value.setdefault((group, value), []).append(ap)
    per_value = {key: sum(aps) / len(aps) for key, aps in by_value.items()}
    by_group: dict[str, list[float]] = {}
    for (group, _), mean_ap in sorted(per_value.items()):
        by_group.setdefault(group, []).append(mean_ap)
    per_group = {g: sum(v) / len(v) for g, v in by_group.items()}
    macro = sum(per_group[g] for g in sorted(per_group)) / len(per_group) if per_group else 0.0
    overall = sum(r[3] for r in rows) / len(rows) if rows else 0.0
    return per_value, per_group, macro, overall


def aggregate_scene_state(
    rows: Sequence[QueryRow],
) -> tuple[dict[tuple[str, str], float], dict[str, float], float, float]:
    """Two-level aggregation: per-disaster means, then macro and overall."""
    by_group: dict[str, list[float]] = {}
    by_value: dict[tuple[str, str], list[float]] = {}
    for _, group, value, ap in rows:
        by_group.setdefault(group, []).append(ap)
        by_value.setdefault((group, value), []).append(ap)
    per_group = {g: sum(v) / len(v) for g, v in by_group.items()}
    per_value = {key: sum(v) / len(v) for key, v in by_value.items()}
    macro = sum(per_group[g] for g in sorted(per_group)) / len(per_group) if per_group else 0.0
    overall = sum(r[3] for r in rows) / len(rows) if rows else 0.0
    return per_value, per_group, macro, overall


def _score_queries(
    manifest: QueryManifest,
    relevance: RelevanceTable,
    cfg: ComposerConfig,
    stores: StoreBundle,
    memory: VocabularyMemory | None,
    corpora: tuple[EmbeddingStore, EmbeddingStore] | None,
    threads: int,
    warn_multiple_positives: bool,
) -> list[QueryRow]:
    cfg.validate(memory=memory)
    if cfg.method == METHOD_FREEDOM:
        memory.validate_coverage(manifest.modifiers)
    basic_ctx: BasicContext | None = None
    if cfg.method == METHOD_BASIC:
        if corpora is None:
            raise errors.BadConfig("basic requires positive and negative corpora")
        basic_ctx = build_basic_context(stores.images, corpora, cfg)
    resolver = PoolResolver(stores.images, stores.labels)
    records = [r for r in manifest if r.query_id in relevance]

    def work(record) -> QueryRow:
        positives = relevance.get(record.query_id)
        if warn_multiple_positives and len(positives) > 1:
            warnings.warn(
                f"query {record.query_id!r} has {len(positives)} positives; "
                "this protocol expects exactly one",
                stacklevel=2,
            )
        pool = resolver.resolve(record)
        ranked = run_query(
            record, cfg, stores, memory=memory, corpora=corpora,
            basic_ctx=basic_ctx, pool=pool,
        )
        ap = average_precision(ranked, positives)
        return (record.query_id, record.group, record.target_value, ap)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool_exec:
            return list(pool_exec.map(work, records))
    return [work(r) for r in records]


def _check_protocol(manifest: QueryManifest, expected: str) -> None:
    bad = {r.protocol for r in manifest} - {expected}
    if bad:
        raise errors.MixedProtocols(
            f"manifest mixes protocols {sorted(bad | {expected})}, expected only {expected!r}"
        )


def _report_config(
    cfg: ComposerConfig, stores: StoreBundle,
    memory: VocabularyMemory | None,
    corpora: tuple[EmbeddingStore, EmbeddingStore] | None,
) -> dict:
    checksums = {"image_store": stores.images.content_hash(), "text_store": stores.texts.content_hash()}
    if stores.texts_contextualized is not None:
        checksums["text_store_contextualized"] = stores.texts_contextualized.content_hash()
    if memory is not None:
        checksums["word_store"] = memory.word_store.content_hash()
        checksums["composed_table"] = memory.composed_table.content_hash()
    if corpora is not None:
        checksums["corpus_pos"] = corpora[0].content_hash()
        checksums["corpus_neg"] = corpora[1].content_hash()
    config = cfg.snapshot()
    config["store_checksums"] = checksums
    config["tie_break"] = "by_id"
    return config


def evaluate_patterncom(
    manifest: QueryManifest,
    relevance: RelevanceTable,
    cfg: ComposerConfig,
    stores: StoreBundle,
    memory: VocabularyMemory | None = None,
    corpora: tuple[EmbeddingStore, EmbeddingStore] | None = None,
    threads: int = 1,
) -> EvalReport:
    """Attribute-balanced evaluation over a class_attribute manifest."""
    _check_protocol(manifest, PROTOCOL_CLASS_ATTRIBUTE)
    rows = _score_queries(
        manifest, relevance, cfg, stores, memory, corpora, threads,
        warn_multiple_positives=False,
    )
    per_value, per_group, macro, overall = aggregate_class_attribute(rows)
    config = _report_config(cfg, stores, memory, corpora)
    config["aggregation"] = (
        "AP averaged over queries per (attribute type, value), then over the"
        " values of the same attribute type, then across attribute types"
    )
    return EvalReport(
        protocol=PROTOCOL_CLASS_ATTRIBUTE,
        per_query=tuple(rows),
        per_value=per_value,
        per_group=per_group,
        macro_map=macro,
        overall_map=overall,
        config=config,
        skipped=relevance.skipped,
    )


def evaluate_xview(
    manifest: QueryManifest,
    relevance: RelevanceTable,
    cfg: ComposerConfig,
    stores: StoreBundle,
    memory: VocabularyMemory | None = None,
    corpora: tuple[EmbeddingStore, EmbeddingStore] | None = None,
    threads: int = 1,
) -> EvalReport:
    """Per-disaster evaluation over a scene_state manifest (macro + overall)."""
    _check_protocol(manifest, PROTOCOL_SCENE_STATE)
    rows = _score_queries(
        manifest, relevance, cfg, stores, memory, corpora, threads,
        warn_multiple_positives=True,
    )
    per_value, per_group, macro, overall = aggregate_scene_state(rows)
    config = _report_config(cfg, stores, memory, corpora)
    config["aggregation"] = (
        "macro: AP averaged per disaster then unweighted across disasters;"
        " overall: AP averaged over all queries"
    )
    return EvalReport(
        protocol=PROTOCOL_SCENE_STATE,
        per_query=tuple(rows),
        per_value=per_value,
        per_group=per_group,
        macro_map=macro,
        overall_map=overall,
        config=config,
        skipped=relevance.skipped,
    )


def evaluate(
    manifest: QueryManifest,
    relevance: RelevanceTable,
    cfg: ComposerConfig,
    stores: StoreBundle,
    **kwargs,
) -> EvalReport:
    """Dispatch to the protocol-appropriate evaluator (manifest must be homogeneous)."""
    if len(manifest) == 0:
        raise errors.ParseError("manifest contains no queries")
    protocols = {r.protocol for r in manifest}
    if len(protocols) != 1:
        raise errors.MixedProtocols(f"manifest mixes protocols {sorted(protocols)}")
    if protocols == {PROTOCOL_CLASS_ATTRIBUTE}:
        return evaluate_patterncom(manifest, relevance, cfg, stores, **kwargs)
    return evaluate_xview(manifest, relevance, cfg, stores, **kwargs)


SWEEP_PARAMS = ("lambda", "k", "mn", "qe_k", "p", "alpha", "lambda_harris", "vocabulary")

_SCALAR_SWEEPS: dict[str, Callable[[ComposerConfig, object], ComposerConfig]] = {
    "lambda": lambda cfg, v: config_with(cfg, lambda_weight=float(v)),
    "k": lambda cfg, v: config_with(cfg, k=int(v)),
    "mn": lambda cfg, v: config_with(cfg, m=int(v), n=int(v)),
    "qe_k": lambda cfg, v: config_with(cfg, qe_k=int(v)),
    "p": lambda cfg, v: config_with(cfg, p=int(v)),
    "alpha": lambda cfg, v: config_with(cfg, alpha=float(v)),
    "lambda_harris": lambda cfg, v: config_with(cfg, lambda_harris=float(v)),
}


def sweep(
    base_cfg: ComposerConfig,
    param: str,
    values: Sequence,
    eval_fn: Callable[..., EvalReport],
) -> list[tuple[object, EvalReport]]:
    """One full evaluation per parameter value, in the given order.

    ``eval_fn(cfg, memory=None)`` runs a single evaluation against shared
    precomputed stores and relevance.  For param "vocabulary" the values
    are vocabulary memories handed through unchanged; "mn" sets m and n
    jointly.
    """
    if param not in SWEEP_PARAMS:
        raise errors.UnknownParam(f"unknown sweep param {param!r}; expected one of {SWEEP_PARAMS}")
    results: list[tuple[object, EvalReport]] = []
    for value in values:
        if param == "vocabulary":
            report = eval_fn(base_cfg, memory=value)
        else:
            report = eval_fn(_SCALAR_SWEEPS[param](base_cfg, value))
        results.append((value, report))
    return results
