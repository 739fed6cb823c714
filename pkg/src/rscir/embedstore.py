"""Embedding stores, query manifests, label tables, and relevance sets.

On-disk container ("EMB1"):

    bytes 0..3   ASCII magic "EMB1"
    bytes 4..7   unsigned 32-bit little-endian header length H
    bytes 8..8+H UTF-8 JSON header:
                 {"version": 1, "dtype": "f32", "rows": n, "dim": d,
                  "normalized": true|false, "ids": [...]}
    then         n*d IEEE-754 32-bit little-endian floats, row-major

Manifests and label tables are line-delimited JSON, one record per line.
All loaded structures are immutable after construction.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import errors

MAGIC = b"EMB1"
COMPOSED_KEY_SEPARATOR = "||"

PROTOCOL_CLASS_ATTRIBUTE = "class_attribute"
PROTOCOL_SCENE_STATE = "scene_state"
PROTOCOLS = frozenset({PROTOCOL_CLASS_ATTRIBUTE, PROTOCOL_SCENE_STATE})

POOL_ALL_EXCEPT_QUERY = "all_except_query"
POOL_POST_EVENT_ONLY = "post_event_only"
POOL_EXPLICIT_LIST = "explicit_list"
POOL_RULES = frozenset({POOL_ALL_EXCEPT_QUERY, POOL_POST_EVENT_ONLY, POOL_EXPLICIT_LIST})

PRE_EVENT_STATE = "pre_event"
POST_STATE_PREFIX = "post-"


def l2_normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Scale every row to unit Euclidean norm, preserving direction.

    Raises ZeroNormRow if any row has zero norm.  Norms are accumulated
    in float64 regardless of input dtype.
    """
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise errors.DimensionMismatch(f"expected a 2-d matrix, got shape {matrix.shape}")
    out_dtype = matrix.dtype if matrix.dtype in (np.float32, np.float64) else np.float64
    wide = matrix.astype(np.float64, copy=False)
    norms = np.linalg.norm(wide, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise errors.ZeroNormRow(f"row {bad} has zero norm")
    return (wide / norms[:, None]).astype(out_dtype)


@dataclass(frozen=True)
class EmbeddingStore:
    """Immutable n x d float32 matrix with a string-ID row index."""

    ids: tuple[str, ...]
    matrix: np.ndarray
    dim: int
    normalized: bool
    _index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    @classmethod
    def from_arrays(
        cls,
        ids: Sequence[str],
        matrix: np.ndarray,
        normalized: bool = False,
    ) -> "EmbeddingStore":
        """Build a store, renormalizing rows unless already flagged unit-norm.

        When ``normalized`` is true the rows are trusted to be unit norm
        (within 1e-4) and left bit-for-bit untouched; otherwise they are
        renormalized in memory.
        """
        ids = tuple(str(i) for i in ids)
        matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        if matrix.ndim != 2:
            raise errors.DimensionMismatch(f"expected 2-d matrix, got shape {matrix.shape}")
        n, d = matrix.shape
        if n < 1 or d < 1:
            raise errors.DimensionMismatch(f"store must have n >= 1 and d >= 1, got {n}x{d}")
        if len(ids) != n:
            raise errors.DimensionMismatch(f"{len(ids)} ids for {n} rows")
        if len(set(ids)) != len(ids):
            seen: set[str] = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise errors.DuplicateId(f"duplicate id {dup!r}")
        if not np.all(np.isfinite(matrix)):
            raise errors.NonFiniteValue("matrix contains NaN or infinity")
        if normalized:
            norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
            off = np.abs(norms - 1.0)
            if np.any(off > 1e-4):
                bad = int(np.argmax(off))
                raise errors.NotNormalized(
                    f"row {bad} ({ids[bad]!r}) has norm {norms[bad]:.6f}, expected 1 within 1e-4"
                )
        else:
            matrix = l2_normalize_rows(matrix)
        matrix.setflags(write=False)
        index = {s: i for i, s in enumerate(ids)}
        return cls(ids=ids, matrix=matrix, dim=d, normalized=True, _index=index)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, id_: str) -> bool:
        return id_ in self._index

    def index_of(self, id_: str) -> int:
        try:
            return self._index[id_]
        except KeyError:
            raise errors.UnknownId(f"id {id_!r} not in store") from None

    def vector(self, id_: str) -> np.ndarray:
        """Row for ``id_`` as a float64 copy."""
        return self.matrix[self.index_of(id_)].astype(np.float64)

    def rows(self, ids: Iterable[str]) -> np.ndarray:
        idx = [self.index_of(i) for i in ids]
        return self.matrix[idx]

    def content_hash(self) -> str:
        """SHA-256 over ids and raw row bytes; stable fingerprint for reports."""
        h = hashlib.sha256()
        h.update(struct.pack("<II", len(self.ids), self.dim))
        for i in self.ids:
            h.update(i.encode("utf-8") + b"\x00")
        h.update(np.ascontiguousarray(self.matrix, dtype="<f4").tobytes())
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        header = {
            "version": 1,
            "dtype": "f32",
            "rows": len(self.ids),
            "dim": self.dim,
            "normalized": bool(self.normalized),
            "ids": list(self.ids),
        }
        blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            f.write(np.ascontiguousarray(self.matrix, dtype="<f4").tobytes())


def load_embeddings(path: str | Path) -> EmbeddingStore:
    """Load and validate an EMB1 file.

    Rows flagged ``normalized: false`` in the header are renormalized in
    memory; rows flagged true are loaded bit-exactly and verified.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise errors.BadMagic(f"{path}: expected magic {MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 8:
        raise errors.HeaderParse(f"{path}: truncated header length field")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise errors.HeaderParse(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise errors.HeaderParse(f"{path}: bad JSON header: {exc}") from exc
    for key in ("rows", "dim", "normalized", "ids", "dtype"):
        if key not in header:
            raise errors.HeaderParse(f"{path}: header missing field {key!r}")
    if header["dtype"] != "f32":
        raise errors.HeaderParse(f"{path}: unsupported dtype {header['dtype']!r}")
    rows, dim = int(header["rows"]), int(header["dim"])
    ids = header["ids"]
    if not isinstance(ids, list) or len(ids) != rows:
        raise errors.HeaderParse(f"{path}: header declares {rows} rows but {len(ids)} ids")
    payload = raw[8 + hlen :]
    expected = rows * dim * 4
    if len(payload) != expected:
        raise errors.DimensionMismatch(
            f"{path}: payload is {len(payload)} bytes, expected {expected} ({rows}x{dim} f32)"
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(rows, dim).copy()
    return EmbeddingStore.from_arrays(ids, matrix, normalized=bool(header["normalized"]))


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    image_id: str
    modifier: str
    group: str
    target_value: str
    protocol: str
    pool: str
    candidates: tuple[str, ...] | None = None


@dataclass(frozen=True)
class QueryManifest:
    """Ordered composed queries plus the group sets they declare."""

    records: tuple[QueryRecord, ...]

    @property
    def attribute_groups(self) -> frozenset[str]:
        return frozenset(
            r.group for r in self.records if r.protocol == PROTOCOL_CLASS_ATTRIBUTE
        )

    @property
    def disaster_groups(self) -> frozenset[str]:
        return frozenset(r.group for r in self.records if r.protocol == PROTOCOL_SCENE_STATE)

    @property
    def modifiers(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.modifier)
        return tuple(seen)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


_REQUIRED_MANIFEST_FIELDS = (
    "query_id",
    "image_id",
    "modifier",
    "group",
    "target_value",
    "protocol",
    "pool",
)


def load_manifest(path: str | Path) -> QueryManifest:
    """Parse a JSONL manifest, one query per line, preserving order."""
    records: list[QueryRecord] = []
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise errors.ParseError(f"{path}:{lineno}: {exc}") from exc
            for key in _REQUIRED_MANIFEST_FIELDS:
                if key not in obj:
                    raise errors.MissingField(f"{path}:{lineno}: missing field {key!r}")
            if obj["protocol"] not in PROTOCOLS:
                raise errors.UnknownProtocol(
                    f"{path}:{lineno}: unknown protocol {obj['protocol']!r}"
                )
            if obj["pool"] not in POOL_RULES:
                raise errors.ParseError(f"{path}:{lineno}: unknown pool rule {obj['pool']!r}")
            candidates = obj.get("candidates")
            if obj["pool"] == POOL_EXPLICIT_LIST:
                if not candidates:
                    raise errors.MissingField(
                        f"{path}:{lineno}: pool=explicit_list requires a non-empty 'candidates' list"
                    )
                candidates = tuple(str(c) for c in candidates)
            else:
                candidates = None
            if COMPOSED_KEY_SEPARATOR in obj["modifier"]:
                raise errors.ParseError(
                    f"{path}:{lineno}: modifier may not contain {COMPOSED_KEY_SEPARATOR!r}"
                )
            if obj["query_id"] in seen_ids:
                raise errors.DuplicateId(f"{path}:{lineno}: duplicate query_id {obj['query_id']!r}")
            seen_ids.add(obj["query_id"])
            records.append(
                QueryRecord(
                    query_id=str(obj["query_id"]),
                    image_id=str(obj["image_id"]),
                    modifier=str(obj["modifier"]),
                    group=str(obj["group"]),
                    target_value=str(obj["target_value"]),
                    protocol=str(obj["protocol"]),
                    pool=str(obj["pool"]),
                    candidates=candidates,
                )
            )
    manifest = QueryManifest(records=tuple(records))
    overlap = manifest.attribute_groups & manifest.disaster_groups
    if overlap:
        raise errors.ParseError(
            f"{path}: groups {sorted(overlap)} appear under both protocols"
        )
    return manifest


@dataclass(frozen=True)
class LabelRecord:
    image_id: str
    class_label: str | None = None
    attributes: Mapping[str, str] = field(default_factory=dict)
    scene_id: str | None = None
    state: str | None = None


class LabelTable:
    """Label records indexed by image id."""

    def __init__(self, records: Iterable[LabelRecord]):
        self._by_id: dict[str, LabelRecord] = {}
        for rec in records:
            if rec.image_id in self._by_id:
                raise errors.DuplicateId(f"duplicate label for image {rec.image_id!r}")
            self._by_id[rec.image_id] = rec

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._by_id

    def get(self, image_id: str) -> LabelRecord:
        try:
            return self._by_id[image_id]
        except KeyError:
            raise errors.UnresolvedImageId(f"no label record for image {image_id!r}") from None

    def __iter__(self):
        return iter(self._by_id.values())


def load_labels(path: str | Path) -> LabelTable:
    records: list[LabelRecord] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise errors.ParseError(f"{path}:{lineno}: {exc}") from exc
            if "image_id" not in obj:
                raise errors.MissingField(f"{path}:{lineno}: missing field 'image_id'")
            records.append(
                LabelRecord(
                    image_id=str(obj["image_id"]),
                    class_label=obj.get("class_label"),
                    attributes=dict(obj.get("attributes") or {}),
                    scene_id=obj.get("scene_id"),
                    state=obj.get("state"),
                )
            )
    return LabelTable(records)


@dataclass(frozen=True)
class VocabularyMemory:
    """Word list with word embeddings and a composed-text embedding table.

    ``composed_table`` IDs are "modifier||word"; the separator is
    forbidden inside modifiers and words.
    """

    words: tuple[str, ...]
    word_store: EmbeddingStore
    composed_table: EmbeddingStore

    @classmethod
    def from_stores(
        cls, word_store: EmbeddingStore, composed_table: EmbeddingStore
    ) -> "VocabularyMemory":
        for w in word_store.ids:
            if COMPOSED_KEY_SEPARATOR in w:
                raise errors.ParseError(f"word {w!r} contains {COMPOSED_KEY_SEPARATOR!r}")
        return cls(words=word_store.ids, word_store=word_store, composed_table=composed_table)

    def composed_key(self, modifier: str, word: str) -> str:
        return f"{modifier}{COMPOSED_KEY_SEPARATOR}{word}"

    def composed_vector(self, modifier: str, word: str) -> np.ndarray:
        return self.composed_table.vector(self.composed_key(modifier, word))

    def missing_composed_keys(self, modifiers: Iterable[str]) -> list[str]:
        missing = []
        for mod in modifiers:
            for w in self.words:
                key = self.composed_key(mod, w)
                if key not in self.composed_table:
                    missing.append(key)
        return missing

    def validate_coverage(self, modifiers: Iterable[str]) -> None:
        missing = self.missing_composed_keys(modifiers)
        if missing:
            raise errors.MissingComposedEntry(missing)


class PoolResolver:
    """Resolve a query record's candidate pool against a store and labels.

    Resolution is deterministic: pools follow store row order (or the
    explicit list order), with the query image dropped under
    all_except_query.
    """

    def __init__(self, store: EmbeddingStore, labels: LabelTable | None = None):
        self._store = store
        self._all_ids = store.ids
        self._post_ids: tuple[str, ...] | None = None
        if labels is not None:
            self._post_ids = tuple(
                i
                for i in store.ids
                if i in labels and (labels.get(i).state or "").startswith(POST_STATE_PREFIX)
            )

    def resolve(self, record: QueryRecord) -> tuple[str, ...]:
        # only all_except_query drops the query image; explicit lists and
        # post-event pools are taken verbatim (a pre-event query image can
        # deliberately appear as its own distractor)
        if record.pool == POOL_ALL_EXCEPT_QUERY:
            return tuple(i for i in self._all_ids if i != record.image_id)
        if record.pool == POOL_POST_EVENT_ONLY:
            if self._post_ids is None:
                raise errors.UnresolvedImageId(
                    "pool=post_event_only requires a label table with state fields"
                )
            return self._post_ids
        if record.pool == POOL_EXPLICIT_LIST:
            assert record.candidates is not None
            for c in record.candidates:
                if c not in self._store:
                    raise errors.UnresolvedImageId(
                        f"explicit pool candidate {c!r} not in store (query {record.query_id!r})"
                    )
            return record.candidates
        raise errors.ParseError(f"unknown pool rule {record.pool!r}")


@dataclass(frozen=True)
class RelevanceTable:
    """Per-query positive ID sets, plus queries skipped for empty positives."""

    positives: Mapping[str, frozenset[str]]
    skipped: tuple[tuple[str, str], ...]

    def __contains__(self, query_id: str) -> bool:
        return query_id in self.positives

    def get(self, query_id: str) -> frozenset[str]:
        return self.positives[query_id]


def build_relevance(
    manifest: QueryManifest,
    labels: LabelTable,
    store: EmbeddingStore,
    on_empty: str = "skip",
) -> RelevanceTable:
    """Derive per-query positive sets from labels under both protocols.

    Protocol class_attribute: positives share the query image's class and
    carry the target attribute value.  Protocol scene_state: positives
    share the query image's scene and carry the target state.  The query
    image itself is never a positive.  ``on_empty`` is "skip" (warn and
    record) or "abort".
    """
    if on_empty not in ("skip", "abort"):
        raise ValueError(f"on_empty must be 'skip' or 'abort', got {on_empty!r}")

    by_class_value: dict[tuple[str, str, str], set[str]] = {}
    by_scene_state: dict[tuple[str, str], set[str]] = {}
    for rec in labels:
        if rec.image_id not in store:
            continue
        if rec.class_label is not None:
            for attr, value in rec.attributes.items():
                by_class_value.setdefault((rec.class_label, attr, value), set()).add(rec.image_id)
        if rec.scene_id is not None and rec.state is not None:
            by_scene_state.setdefault((rec.scene_id, rec.state), set()).add(rec.image_id)

    resolver = PoolResolver(store, labels)
    positives: dict[str, frozenset[str]] = {}
    skipped: list[tuple[str, str]] = []
    for record in manifest:
        if record.image_id not in store:
            raise errors.UnresolvedImageId(
                f"query {record.query_id!r}: image {record.image_id!r} not in store"
            )
        y = labels.get(record.image_id)
        if record.protocol == PROTOCOL_CLASS_ATTRIBUTE:
            if y.class_label is None:
                raise errors.UnresolvedImageId(
                    f"query {record.query_id!r}: image {record.image_id!r} has no class label"
                )
            base = by_class_value.get((y.class_label, record.group, record.target_value), set())
        else:
            if y.scene_id is None:
                raise errors.UnresolvedImageId(
                    f"query {record.query_id!r}: image {record.image_id!r} has no scene id"
                )
            base = by_scene_state.get((y.scene_id, record.target_value), set())
        if record.pool == POOL_ALL_EXCEPT_QUERY:
            pos = base - {record.image_id}
        else:
            pool = frozenset(resolver.resolve(record))
            pos = (base & pool) - {record.image_id}
        if not pos:
            if on_empty == "abort":
                raise errors.EmptyPositives(
                    f"query {record.query_id!r} has no positives"
                )
            warnings.warn(
                f"query {record.query_id!r} has no positives; skipping", stacklevel=2
            )
            skipped.append((record.query_id, "empty positive set"))
            continue
        positives[record.query_id] = frozenset(pos)
    return RelevanceTable(positives=positives, skipped=tuple(skipped))
