"""Shared fixtures: a seeded synthetic attribute archive with every input
the engine consumes (stores, labels, manifest, vocabulary, corpora), plus
raw-array views of the same data for the reference implementation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from rscir.composers import StoreBundle
from rscir.embedstore import (
    EmbeddingStore,
    LabelRecord,
    LabelTable,
    QueryManifest,
    QueryRecord,
    VocabularyMemory,
)

N_CLASSES = 4
N_VALUES = 2
N_PER_CELL = 50
DIM = 32
VALUE_NAMES = ("alpha", "beta")
ATTR_GROUP = "shade"
SEED = 7


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=1, keepdims=True)


@dataclass(frozen=True)
class SyntheticArchive:
    stores: StoreBundle
    manifest: QueryManifest
    memory: VocabularyMemory
    corpora: tuple[EmbeddingStore, EmbeddingStore]
    raw: dict


def build_synthetic_archive(seed: int = SEED) -> SyntheticArchive:
    """4 classes x 2 attribute values x 50 items in 32 dims.

    Each item embeds as unit(class_dir + 0.5 * value_dir + 0.1 * noise)
    with the class and value directions mutually orthonormal; the text
    store maps each value name to its direction.
    """
    rng = np.random.default_rng(seed)
    directions, _ = np.linalg.qr(rng.standard_normal((DIM, N_CLASSES + N_VALUES)))
    class_dirs = directions[:, :N_CLASSES].T
    value_dirs = directions[:, N_CLASSES:].T

    ids: list[str] = []
    rows: list[np.ndarray] = []
    labels: list[LabelRecord] = []
    for c in range(N_CLASSES):
        for v in range(N_VALUES):
            for j in range(N_PER_CELL):
                image_id = f"img_c{c}_{VALUE_NAMES[v]}_{j:02d}"
                noise = rng.standard_normal(DIM)
                rows.append(_unit(class_dirs[c] + 0.5 * value_dirs[v] + 0.1 * noise))
                ids.append(image_id)
                labels.append(
                    LabelRecord(
                        image_id=image_id,
                        class_label=f"class{c}",
                        attributes={ATTR_GROUP: VALUE_NAMES[v]},
                    )
                )
    store = EmbeddingStore.from_arrays(ids, np.asarray(rows, dtype=np.float32))

    text_store = EmbeddingStore.from_arrays(
        list(VALUE_NAMES), value_dirs.astype(np.float32)
    )

    records = []
    for image_id, label in zip(ids, labels):
        own_value = label.attributes[ATTR_GROUP]
        target = VALUE_NAMES[1] if own_value == VALUE_NAMES[0] else VALUE_NAMES[0]
        records.append(
            QueryRecord(
                query_id=f"q_{image_id}",
                image_id=image_id,
                modifier=target,
                group=ATTR_GROUP,
                target_value=target,
                protocol="class_attribute",
                pool="all_except_query",
            )
        )
    manifest = QueryManifest(records=tuple(records))

    words = [f"w_class{c}" for c in range(N_CLASSES)]
    words += [f"w_{v}" for v in VALUE_NAMES]
    words += ["w_noise_a", "w_noise_b"]
    word_rows = np.vstack(
        [class_dirs, value_dirs, _unit_rows(rng.standard_normal((2, DIM)))]
    )
    word_store = EmbeddingStore.from_arrays(words, word_rows.astype(np.float32))

    composed_ids = []
    composed_rows = []
    for value, v_dir in zip(VALUE_NAMES, value_dirs):
        for word, w_row in zip(words, word_store.matrix.astype(np.float64)):
            composed_ids.append(f"{value}||{word}")
            composed_rows.append(
                _unit(v_dir + 0.6 * w_row + 0.05 * rng.standard_normal(DIM))
            )
    composed = EmbeddingStore.from_arrays(
        composed_ids, np.asarray(composed_rows, dtype=np.float32)
    )
    memory = VocabularyMemory.from_stores(word_store, composed)

    signal = np.vstack([class_dirs, value_dirs])
    plus_rows = _unit_rows(
        rng.standard_normal((60, N_CLASSES + N_VALUES)) @ signal
        + 0.2 * rng.standard_normal((60, DIM))
    )
    minus_rows = _unit_rows(rng.standard_normal((60, DIM)))
    c_plus = EmbeddingStore.from_arrays(
        [f"pos{i:02d}" for i in range(60)], plus_rows.astype(np.float32)
    )
    c_minus = EmbeddingStore.from_arrays(
        [f"neg{i:02d}" for i in range(60)], minus_rows.astype(np.float32)
    )

    label_table = LabelTable(labels)
    stores = StoreBundle(images=store, texts=text_store, labels=label_table)

    raw = {
        "ids": list(store.ids),
        "image_matrix": store.matrix.astype(np.float64),
        "text_ids": list(text_store.ids),
        "text_matrix": text_store.matrix.astype(np.float64),
        "labels": {
            rec.image_id: {"class": rec.class_label, "value": rec.attributes[ATTR_GROUP]}
            for rec in labels
        },
        "queries": [
            {
                "query_id": r.query_id,
                "image_id": r.image_id,
                "modifier": r.modifier,
                "group": r.group,
                "target_value": r.target_value,
            }
            for r in records
        ],
        "words": list(word_store.ids),
        "word_matrix": word_store.matrix.astype(np.float64),
        "composed": {
            cid: composed.matrix[i].astype(np.float64)
            for i, cid in enumerate(composed.ids)
        },
        "corpus_plus": c_plus.matrix.astype(np.float64),
        "corpus_minus": c_minus.matrix.astype(np.float64),
    }
    return SyntheticArchive(
        stores=stores, manifest=manifest, memory=memory,
        corpora=(c_plus, c_minus), raw=raw,
    )


@pytest.fixture(scope="session")
def archive() -> SyntheticArchive:
    return build_synthetic_archive()


def write_archive_bundle(arch: SyntheticArchive, out_dir: Path) -> dict[str, Path]:
    """Serialize the fixture archive to EMB1 + JSONL files for CLI runs."""
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "store": out_dir / "images.emb1",
        "text_store": out_dir / "texts.emb1",
        "vocab": out_dir / "words.emb1",
        "composed": out_dir / "composed.emb1",
        "corpus_pos": out_dir / "corpus_pos.emb1",
        "corpus_neg": out_dir / "corpus_neg.emb1",
        "labels": out_dir / "labels.jsonl",
        "manifest": out_dir / "manifest.jsonl",
    }
    arch.stores.images.save(paths["store"])
    arch.stores.texts.save(paths["text_store"])
    arch.memory.word_store.save(paths["vocab"])
    arch.memory.composed_table.save(paths["composed"])
    arch.corpora[0].save(paths["corpus_pos"])
    arch.corpora[1].save(paths["corpus_neg"])
    with open(paths["labels"], "w", encoding="utf-8") as f:
        for rec in arch.stores.labels:
            f.write(
                json.dumps(
                    {
                        "image_id": rec.image_id,
                        "class_label": rec.class_label,
                        "attributes": dict(rec.attributes),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    with open(paths["manifest"], "w", encoding="utf-8") as f:
        for r in arch.manifest:
            f.write(
                json.dumps(
                    {
                        "query_id": r.query_id,
                        "image_id": r.image_id,
                        "modifier": r.modifier,
                        "group": r.group,
                        "target_value": r.target_value,
                        "protocol": r.protocol,
                        "pool": r.pool,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return paths


@pytest.fixture(scope="session")
def archive_bundle(archive, tmp_path_factory) -> dict[str, Path]:
    return write_archive_bundle(archive, tmp_path_factory.mktemp("bundle"))


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {name}: {outcome}", flush=True)
