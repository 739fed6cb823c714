"""Acceptance suite: every criterion at its stated tolerance and budget.

Headline benchmark numbers from real archives require checkpoint
inference and dataset downloads, so acceptance here is property- and
oracle-based on synthetic data; tolerances and runtime budgets are
asserted inline.
"""

import json
import time

import mpmath
import numpy as np
import pytest

from rscir import kernels
from rscir.cli import main as cli_main
from rscir.composers import (
    BasicToggles,
    ComposedQuery,
    ComposerConfig,
    compose_basic,
    compose_freedom,
    compose_image_only,
    compose_product,
    compose_text_only,
    compose_weicom,
    build_basic_context,
)
from rscir.embedstore import EmbeddingStore, build_relevance
from rscir.evalkit import (
    aggregate_class_attribute,
    aggregate_scene_state,
    average_precision,
    evaluate_patterncom,
)
from rscir.numerics import ScoreVector, contrastive_projection, std_normal_cdf, sym_eigen
from rscir.simcore import RankedList, rank, score_against

from reference_impl import ref_ap, ref_evaluate, ref_rank
from test_cli import flags, report_without_timestamp


@pytest.fixture(scope="module", autouse=True)
def warm_kernels():
    # JIT compilation happens once up front so runtime budgets measure math
    std_normal_cdf(np.zeros(4))
    sym_eigen(np.eye(3))
    kernels.ap_from_hits(np.array([1, 0], dtype=np.uint8), 1)


def unit(v):
    return v / np.linalg.norm(v)


def test_ap_oracle_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(101)
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        ids = [f"c{i:02d}" for i in range(n)]
        ranked = rank(ScoreVector(rng.standard_normal(n)), ids)
        n_pos = int(rng.integers(1, n + 1))
        positives = set(rng.choice(ids, size=n_pos, replace=False).tolist())
        engine = average_precision(ranked, positives)
        oracle = ref_ap(list(ranked.ids), positives)
        assert engine == oracle  # bitwise on float64
    assert time.monotonic() - start < 5.0


def test_weicom_endpoint_identities():
    start = time.monotonic()
    rng = np.random.default_rng(103)
    n, d = 100, 16
    store = EmbeddingStore.from_arrays(
        [f"a{i:03d}" for i in range(n)], rng.standard_normal((n, d)).astype(np.float32)
    )
    for _ in range(200):
        q = ComposedQuery(
            image_embedding=unit(rng.standard_normal(d)),
            text_embedding=unit(rng.standard_normal(d)),
            modifier="t",
        )
        s_f = compose_image_only(q, store, store.ids)
        s_g = compose_text_only(q, store, store.ids)
        assert np.unique(s_f.values).size == n  # distinct scores
        assert np.unique(s_g.values).size == n
        lo = rank(compose_weicom(q, store, store.ids, 0.0), store.ids)
        hi = rank(compose_weicom(q, store, store.ids, 1.0), store.ids)
        assert lo.ids == rank(s_f, store.ids).ids
        assert hi.ids == rank(s_g, store.ids).ids
    assert time.monotonic() - start < 5.0


def test_calibration_correctness():
    xs = np.linspace(-6.0, 6.0, 10_000)
    got = std_normal_cdf(xs)
    with mpmath.workdps(40):
        sqrt2 = mpmath.sqrt(2)
        want = np.array([float(0.5 * (1 + mpmath.erf(mpmath.mpf(x) / sqrt2))) for x in xs])
    assert np.max(np.abs(got - want)) <= 1e-7
    sym = std_normal_cdf(xs) + std_normal_cdf(-xs)
    assert np.max(np.abs(sym - 1.0)) <= 1e-12


def test_eigendecomposition():
    start = time.monotonic()
    rng = np.random.default_rng(107)
    for _ in range(100):
        d = int(rng.integers(2, 65))
        a = rng.standard_normal((d, d)) * rng.uniform(0.5, 3.0)
        a = 0.5 * (a + a.T)
        vals, vecs = sym_eigen(a)
        bound = 1e-8 * (1.0 + np.linalg.norm(a))
        residual = np.max(np.linalg.norm(a @ vecs.T - vecs.T * vals[None, :], axis=0))
        assert residual <= bound
        assert np.max(np.abs(vecs @ vecs.T - np.eye(d))) <= 1e-8
        assert np.all(np.diff(vals) <= 0.0) or np.all(np.diff(vals) <= 1e-12)

    for _ in range(10):
        c_plus = rng.standard_normal((10, 6))
        c_minus = rng.standard_normal((10, 6))
        basis = contrastive_projection(c_plus, c_minus, alpha=0.0, p=3)
        centered = c_plus - c_plus.mean(axis=0)
        _, ref_vecs = np.linalg.eigh((centered.T @ centered) / c_plus.shape[0])
        ref_basis = ref_vecs[:, ::-1][:, :3].T
        s = np.linalg.svd(basis.basis @ ref_basis.T, compute_uv=False)
        angles = np.arccos(np.clip(s, -1.0, 1.0))
        assert angles.max() <= 1e-6
    assert time.monotonic() - start < 30.0


ALL_OFF = BasicToggles(
    centering=False, projection=False, harris=False,
    minrange_norm=False, contextualized_text=False, query_expansion=False,
)


def test_pipeline_collapse(archive):
    rng = np.random.default_rng(109)
    cfg = ComposerConfig(method="basic", lambda_harris=0.0, toggles=ALL_OFF)
    for _ in range(100):
        n, d = 30, 8
        store = EmbeddingStore.from_arrays(
            [f"r{i:02d}" for i in range(n)], rng.standard_normal((n, d)).astype(np.float32)
        )
        corpus = EmbeddingStore.from_arrays(
            [f"c{i}" for i in range(5)], rng.standard_normal((5, d)).astype(np.float32)
        )
        ctx = build_basic_context(store, (corpus, corpus), cfg)
        q = ComposedQuery(
            image_embedding=unit(rng.standard_normal(d)),
            text_embedding=unit(rng.standard_normal(d)),
            modifier="m",
        )
        got = rank(compose_basic(q, store.ids, ctx, cfg), store.ids)
        want = rank(compose_product(q, store, store.ids), store.ids)
        assert got.ids == want.ids

    # vocabulary-memory composition with no expansion collapses to the
    # single best word's composed-table row
    db = archive.stores.images
    memory = archive.memory
    words = np.asarray(memory.words, dtype=object)
    word_matrix = memory.word_store.matrix.astype(np.float64)
    for rec in archive.manifest.records[:20]:
        pool = tuple(i for i in db.ids if i != rec.image_id)
        q = ComposedQuery(
            image_embedding=db.vector(rec.image_id),
            text_embedding=archive.stores.texts.vector(rec.modifier),
            modifier=rec.modifier,
        )
        scores = word_matrix @ q.image_embedding
        best = sorted(range(len(words)), key=lambda i: (-scores[i], words[i]))[0]
        table_row = memory.composed_vector(rec.modifier, str(words[best]))
        expected = score_against(unit(table_row), db, pool)
        got = compose_freedom(q, db, pool, memory, k=1, m=1, n=1)
        np.testing.assert_allclose(got.values, expected.values, atol=1e-9)


METHOD_PARAMS = {
    "text_only": {},
    "image_only": {},
    "sum": {},
    "product": {},
    "weicom": {"lambda": 0.5},
    "freedom": {"k": 20, "m": 7, "n": 7},
    "basic": {"p": 6, "alpha": 0.2, "qe_k": 25, "lambda_harris": 0.1},
}


def engine_config(method):
    params = METHOD_PARAMS[method]
    return ComposerConfig(
        method=method,
        lambda_weight=params.get("lambda", 0.5),
        k=params.get("k", 20),
        m=params.get("m", 7),
        n=params.get("n", 7),
        p=params.get("p", 250),
        alpha=params.get("alpha", 0.2),
        qe_k=params.get("qe_k", 25),
        lambda_harris=params.get("lambda_harris", 0.1),
    )


def test_synthetic_archive_benchmark(archive):
    start = time.monotonic()
    relevance = build_relevance(archive.manifest, archive.stores.labels, archive.stores.images)
    macros = {}
    for method in METHOD_PARAMS:
        report = evaluate_patterncom(
            archive.manifest, relevance, engine_config(method), archive.stores,
            memory=archive.memory, corpora=archive.corpora,
        )
        ref_macro, ref_overall = ref_evaluate(archive.raw, method, METHOD_PARAMS[method])
        assert abs(report.macro_map - ref_macro) <= 1e-9, method
        assert abs(report.overall_map - ref_overall) <= 1e-9, method
        macros[method] = report.macro_map
    assert macros["product"] > macros["image_only"]
    assert macros["product"] > macros["text_only"]
    assert time.monotonic() - start < 10.0


def test_evaluation_protocol_arithmetic():
    # attribute protocol: three-level aggregation on worked examples
    rows = [(f"qa{i}", "A", "v", 1.0) for i in range(7)] + [("qb", "B", "v", 0.0)]
    _, per_group, macro, _ = aggregate_class_attribute(rows)
    assert macro == 0.5

    rows = [("q1", "G", "v1", 0.2), ("q2", "G", "v1", 0.4), ("q3", "G", "v2", 0.9)]
    per_value, per_group, macro, _ = aggregate_class_attribute(rows)
    assert per_value[("G", "v1")] == (0.2 + 0.4) / 2
    assert per_group["G"] == ((0.2 + 0.4) / 2 + 0.9) / 2
    assert macro == per_group["G"]

    # change protocol: macro vs query-weighted overall
    rows = [(f"q{i}", "hurricane", "post-hurricane", 0.3) for i in range(10)]
    rows += [(f"r{i}", "volcano", "post-volcano", 0.9) for i in range(2)]
    _, per_group, macro, overall = aggregate_scene_state(rows)
    assert macro == (per_group["hurricane"] + per_group["volcano"]) / 2
    assert abs(macro - 0.6) <= 1e-12
    assert abs(overall - (10 * 0.3 + 2 * 0.9) / 12) <= 1e-12

    # precision-at-hit examples
    ranked = RankedList(ids=("p1", "n1", "p2", "n2"), scores=np.array([4.0, 3.0, 2.0, 1.0]))
    assert average_precision(ranked, {"p1", "p2"}) == (1.0 / 1.0 + 2.0 / 3.0) / 2.0
    ids = tuple(f"c{i}" for i in range(10))
    for r in range(1, 11):
        ranked = RankedList(ids=ids, scores=np.linspace(1.0, 0.1, 10))
        assert average_precision(ranked, {ids[r - 1]}) == 1.0 / r


def test_cmd_evaluate_determinism(archive_bundle, tmp_path, capsys):
    outs = [tmp_path / f"det{i}.json" for i in range(3)]
    thread_args = (["--threads", "1"], ["--threads", "1"], ["--threads", "8"])
    for path, extra in zip(outs, thread_args):
        code = cli_main(
            ["evaluate"]
            + flags(archive_bundle, "store", "text_store", "labels", "manifest")
            + ["--method", "product", "--out", str(path)]
            + extra
        )
        assert code == 0
    capsys.readouterr()
    payloads = [report_without_timestamp(p) for p in outs]
    blobs = [json.dumps(p, sort_keys=True) for p in payloads]
    assert blobs[0] == blobs[1]
    assert blobs[0] == blobs[2]
