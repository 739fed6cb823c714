import numpy as np
import pytest

from rscir import errors
from rscir.composers import ComposerConfig, StoreBundle, config_with
from rscir.embedstore import (
    EmbeddingStore,
    LabelRecord,
    LabelTable,
    QueryManifest,
    QueryRecord,
    build_relevance,
)
from rscir.evalkit import (
    aggregate_class_attribute,
    aggregate_scene_state,
    average_precision,
    evaluate,
    evaluate_patterncom,
    evaluate_xview,
    sweep,
)
from rscir.numerics import ScoreVector
from rscir.simcore import RankedList, rank

from reference_impl import ref_ap


def ranked_of(ids):
    n = len(ids)
    return RankedList(ids=tuple(ids), scores=np.linspace(1.0, 0.0, n))


class TestAveragePrecision:
    def test_perfect_ranking(self):
        ranked = ranked_of(["p1", "p2", "n1", "n2"])
        assert average_precision(ranked, {"p1", "p2"}) == 1.0

    def test_positives_at_ranks_one_and_three(self):
        ranked = ranked_of(["p1", "n1", "p2", "n2"])
        want = (1.0 / 1.0 + 2.0 / 3.0) / 2.0
        assert average_precision(ranked, {"p1", "p2"}) == want
        assert ref_ap(list(ranked.ids), {"p1", "p2"}) == want

    def test_single_positive_all_ranks(self):
        ids = [f"c{i}" for i in range(10)]
        for r in range(1, 11):
            positives = {ids[r - 1]}
            got = average_precision(ranked_of(ids), positives)
            assert got == ref_ap(ids, positives)
            assert got == pytest.approx(1.0 / r)

    def test_random_instances_match_oracle_bitwise(self):
        rng = np.random.default_rng(61)
        for _ in range(200):
            n = int(rng.integers(2, 51))
            ids = [f"c{i:02d}" for i in range(n)]
            scores = rng.standard_normal(n)
            ranked = rank(ScoreVector(scores), ids)
            n_pos = int(rng.integers(1, n + 1))
            positives = set(rng.choice(ids, size=n_pos, replace=False).tolist())
            assert average_precision(ranked, positives) == ref_ap(list(ranked.ids), positives)

    def test_swapping_adjacent_negatives_preserves_ap(self):
        ids = ["p", "n1", "n2", "q"]
        swapped = ["p", "n2", "n1", "q"]
        positives = {"p", "q"}
        assert average_precision(ranked_of(ids), positives) == average_precision(
            ranked_of(swapped), positives
        )

    def test_empty_positives(self):
        with pytest.raises(errors.EmptyPositives):
            average_precision(ranked_of(["a"]), set())

    def test_positive_outside_pool(self):
        with pytest.raises(errors.PositiveOutsidePool):
            average_precision(ranked_of(["a", "b"]), {"zzz"})


class TestAggregation:
    def test_macro_ignores_query_counts(self):
        rows = [(f"qa{i}", "A", "v", 1.0) for i in range(10)]
        rows += [("qb0", "B", "v", 0.0)]
        _, per_group, macro, overall = aggregate_class_attribute(rows)
        assert per_group == {"A": 1.0, "B": 0.0}
        assert macro == 0.5
        assert overall == pytest.approx(10.0 / 11.0)

    def test_three_level_hand_example(self):
        rows = [
            ("q1", "G", "v1", 0.2),
            ("q2", "G", "v1", 0.4),
            ("q3", "G", "v2", 0.9),
        ]
        per_value, per_group, macro, _ = aggregate_class_attribute(rows)
        assert per_value[("G", "v1")] == pytest.approx(0.3)
        assert per_value[("G", "v2")] == pytest.approx(0.9)
        assert per_group["G"] == pytest.approx(0.6)
        assert macro == pytest.approx(0.6)

    def test_scene_weighted_example(self):
        rows = [(f"q{i}", "hurricane", "post-hurricane", 0.3) for i in range(10)]
        rows += [(f"r{i}", "volcano", "post-volcano", 0.9) for i in range(2)]
        _, per_group, macro, overall = aggregate_scene_state(rows)
        assert macro == pytest.approx(0.6)
        assert overall == pytest.approx((10 * 0.3 + 2 * 0.9) / 12.0)

    def test_macro_invariant_to_duplication_overall_not(self):
        rows = [
            ("q1", "A", "v", 0.4),
            ("q2", "B", "w", 0.8),
        ]
        dupe = rows + [("q1x", "A", "v", 0.4)]
        _, _, macro1, overall1 = aggregate_class_attribute(rows)
        _, _, macro2, overall2 = aggregate_class_attribute(dupe)
        assert macro1 == macro2
        assert overall1 != overall2


def scene_archive(extra_positive=False):
    rng = np.random.default_rng(71)
    scenes = ["s1", "s2", "s3"]
    ids, rows, labels = [], [], []
    for i, scene in enumerate(scenes):
        base = rng.standard_normal(8)
        base /= np.linalg.norm(base)
        pre = base
        post = base + 0.05 * rng.standard_normal(8)
        ids += [f"{scene}_pre", f"{scene}_post"]
        rows += [pre, post]
        labels.append(LabelRecord(f"{scene}_pre", scene_id=scene, state="pre_event"))
        labels.append(LabelRecord(f"{scene}_post", scene_id=scene, state="post-fire"))
        if extra_positive and i == 0:
            ids.append(f"{scene}_post2")
            rows.append(base + 0.04 * rng.standard_normal(8))
            labels.append(LabelRecord(f"{scene}_post2", scene_id=scene, state="post-fire"))
    store = EmbeddingStore.from_arrays(ids, np.asarray(rows, dtype=np.float32))
    texts = EmbeddingStore.from_arrays(
        ["post-fire"], rng.standard_normal((1, 8)).astype(np.float32)
    )
    records = tuple(
        QueryRecord(
            query_id=f"q_{scene}",
            image_id=f"{scene}_pre",
            modifier="post-fire",
            group="wildfire",
            target_value="post-fire",
            protocol="scene_state",
            pool="post_event_only",
        )
        for scene in scenes
    )
    manifest = QueryManifest(records=records)
    label_table = LabelTable(labels)
    stores = StoreBundle(images=store, texts=texts, labels=label_table)
    relevance = build_relevance(manifest, label_table, store)
    return manifest, relevance, stores


class TestEvaluateXview:
    def test_image_only_perfect_on_easy_scenes(self):
        manifest, relevance, stores = scene_archive()
        report = evaluate_xview(manifest, relevance, ComposerConfig(method="image_only"), stores)
        assert report.macro_map == 1.0
        assert report.overall_map == 1.0
        assert set(report.per_group) == {"wildfire"}

    def test_multiple_positives_warn(self):
        manifest, relevance, stores = scene_archive(extra_positive=True)
        with pytest.warns(UserWarning, match="expects exactly one"):
            evaluate_xview(manifest, relevance, ComposerConfig(method="image_only"), stores)

    def test_protocol_mismatch(self, archive):
        manifest, relevance, stores = scene_archive()
        with pytest.raises(errors.MixedProtocols):
            evaluate_xview(
                archive.manifest,
                build_relevance(archive.manifest, archive.stores.labels, archive.stores.images),
                ComposerConfig(method="image_only"),
                archive.stores,
            )


@pytest.fixture(scope="module")
def archive_relevance(request):
    archive = request.getfixturevalue("archive")
    return build_relevance(archive.manifest, archive.stores.labels, archive.stores.images)


class TestEvaluatePatterncom:
    def test_report_invariants(self, archive, archive_relevance):
        report = evaluate_patterncom(
            archive.manifest, archive_relevance, ComposerConfig(method="image_only"),
            archive.stores,
        )
        assert 0.0 < report.macro_map < 1.0
        group_mean = sum(report.per_group.values()) / len(report.per_group)
        assert abs(report.macro_map - group_mean) <= 1e-12
        per_query_mean = sum(r[3] for r in report.per_query) / len(report.per_query)
        assert abs(report.overall_map - per_query_mean) <= 1e-12
        assert all(0.0 <= r[3] <= 1.0 for r in report.per_query)
        assert report.config["store_checksums"]["image_store"]

    def test_threads_do_not_change_results(self, archive, archive_relevance):
        cfg = ComposerConfig(method="product")
        r1 = evaluate_patterncom(
            archive.manifest, archive_relevance, cfg, archive.stores, threads=1
        )
        r8 = evaluate_patterncom(
            archive.manifest, archive_relevance, cfg, archive.stores, threads=8
        )
        assert r1.per_query == r8.per_query
        assert r1.macro_map == r8.macro_map

    def test_dispatch_by_protocol(self, archive, archive_relevance):
        report = evaluate(
            archive.manifest, archive_relevance, ComposerConfig(method="image_only"),
            archive.stores,
        )
        assert report.protocol == "class_attribute"

    def test_skipped_enumerated_and_excluded(self, archive):
        extra = QueryRecord(
            query_id="q_nohit",
            image_id=archive.manifest.records[0].image_id,
            modifier="alpha",
            group="shade",
            target_value="missing-value",
            protocol="class_attribute",
            pool="all_except_query",
        )
        manifest = QueryManifest(records=archive.manifest.records[:5] + (extra,))
        with pytest.warns(UserWarning):
            relevance = build_relevance(manifest, archive.stores.labels, archive.stores.images)
        report = evaluate_patterncom(
            manifest, relevance, ComposerConfig(method="image_only"), archive.stores
        )
        assert ("q_nohit", "empty positive set") in report.skipped
        assert all(row[0] != "q_nohit" for row in report.per_query)
        assert len(report.per_query) == 5


class TestSweep:
    def test_lambda_endpoints_match_unimodal(self, archive, archive_relevance):
        def eval_fn(cfg, memory=None):
            return evaluate_patterncom(
                archive.manifest, archive_relevance, cfg, archive.stores, memory=memory
            )

        results = sweep(ComposerConfig(method="weicom"), "lambda", [0.0, 0.5, 1.0], eval_fn)
        assert [v for v, _ in results] == [0.0, 0.5, 1.0]
        image = eval_fn(ComposerConfig(method="image_only"))
        text = eval_fn(ComposerConfig(method="text_only"))
        assert results[0][1].macro_map == image.macro_map
        assert results[2][1].macro_map == text.macro_map

    def test_mn_joint_setting_recorded(self, archive, archive_relevance):
        captured = []

        def eval_fn(cfg, memory=None):
            captured.append(cfg)
            return evaluate_patterncom(
                archive.manifest, archive_relevance, cfg, archive.stores,
                memory=archive.memory,
            )

        base = ComposerConfig(method="freedom", k=1)
        results = sweep(base, "mn", [1, 3], eval_fn)
        assert [c.m for c in captured] == [1, 3]
        assert [c.n for c in captured] == [1, 3]
        assert all(c.k == 1 for c in captured)
        assert [r.config["m"] for _, r in results] == [1, 3]

    def test_unknown_param(self):
        with pytest.raises(errors.UnknownParam):
            sweep(ComposerConfig(), "zeta", [1], lambda cfg, memory=None: None)

    def test_vocabulary_values_passed_through(self, archive, archive_relevance):
        seen = []

        def eval_fn(cfg, memory=None):
            seen.append(memory)
            return evaluate_patterncom(
                archive.manifest, archive_relevance, cfg, archive.stores, memory=memory
            )

        base = ComposerConfig(method="freedom", k=2, m=2, n=2)
        sweep(base, "vocabulary", [archive.memory], eval_fn)
        assert seen == [archive.memory]
