"""Command-line entry point: validate, retrieve, evaluate, sweep.

Exit codes: 0 success, 1 data or validation error, 2 usage error.
All outputs are reproducible byte-for-byte given identical inputs and
flags; the only run-dependent field is the report timestamp, which is
excluded from the report's content checksum.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import errors
from .composers import (
    METHODS,
    METHOD_BASIC,
    METHOD_FREEDOM,
    BasicToggles,
    ComposerConfig,
    StoreBundle,
    run_query,
)
from .embedstore import (
    PROTOCOL_CLASS_ATTRIBUTE,
    EmbeddingStore,
    LabelTable,
    QueryManifest,
    QueryRecord,
    VocabularyMemory,
    build_relevance,
    load_embeddings,
    load_labels,
    load_manifest,
)
from .evalkit import EvalReport, evaluate, sweep

EXIT_OK = 0
EXIT_DATA_ERROR = 1
EXIT_USAGE = 2


def _default_threads() -> int:
    raw = os.environ.get("RSCIR_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _add_store_args(p: argparse.ArgumentParser, require_store: bool = True) -> None:
    p.add_argument("--store", required=require_store, help="image embedding store (EMB1)")
    p.add_argument("--text-store", help="modifier text embedding store (EMB1)")
    p.add_argument("--text-store-ctx", help="contextualized text embedding store (EMB1)")
    p.add_argument("--labels", help="label table (JSONL)")
    p.add_argument("--manifest", help="query manifest (JSONL)")
    p.add_argument("--vocab", help="vocabulary word store (EMB1)")
    p.add_argument("--composed", help="composed-text table store (EMB1)")
    p.add_argument("--corpus-pos", help="positive corpus store (EMB1)")
    p.add_argument("--corpus-neg", help="negative corpus store (EMB1)")


def _add_method_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=METHODS, default="product")
    p.add_argument("--lambda", dest="lambda_weight", type=float, default=0.5)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--m", type=int, default=7)
    p.add_argument("--n", type=int, default=7)
    p.add_argument("--p", type=int, default=250)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--qe-k", type=int, default=25)
    p.add_argument("--lambda-harris", type=float, default=0.1)
    p.add_argument(
        "--toggle",
        action="append",
        default=[],
        metavar="NAME=on|off",
        help="basic pipeline toggle, repeatable",
    )


def _parse_toggles(pairs: list[str]) -> BasicToggles:
    valid = set(BasicToggles().as_dict())
    overrides: dict[str, bool] = {}
    for pair in pairs:
        name, _, state = pair.partition("=")
        if name not in valid or state not in ("on", "off"):
            raise errors.RscirError(
                f"bad --toggle {pair!r}; expected one of {sorted(valid)} = on|off"
            )
        overrides[name] = state == "on"
    return BasicToggles(**{**BasicToggles().as_dict(), **overrides})


def _config_from_args(args: argparse.Namespace) -> ComposerConfig:
    return ComposerConfig(
        method=args.method,
        lambda_weight=args.lambda_weight,
        k=args.k,
        m=args.m,
        n=args.n,
        p=args.p,
        alpha=args.alpha,
        qe_k=args.qe_k,
        lambda_harris=args.lambda_harris,
        toggles=_parse_toggles(args.toggle),
    )


def _load_bundle(args: argparse.Namespace) -> StoreBundle:
    images = load_embeddings(args.store)
    if not args.text_store:
        raise errors.RscirError("--text-store is required for this command")
    texts = load_embeddings(args.text_store)
    texts_ctx = load_embeddings(args.text_store_ctx) if args.text_store_ctx else None
    labels = load_labels(args.labels) if args.labels else None
    return StoreBundle(
        images=images, texts=texts, texts_contextualized=texts_ctx, labels=labels
    )


def _load_memory(args: argparse.Namespace) -> VocabularyMemory | None:
    if not args.vocab:
        return None
    if not args.composed:
        raise errors.RscirError("--vocab requires --composed")
    return VocabularyMemory.from_stores(
        load_embeddings(args.vocab), load_embeddings(args.composed)
    )


def _load_corpora(args: argparse.Namespace):
    if not args.corpus_pos and not args.corpus_neg:
        return None
    if not (args.corpus_pos and args.corpus_neg):
        raise errors.RscirError("--corpus-pos and --corpus-neg must be given together")
    return (load_embeddings(args.corpus_pos), load_embeddings(args.corpus_neg))


def _require_method_inputs(cfg: ComposerConfig, memory, corpora) -> None:
    if cfg.method == METHOD_FREEDOM and memory is None:
        raise errors.RscirError("method freedom requires --vocab and --composed")
    if cfg.method == METHOD_BASIC and corpora is None:
        raise errors.RscirError("method basic requires --corpus-pos and --corpus-neg")


# --- validate ---


class _Findings:
    def __init__(self) -> None:
        self.errors: list[str] = []
        self.warnings: list[str] = []

    def error(self, category: str, location: str, message: str) -> None:
        self.errors.append(f"ERROR {category} {location}: {message}")

    def warning(self, category: str, location: str, message: str) -> None:
        self.warnings.append(f"WARNING {category} {location}: {message}")


def cmd_validate(args: argparse.Namespace) -> int:
    findings = _Findings()
    stores: dict[str, EmbeddingStore] = {}
    for flag in ("store", "text_store", "text_store_ctx", "vocab", "composed", "corpus_pos", "corpus_neg"):
        path = getattr(args, flag, None)
        if not path:
            continue
        try:
            stores[flag] = load_embeddings(path)
        except errors.RscirError as exc:
            findings.error(type(exc).__name__, path, str(exc))

    labels: LabelTable | None = None
    if args.labels:
        try:
            labels = load_labels(args.labels)
        except errors.RscirError as exc:
            findings.error(type(exc).__name__, args.labels, str(exc))

    manifest: QueryManifest | None = None
    if args.manifest:
        try:
            manifest = load_manifest(args.manifest)
        except errors.RscirError as exc:
            findings.error(type(exc).__name__, args.manifest, str(exc))

    image_store = stores.get("store")
    text_store = stores.get("text_store")
    if manifest is not None:
        for rec in manifest:
            loc = f"{args.manifest}#{rec.query_id}"
            if image_store is not None and rec.image_id not in image_store:
                findings.error("UnresolvedImageId", loc, f"image {rec.image_id!r} not in store")
            if text_store is not None and rec.modifier not in text_store:
                findings.error(
                    "UnknownId", loc, f"modifier {rec.modifier!r} not in text store"
                )
            if rec.candidates:
                for c in rec.candidates:
                    if image_store is not None and c not in image_store:
                        findings.error(
                            "UnresolvedImageId", loc, f"explicit candidate {c!r} not in store"
                        )
            if labels is not None:
                if rec.image_id not in labels:
                    findings.error(
                        "UnresolvedImageId", loc, f"image {rec.image_id!r} has no label record"
                    )
                else:
                    lab = labels.get(rec.image_id)
                    if rec.protocol == PROTOCOL_CLASS_ATTRIBUTE:
                        if lab.class_label is None:
                            findings.error("MissingField", loc, "query image lacks class_label")
                    else:
                        if lab.scene_id is None or lab.state is None:
                            findings.error(
                                "MissingField", loc, "query image lacks scene_id or state"
                            )

    if "vocab" in stores and "composed" in stores:
        try:
            memory = VocabularyMemory.from_stores(stores["vocab"], stores["composed"])
            modifiers = manifest.modifiers if manifest is not None else ()
            for key in memory.missing_composed_keys(modifiers):
                findings.error("MissingComposedEntry", args.composed, f"missing key {key!r}")
        except errors.RscirError as exc:
            findings.error(type(exc).__name__, args.composed, str(exc))

    for line in findings.errors + findings.warnings:
        print(line)
    print(f"{len(findings.errors)} errors, {len(findings.warnings)} warnings")
    return EXIT_OK if not findings.errors else EXIT_DATA_ERROR


# --- retrieve ---


def cmd_retrieve(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    stores = _load_bundle(args)
    memory = _load_memory(args)
    corpora = _load_corpora(args)
    _require_method_inputs(cfg, memory, corpora)
    db = stores.images
    if args.query_image not in db:
        raise errors.UnknownId(f"query image {args.query_image!r} not in store")
    if args.exclude_query:
        pool = tuple(i for i in db.ids if i != args.query_image)
    else:
        pool = db.ids
    record = QueryRecord(
        query_id="adhoc",
        image_id=args.query_image,
        modifier=args.text,
        group="adhoc",
        target_value=args.text,
        protocol=PROTOCOL_CLASS_ATTRIBUTE,
        pool="explicit_list",
        candidates=pool,
    )
    ranked = run_query(record, cfg, stores, memory=memory, corpora=corpora, pool=pool)
    topk = min(args.topk, len(ranked))
    results = [
        {"rank": i + 1, "id": ranked.ids[i], "score": float(ranked.scores[i])}
        for i in range(topk)
    ]
    text = json.dumps(results, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- evaluate / sweep ---


def _report_payload(report: EvalReport) -> dict:
    payload = report.to_json_dict()
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    payload["content_checksum"] = hashlib.sha256(canonical.encode("utf-8")).hexdigest()
    payload["timestamp"] = datetime.now(timezone.utc).isoformat()
    return payload


def _write_json(path: str, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _csv_line(cells) -> str:
    out = []
    for c in cells:
        s = str(c)
        if "," in s or '"' in s or "\n" in s:
            s = '"' + s.replace('"', '""') + '"'
        out.append(s)
    return ",".join(out)


def _report_csv(reports: list[tuple[object, EvalReport]], with_param: bool) -> str:
    groups = sorted({g for _, r in reports for g in r.per_group})
    header = (["param_value"] if with_param else []) + groups + ["macro_map", "overall_map"]
    lines = [_csv_line(header)]
    for value, report in reports:
        row = [value] if with_param else []
        row += [repr(report.per_group.get(g, "")) if g in report.per_group else "" for g in groups]
        row += [repr(report.macro_map), repr(report.overall_map)]
        lines.append(_csv_line(row))
    return "\n".join(lines) + "\n"


def _report_markdown(reports: list[tuple[object, EvalReport]], label: str) -> str:
    groups = sorted({g for _, r in reports for g in r.per_group})
    header = [label] + [g.title() for g in groups] + ["Avg.", "Total"]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "---|" * len(header),
    ]
    for value, report in reports:
        cells = [str(value)]
        cells += [
            f"{100.0 * report.per_group[g]:.2f}" if g in report.per_group else "-"
            for g in groups
        ]
        cells += [f"{100.0 * report.macro_map:.2f}", f"{100.0 * report.overall_map:.2f}"]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _load_manifest_and_relevance(args, stores: StoreBundle):
    if not args.manifest or not args.labels:
        raise errors.RscirError("this command requires --manifest and --labels")
    manifest = load_manifest(args.manifest)
    relevance = build_relevance(manifest, stores.labels, stores.images, on_empty=args.on_empty)
    return manifest, relevance


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    stores = _load_bundle(args)
    memory = _load_memory(args)
    corpora = _load_corpora(args)
    _require_method_inputs(cfg, memory, corpora)
    manifest, relevance = _load_manifest_and_relevance(args, stores)
    report = evaluate(
        manifest, relevance, cfg, stores,
        memory=memory, corpora=corpora, threads=args.threads,
    )
    print(f"macro_map={report.macro_map:.4f} overall_map={report.overall_map:.4f}")
    if args.out:
        _write_json(args.out, _report_payload(report))
        if args.format == "csv":
            Path(args.out + ".csv").write_text(
                _report_csv([(cfg.method, report)], with_param=False),
                encoding="utf-8", newline="\n",
            )
        elif args.format == "md":
            Path(args.out + ".md").write_text(
                _report_markdown([(cfg.method, report)], label="Method"),
                encoding="utf-8", newline="\n",
            )
    return EXIT_OK


def _parse_sweep_values(param: str, raw: str) -> list:
    if param == "vocabulary":
        values = []
        for entry in raw.split(","):
            words_path, _, composed_path = entry.partition(":")
            if not composed_path:
                raise errors.RscirError(
                    "vocabulary sweep values must be 'words.emb1:composed.emb1' pairs"
                )
            values.append(
                VocabularyMemory.from_stores(
                    load_embeddings(words_path), load_embeddings(composed_path)
                )
            )
        return values
    int_param = param in ("k", "mn", "qe_k", "p")
    if ":" in raw and "," not in raw:
        parts = raw.split(":")
        if len(parts) != 3:
            raise errors.RscirError("range sweep values must be start:step:stop")
        start, step, stop = (float(p) for p in parts)
        if step <= 0:
            raise errors.RscirError("sweep step must be positive")
        values = []
        v = start
        while v <= stop + 1e-9:
            values.append(round(v, 10))
            v += step
        return [int(v) for v in values] if int_param else values
    items = [s.strip() for s in raw.split(",") if s.strip()]
    return [int(s) if int_param else float(s) for s in items]


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    stores = _load_bundle(args)
    memory = _load_memory(args)
    corpora = _load_corpora(args)
    values = _parse_sweep_values(args.param, args.values)
    if args.param != "vocabulary":
        _require_method_inputs(cfg, memory, corpora)
    manifest, relevance = _load_manifest_and_relevance(args, stores)

    def eval_fn(run_cfg, memory=None):
        return evaluate(
            manifest, relevance, run_cfg, stores,
            memory=memory if memory is not None else loaded_memory,
            corpora=corpora, threads=args.threads,
        )

    loaded_memory = memory
    results = sweep(cfg, args.param, values, eval_fn)
    for value, report in results:
        label = value if args.param != "vocabulary" else "vocabulary"
        print(
            f"param={args.param} value={label} "
            f"macro_map={report.macro_map:.4f} overall_map={report.overall_map:.4f}"
        )
    if args.out:
        payload = [
            {
                "param": args.param,
                "param_value": (
                    value if args.param != "vocabulary" else f"vocabulary[{i}]"
                ),
                "report": _report_payload(report),
            }
            for i, (value, report) in enumerate(results)
        ]
        _write_json(args.out, payload)
        csv_rows = [
            (v if args.param != "vocabulary" else f"vocabulary[{i}]", r)
            for i, (v, r) in enumerate(results)
        ]
        Path(args.out + ".csv").write_text(
            _report_csv(csv_rows, with_param=True), encoding="utf-8", newline="\n"
        )
        if args.format == "md":
            Path(args.out + ".md").write_text(
                _report_markdown(csv_rows, label=args.param),
                encoding="utf-8", newline="\n",
            )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rscir",
        description="Composed image retrieval engine and benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="cross-check a data bundle")
    _add_store_args(p_validate, require_store=False)
    p_validate.set_defaults(func=cmd_validate)

    p_retrieve = sub.add_parser("retrieve", help="rank one ad-hoc composed query")
    _add_store_args(p_retrieve)
    _add_method_args(p_retrieve)
    p_retrieve.add_argument("--query-image", required=True)
    p_retrieve.add_argument("--text", required=True)
    p_retrieve.add_argument("--topk", type=int, default=10)
    p_retrieve.add_argument("--exclude-query", action="store_true")
    p_retrieve.add_argument("--out")
    p_retrieve.add_argument("--format", choices=("json",), default="json")
    p_retrieve.add_argument("--threads", type=int, default=_default_threads())
    p_retrieve.set_defaults(func=cmd_retrieve)

    p_evaluate = sub.add_parser("evaluate", help="run a manifest and report mAP")
    _add_store_args(p_evaluate)
    _add_method_args(p_evaluate)
    p_evaluate.add_argument("--out")
    p_evaluate.add_argument("--format", choices=("json", "csv", "md"), default="json")
    p_evaluate.add_argument("--threads", type=int, default=_default_threads())
    p_evaluate.add_argument("--on-empty", choices=("skip", "abort"), default="skip")
    p_evaluate.set_defaults(func=cmd_evaluate)

    p_sweep = sub.add_parser("sweep", help="evaluate across a parameter grid")
    _add_store_args(p_sweep)
    _add_method_args(p_sweep)
    p_sweep.add_argument("--param", required=True)
    p_sweep.add_argument("--values", required=True)
    p_sweep.add_argument("--out")
    p_sweep.add_argument("--format", choices=("json", "csv", "md"), default="json")
    p_sweep.add_argument("--threads", type=int, default=_default_threads())
    p_sweep.add_argument("--on-empty", choices=("skip", "abort"), default="skip")
    p_sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (errors.RscirError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
