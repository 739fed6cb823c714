"""Command-line entry point for the extraction toolkit."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .emb1 import ExtractError, write_jsonl
from .encoders import BACKBONES
from .jobs import (
    ExtractionJob,
    build_composed_table,
    extract_image_embeddings,
    extract_text_embeddings,
    read_vocabulary,
)
from .manifests import (
    PATTERNCOM_PHRASINGS,
    XVIEW_PHRASINGS,
    build_patterncom_manifest,
    build_xview2cir_manifest,
)


def _read_jsonl(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ExtractError(f"{path}:{lineno}: {exc}") from exc
    return records


def cmd_embed_images(args) -> int:
    listing = _read_jsonl(args.listing)
    inputs = tuple((rec["id"], rec["path"]) for rec in listing)
    result = extract_image_embeddings(
        ExtractionJob(
            backbone=args.backbone,
            inputs=inputs,
            output=Path(args.out),
            checkpoint=args.checkpoint,
        )
    )
    print(f"wrote {result.count} rows to {result.output} ({len(result.skipped)} skipped)")
    return 0


def _read_text_items(path: str) -> list[tuple[str, str]]:
    if path.endswith(".jsonl"):
        return [(rec["id"], rec["text"]) for rec in _read_jsonl(path)]
    return [(word, word) for word in read_vocabulary(path)]


def cmd_embed_texts(args) -> int:
    items = _read_text_items(args.input)
    result = extract_text_embeddings(
        items, args.backbone, args.out, variant=args.variant, checkpoint=args.checkpoint
    )
    print(f"wrote {result.count} rows to {result.output}")
    return 0


def cmd_composed_table(args) -> int:
    modifiers = read_vocabulary(args.modifiers)
    vocabulary = read_vocabulary(args.vocabulary)
    result = build_composed_table(
        modifiers, vocabulary, args.backbone, args.out, checkpoint=args.checkpoint
    )
    print(f"wrote {result.count} rows to {result.output}")
    return 0


def cmd_patterncom_manifest(args) -> int:
    annotations = _read_jsonl(args.annotations)
    manifest, labels = build_patterncom_manifest(annotations, phrasing=args.phrasing)
    write_jsonl(args.out_manifest, manifest)
    write_jsonl(args.out_labels, labels)
    print(f"wrote {len(manifest)} queries and {len(labels)} labels")
    return 0


def cmd_xview_manifest(args) -> int:
    events = _read_jsonl(args.events)
    manifest, labels, skipped = build_xview2cir_manifest(events, phrasing=args.phrasing)
    write_jsonl(args.out_manifest, manifest)
    write_jsonl(args.out_labels, labels)
    print(f"wrote {len(manifest)} queries and {len(labels)} labels ({len(skipped)} skipped)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rscir-extract",
        description="Produce embedding stores, manifests, and label tables",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed-images", help="embed an image listing into a store")
    p.add_argument("--backbone", required=True, choices=sorted(BACKBONES))
    p.add_argument("--listing", required=True, help="JSONL with {id, path}")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="local checkpoint file for RS-adapted backbones")
    p.set_defaults(func=cmd_embed_images)

    p = sub.add_parser("embed-texts", help="embed strings into a store")
    p.add_argument("--backbone", required=True, choices=sorted(BACKBONES))
    p.add_argument("--input", required=True, help="JSONL with {id, text} or one string per line")
    p.add_argument("--variant", choices=("plain", "contextualized"), default="plain")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_embed_texts)

    p = sub.add_parser("composed-table", help="embed every modifier x word pair")
    p.add_argument("--backbone", required=True, choices=sorted(BACKBONES))
    p.add_argument("--modifiers", required=True, help="one modifier per line")
    p.add_argument("--vocabulary", required=True, help="one word/phrase per line")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_composed_table)

    p = sub.add_parser("patterncom-manifest", help="build attribute queries from annotations")
    p.add_argument("--annotations", required=True, help="JSONL with {image_id, class, attributes}")
    p.add_argument("--phrasing", choices=PATTERNCOM_PHRASINGS, default="plain")
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--out-labels", required=True)
    p.set_defaults(func=cmd_patterncom_manifest)

    p = sub.add_parser("xview2cir-manifest", help="build change queries from event pairs")
    p.add_argument("--events", required=True, help="JSONL with {scene_id, disaster, pre_image_id, post_image_id}")
    p.add_argument("--phrasing", choices=XVIEW_PHRASINGS, default="plain")
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--out-labels", required=True)
    p.set_defaults(func=cmd_xview_manifest)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ExtractError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
