"""Embedding extraction jobs: images, texts, and composed-text tables."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .emb1 import ExtractError, write_emb1, write_provenance
from .encoders import BACKBONES, COMPOSED_TEMPLATE, CONTEXT_TEMPLATE, make_backbone

log = logging.getLogger("rscir_extract")

COMPOSED_KEY_SEPARATOR = "||"


@dataclass(frozen=True)
class ExtractionJob:
    """One batch extraction: input listing, backbone, output store path."""

    backbone: str
    inputs: tuple[tuple[str, str], ...]  # (id, image path) or (id, text)
    output: Path
    checkpoint: str | None = None
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExtractionResult:
    output: Path
    count: int
    skipped: tuple[tuple[str, str], ...] = ()


def _check_ids_unique(ids: Sequence[str]) -> None:
    if len(set(ids)) != len(ids):
        raise ExtractError("duplicate ids in input listing")


def extract_image_embeddings(job: ExtractionJob) -> ExtractionResult:
    """Embed images row by row; unreadable files are skipped and logged."""
    _check_ids_unique([i for i, _ in job.inputs])
    encoder = make_backbone(job.backbone, job.checkpoint)
    ids: list[str] = []
    rows: list[np.ndarray] = []
    skipped: list[tuple[str, str]] = []
    for image_id, path in job.inputs:
        try:
            rows.append(encoder.encode_images([path])[0])
            ids.append(image_id)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s (%s): %s", image_id, path, exc)
            skipped.append((image_id, str(exc)))
    if not rows:
        raise ExtractError("no readable images in the listing")
    write_emb1(job.output, ids, np.asarray(rows))
    write_provenance(
        job.output,
        {
            "kind": "image_embeddings",
            "backbone": job.backbone,
            "dim": BACKBONES[job.backbone].embed_dim,
            "preprocessing": BACKBONES[job.backbone].description,
            "count": len(ids),
            "skipped": [list(s) for s in skipped],
            **job.metadata,
        },
    )
    return ExtractionResult(output=job.output, count=len(ids), skipped=tuple(skipped))


def extract_text_embeddings(
    items: Sequence[tuple[str, str]],
    backbone: str,
    output: str | Path,
    variant: str = "plain",
    checkpoint: str | None = None,
    template: str = CONTEXT_TEMPLATE,
) -> ExtractionResult:
    """Embed strings, optionally wrapped in the domain template.

    ``items`` are (id, text) pairs; with variant="contextualized" each
    text is embedded as ``template.format(text=...)`` and the template is
    recorded in provenance.
    """
    if variant not in ("plain", "contextualized"):
        raise ExtractError(f"unknown text variant {variant!r}")
    ids = [i for i, _ in items]
    _check_ids_unique(ids)
    texts = []
    for _, text in items:
        if not text:
            raise ExtractError("cannot embed an empty string")
        texts.append(template.format(text=text) if variant == "contextualized" else text)
    encoder = make_backbone(backbone, checkpoint)
    rows = encoder.encode_texts(texts)
    output = Path(output)
    write_emb1(output, ids, rows)
    write_provenance(
        output,
        {
            "kind": "text_embeddings",
            "backbone": backbone,
            "dim": BACKBONES[backbone].embed_dim,
            "variant": variant,
            "template": template if variant == "contextualized" else None,
            "count": len(ids),
        },
    )
    return ExtractionResult(output=output, count=len(ids))


def build_composed_table(
    modifiers: Sequence[str],
    vocabulary: Sequence[str],
    backbone: str,
    output: str | Path,
    checkpoint: str | None = None,
) -> ExtractionResult:
    """Embed every "{modifier} {word}" pair, keyed "modifier||word"."""
    for value in list(modifiers) + list(vocabulary):
        if COMPOSED_KEY_SEPARATOR in value:
            raise ExtractError(
                f"{value!r} contains the reserved separator {COMPOSED_KEY_SEPARATOR!r}"
            )
        if not value:
            raise ExtractError("empty modifier or vocabulary entry")
    _check_ids_unique(list(modifiers))
    _check_ids_unique(list(vocabulary))
    ids = []
    texts = []
    for modifier in modifiers:
        for word in vocabulary:
            ids.append(f"{modifier}{COMPOSED_KEY_SEPARATOR}{word}")
            texts.append(COMPOSED_TEMPLATE.format(modifier=modifier, word=word))
    encoder = make_backbone(backbone, checkpoint)
    rows = encoder.encode_texts(texts)
    output = Path(output)
    write_emb1(output, ids, rows)
    write_provenance(
        output,
        {
            "kind": "composed_table",
            "backbone": backbone,
            "dim": BACKBONES[backbone].embed_dim,
            "template": COMPOSED_TEMPLATE,
            "modifiers": len(modifiers),
            "vocabulary": len(vocabulary),
            "count": len(ids),
        },
    )
    return ExtractionResult(output=output, count=len(ids))


def read_vocabulary(path: str | Path) -> list[str]:
    """One word or phrase per line, UTF-8, blank lines ignored."""
    words = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            word = line.strip()
            if word:
                words.append(word)
    return words
