"""Offline extraction toolkit feeding the composed-retrieval engine."""

from .emb1 import ExtractError, write_emb1, write_jsonl, write_provenance
from .encoders import BACKBONES, make_backbone
from .jobs import (
    ExtractionJob,
    ExtractionResult,
    build_composed_table,
    extract_image_embeddings,
    extract_text_embeddings,
    read_vocabulary,
)
from .manifests import (
    DISASTER_MODIFIERS,
    build_patterncom_manifest,
    build_xview2cir_manifest,
)

__version__ = "0.1.0"
