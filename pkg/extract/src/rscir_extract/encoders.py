"""Embedding backbones: pretrained checkpoints plus a deterministic toy pair.

The six evaluated vision-language checkpoints (all ViT-L/14 vision
towers) are registered with their embedding widths and load lazily
through open_clip / transformers; remote-sensing variants additionally
need a local checkpoint file.  The "toy-256" backbone computes cheap,
fully deterministic features from pixel statistics and character
n-grams; it exists so pipelines and tests can run without checkpoint
downloads and is clearly labeled as such in provenance.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .emb1 import ExtractError, l2_normalize

CONTEXT_TEMPLATE = "a satellite image of {text}"
COMPOSED_TEMPLATE = "{modifier} {word}"


class ToyImageEncoder:
    """Pixel-statistics features: 16x16 RGB thumbnail through a fixed
    random projection with tanh squashing.  Deterministic per backbone name."""

    def __init__(self, name: str, dim: int):
        self.name = name
        self.dim = dim
        seed = int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((16 * 16 * 3, dim)) / np.sqrt(dim)

    def encode_images(self, paths: Sequence[str | Path]) -> np.ndarray:
        from PIL import Image

        rows = []
        for path in paths:
            with Image.open(path) as img:
                thumb = img.convert("RGB").resize((16, 16), Image.BILINEAR)
            raw = np.asarray(thumb, dtype=np.float64).reshape(-1) / 255.0
            rows.append(np.tanh((raw - raw.mean()) @ self._projection))
        return l2_normalize(np.asarray(rows))


class ToyTextEncoder:
    """Hashed character n-gram (1..4) bag, signed, L2-normalized.

    Hashes use keyed blake2b so embeddings are stable across runs,
    platforms, and interpreter sessions.
    """

    def __init__(self, name: str, dim: int):
        self.name = name
        self.dim = dim
        self._key = hashlib.blake2b(name.encode(), digest_size=16).digest()

    def _accumulate(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        padded = f"\x02{text}\x03"
        for n in range(1, 5):
            for i in range(len(padded) - n + 1):
                gram = padded[i : i + n].encode("utf-8")
                h = int.from_bytes(
                    hashlib.blake2b(gram, digest_size=8, key=self._key).digest(), "little"
                )
                sign = 1.0 if h & 1 else -1.0
                vec[(h >> 1) % self.dim] += sign
        return vec

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        rows = []
        for text in texts:
            if not text:
                raise ExtractError("cannot embed an empty string")
            rows.append(self._accumulate(text))
        return l2_normalize(np.asarray(rows))


class ClipEncoder:
    """Wrapper over an open_clip checkpoint (image and text towers)."""

    def __init__(self, model_name: str, pretrained: str, dim: int, device: str = "cpu"):
        try:
            import open_clip
            import torch
        except ImportError as exc:
            raise ExtractError(
                "this backbone needs the 'open_clip_torch' and 'torch' packages"
            ) from exc
        self.dim = dim
        self._torch = torch
        self._tokenizer = open_clip.get_tokenizer(model_name)
        try:
            model, _, preprocess = open_clip.create_model_and_transforms(
                model_name, pretrained=pretrained
            )
        except Exception as exc:
            raise ExtractError(
                f"failed to load checkpoint {pretrained!r} for {model_name!r}: {exc}"
            ) from exc
        self._model = model.eval().to(device)
        self._preprocess = preprocess
        self._device = device

    def encode_images(self, paths: Sequence[str | Path]) -> np.ndarray:
        from PIL import Image

        torch = self._torch
        rows = []
        with torch.no_grad():
            for path in paths:
                with Image.open(path) as img:
                    tensor = self._preprocess(img.convert("RGB")).unsqueeze(0)
                feat = self._model.encode_image(tensor.to(self._device))
                rows.append(feat.squeeze(0).cpu().double().numpy())
        return l2_normalize(np.asarray(rows))

    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        torch = self._torch
        for text in texts:
            if not text:
                raise ExtractError("cannot embed an empty string")
        with torch.no_grad():
            tokens = self._tokenizer(list(texts))
            feats = self._model.encode_text(tokens.to(self._device))
        return l2_normalize(feats.cpu().double().numpy())


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    embed_dim: int
    description: str
    factory: Callable[[str | None], object]


def _clip_factory(model_name: str, default_pretrained: str, dim: int):
    def make(checkpoint: str | None):
        return ClipEncoder(model_name, checkpoint or default_pretrained, dim)

    return make


def _toy_factory(name: str, dim: int):
    def make(checkpoint: str | None):
        class _Pair:
            encode_images = ToyImageEncoder(name, dim).encode_images
            encode_texts = ToyTextEncoder(name, dim).encode_texts

        return _Pair()

    return make


BACKBONES: dict[str, BackboneSpec] = {
    "toy-256": BackboneSpec(
        "toy-256", 256,
        "deterministic pixel-statistic / char-n-gram features (no checkpoint)",
        _toy_factory("toy-256", 256),
    ),
    "clip-laion2b": BackboneSpec(
        "clip-laion2b", 768,
        "OpenCLIP ViT-L-14 trained on LAION-2B",
        _clip_factory("ViT-L-14", "laion2b_s32b_b82k", 768),
    ),
    "openai-clip": BackboneSpec(
        "openai-clip", 768,
        "original OpenAI CLIP ViT-L/14",
        _clip_factory("ViT-L-14", "openai", 768),
    ),
    "remoteclip": BackboneSpec(
        "remoteclip", 768,
        "RemoteCLIP ViT-L-14; pass --checkpoint with the released weights file",
        _clip_factory("ViT-L-14", "remoteclip (local checkpoint required)", 768),
    ),
    "siglip": BackboneSpec(
        "siglip", 1152,
        "SigLIP large (WebLI); loaded through open_clip hf-hub",
        _clip_factory("hf-hub:timm/ViT-SO400M-14-SigLIP", "webli", 1152),
    ),
    "clip-laion-rs": BackboneSpec(
        "clip-laion-rs", 768,
        "CLIP fine-tuned on the LAION-RS subset; pass --checkpoint",
        _clip_factory("ViT-L-14", "laion-rs (local checkpoint required)", 768),
    ),
    "skyclip-50": BackboneSpec(
        "skyclip-50", 768,
        "SkyCLIP-50; pass --checkpoint with the released weights file",
        _clip_factory("ViT-L-14", "skyclip-50 (local checkpoint required)", 768),
    ),
}


def make_backbone(name: str, checkpoint: str | None = None):
    if name not in BACKBONES:
        raise ExtractError(f"unknown backbone {name!r}; known: {sorted(BACKBONES)}")
    return BACKBONES[name].factory(checkpoint)
