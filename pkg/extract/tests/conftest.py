from pathlib import Path

import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def image_dir(tmp_path) -> Path:
    """A handful of deterministic small PNGs, plus an inverted copy of one."""
    rng = np.random.default_rng(123)
    out = tmp_path / "imgs"
    out.mkdir()
    for i in range(4):
        pixels = rng.integers(0, 256, size=(24, 24, 3), dtype=np.uint8)
        Image.fromarray(pixels).save(out / f"scene{i}.png")
        if i == 0:
            Image.fromarray(255 - pixels).save(out / "scene0_inverted.png")
    return out
