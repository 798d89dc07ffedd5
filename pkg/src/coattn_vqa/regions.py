"""Per-region image features: the grid file format and the learned embedding."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParseError
from .tensor import Tensor


@dataclass
class RegionGrid:
    height: int
    width: int
    raw: np.ndarray  # (H*W, d_in), row-major over the grid

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        if self.height < 1 or self.width < 1:
            raise DimensionError("grid needs at least one region")
        if self.raw.ndim != 2 or self.raw.shape[0] != self.height * self.width:
            raise DimensionError(f"raw features {self.raw.shape} do not fit a {self.height}x{self.width} grid")

    @property
    def n_regions(self):
        return self.height * self.width

    @property
    def d_in(self):
        return self.raw.shape[1]


def embed_regions(raw, W_emb: Tensor) -> Tensor:
    """V = tanh(raw @ W_emb.T); ``raw`` is ``(N, d_in)`` or batched ``(B, N, d_in)``."""
    if isinstance(raw, RegionGrid):
        raw = raw.raw
    if not isinstance(raw, Tensor):
        raw = Tensor(raw)
    if raw.shape[-1] != W_emb.shape[1]:
        raise DimensionError(f"region features have width {raw.shape[-1]}, embedding expects {W_emb.shape[1]}")
    return T.tanh(T.linear(raw, W_emb))


def load_region_grid(path) -> RegionGrid:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise ParseError("missing header 'H W d_in'", 1, path)
    header = lines[0].split()
    try:
        h, w, d_in = (int(x) for x in header)
    except ValueError:
        raise ParseError(f"malformed header {lines[0]!r}, expected 'H W d_in'", 1, path) from None
    if h < 1 or w < 1 or d_in < 1:
        raise ParseError("header extents must be positive", 1, path)
    values = []
    for lineno, line in enumerate(lines[1:], 2):
        for tok in line.split():
            try:
                values.append(float(tok))
            except ValueError:
                raise ParseError(f"bad number {tok!r}", lineno, path) from None
    expected = h * w * d_in
    if len(values) != expected:
        raise ParseError(f"expected {expected} values for header {h} {w} {d_in}, found {len(values)}", None, path)
    arr = np.array(values).reshape(h * w, d_in)
    if not np.isfinite(arr).all():
        raise ParseError("non-finite region feature", None, path)
    return RegionGrid(h, w, arr)


def save_region_grid(grid: RegionGrid, path):
    rows = [" ".join(repr(float(v)) for v in row) for row in grid.raw]
    Path(path).write_text(f"{grid.height} {grid.width} {grid.d_in}\n" + "\n".join(rows) + "\n", encoding="utf-8")
