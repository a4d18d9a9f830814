"""Embedding-space scoring: did the edit do what was asked, and only that.

Modification is measured as cosine similarity between the image-embedding
difference (edit crop minus origin crop) and the text-embedding difference
(target phrase minus source phrase). Preservation is 1 minus the RMS pixel
difference outside every region touched by the edit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyBatch
from .geometry import BinaryMask, RasterImage

# Flag name for a preservation call where the exclusion mask covered the
# whole image, leaving nothing to compare.
ALL_EXCLUDED = "all_excluded"

MODIFY_FIXED_RANGE = (-1.0, 1.0)
PRESERVE_FIXED_RANGE = (0.0, 1.0)

_DEGENERATE_NORM = 1e-9


@dataclass(frozen=True)
class SemanticRaw:
    """Un-normalized per-sample semantic scores."""

    s_modify_raw: float   # cosine, [-1, 1]
    s_preserve_raw: float  # 1 - RMS, [0, 1]

    def __post_init__(self):
        if not np.isfinite(self.s_modify_raw) or not -1.0 <= self.s_modify_raw <= 1.0:
            raise ValueError(f"s_modify_raw out of [-1, 1]: {self.s_modify_raw}")
        if not np.isfinite(self.s_preserve_raw) or not 0.0 <= self.s_preserve_raw <= 1.0:
            raise ValueError(f"s_preserve_raw out of [0, 1]: {self.s_preserve_raw}")


def directional_similarity(
    e_img_origin: np.ndarray,
    e_img_edit: np.ndarray,
    e_txt_source: np.ndarray,
    e_txt_target: np.ndarray,
) -> float:
    """Cosine between (edit - origin) and (target - source) difference vectors.

    Returns 0.0 when either difference is numerically zero; there is no
    direction to compare in that case.
    """
    vecs = (e_img_origin, e_img_edit, e_txt_source, e_txt_target)
    dims = {v.shape for v in vecs}
    if len(dims) != 1 or any(v.ndim != 1 for v in vecs):
        raise DimensionMismatch(f"embedding shapes differ: {sorted(str(s) for s in dims)}")

    d_img = e_img_edit.astype(np.float64) - e_img_origin.astype(np.float64)
    d_txt = e_txt_target.astype(np.float64) - e_txt_source.astype(np.float64)
    n_img = float(np.linalg.norm(d_img))
    n_txt = float(np.linalg.norm(d_txt))
    if n_img < _DEGENERATE_NORM or n_txt < _DEGENERATE_NORM:
        return 0.0
    cos = float(np.dot(d_img, d_txt) / (n_img * n_txt))
    # guard fp overshoot
    return min(1.0, max(-1.0, cos))


def preservation_score(a: RasterImage, b: RasterImage, excluded: BinaryMask) -> float:
    """1 minus the RMS difference over pixels the edit was not allowed to touch.

    RMS runs over all channel values of retained pixels; with pixels in
    [0, 1] the result stays in [0, 1]. A mask that excludes everything
    yields 1.0 (callers flag that case via ALL_EXCLUDED).
    """
    if (a.height, a.width) != (b.height, b.width):
        raise DimensionMismatch(
            f"image dims differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    if (excluded.height, excluded.width) != (a.height, a.width):
        raise DimensionMismatch(
            f"mask dims {excluded.width}x{excluded.height} do not match image {a.width}x{a.height}"
        )

    retained = ~excluded.bits
    if not retained.any():
        return 1.0
    diff = a.pixels[retained] - b.pixels[retained]
    rms = float(np.sqrt(np.mean(np.square(diff))))
    return 1.0 - min(1.0, rms)


def minmax_normalize(
    values: list[float],
    fixed_range: tuple[float, float] | None = None,
) -> list[float]:
    """Map values to [0, 1].

    Batch mode rescales by the observed min/max, collapsing a constant batch
    to 0.5. With fixed_range the map is the affine rescale from (lo, hi),
    clamped; this is the single-sample mode where no batch statistics exist.
    """
    if not values:
        raise EmptyBatch("no values to normalize")
    if fixed_range is not None:
        lo, hi = fixed_range
        if not hi > lo:
            raise ValueError(f"fixed_range must satisfy lo < hi, got {fixed_range}")
        span = hi - lo
        return [min(1.0, max(0.0, (v - lo) / span)) for v in values]
    vmin, vmax = min(values), max(values)
    if vmax == vmin:
        return [0.5] * len(values)
    span = vmax - vmin
    return [(v - vmin) / span for v in values]


def semantic_score(batch: list[SemanticRaw], mode: str = "batch") -> list[float]:
    """Per-sample Norm(preserve) + Norm(modify), each in [0, 1], sum in [0, 2]."""
    preserve_norm, modify_norm = normalized_components(batch, mode)
    return [p + m for p, m in zip(preserve_norm, modify_norm)]


def normalized_components(
    batch: list[SemanticRaw], mode: str = "batch"
) -> tuple[list[float], list[float]]:
    """(preserve_norm, modify_norm) lists, same normalization as semantic_score."""
    if not batch:
        raise EmptyBatch("no samples to score")
    if mode == "fixed":
        return (
            minmax_normalize([s.s_preserve_raw for s in batch], PRESERVE_FIXED_RANGE),
            minmax_normalize([s.s_modify_raw for s in batch], MODIFY_FIXED_RANGE),
        )
    if mode == "batch":
        return (
            minmax_normalize([s.s_preserve_raw for s in batch]),
            minmax_normalize([s.s_modify_raw for s in batch]),
        )
    raise ValueError(f"unknown normalization mode: {mode!r}")
