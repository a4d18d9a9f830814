"""Pixel-space primitives: axis-aligned boxes, binary masks, RGB rasters.

Coordinate convention: continuous pixel edges with the origin at the top-left,
so a box's area is (x1-x0)*(y1-y0) and no rasterization is involved in IoU.
Crops and fixture keys snap coordinates to integers with half-up rounding.
"""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass, field
from math import floor, isfinite

import numpy as np
from PIL import Image

from .errors import DimensionMismatch, EmptyCrop


def snap(v: float) -> int:
    """Round a coordinate half-up to an integer pixel edge."""
    return int(floor(float(v) + 0.5))


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with x0 < x1 and y0 < y1 in pixel coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        for v in (self.x0, self.y0, self.x1, self.y1):
            if not isfinite(v):
                raise ValueError(f"non-finite bbox coordinate: {v}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate bbox: {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def clamped(self, width: int, height: int) -> "BBox":
        """Clamp to image bounds; raises EmptyCrop if nothing remains."""
        x0 = min(max(self.x0, 0.0), float(width))
        y0 = min(max(self.y0, 0.0), float(height))
        x1 = min(max(self.x1, 0.0), float(width))
        y1 = min(max(self.y1, 0.0), float(height))
        if x1 - x0 <= 0 or y1 - y0 <= 0:
            raise EmptyCrop(f"box {self.as_tuple()} degenerates within {width}x{height}")
        return BBox(x0, y0, x1, y1)

    def snapped(self) -> tuple[int, int, int, int]:
        """Integer pixel bounds used for cropping and fixture keys."""
        return (snap(self.x0), snap(self.y0), snap(self.x1), snap(self.y1))


def full_image_bbox(width: int, height: int) -> BBox:
    return BBox(0.0, 0.0, float(width), float(height))


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Row-major boolean raster."""

    bits: np.ndarray  # (h, w) bool

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __post_init__(self):
        if self.bits.ndim != 2 or self.bits.dtype != np.bool_:
            raise ValueError("mask bits must be a 2-d bool array")

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])


def empty_mask(width: int, height: int) -> BinaryMask:
    return BinaryMask(np.zeros((height, width), dtype=bool))


def mask_from_bbox(b: BBox, width: int, height: int) -> BinaryMask:
    """Filled rectangle covering the snapped, clamped box."""
    x0, y0, x1, y1 = b.clamped(width, height).snapped()
    bits = np.zeros((height, width), dtype=bool)
    bits[y0:y1, x0:x1] = True
    return BinaryMask(bits)


@dataclass(frozen=True, eq=False)
class RasterImage:
    """RGB raster with float values in [0, 1].

    `key` identifies the image to keyed providers (e.g. "s1/origin" for a
    manifest image, "s1/origin@x0,y0,x1,y1" for a crop of it); it never takes
    part in equality and is None for images without provider context.
    """

    pixels: np.ndarray  # (h, w, 3) float64
    key: str | None = field(default=None, compare=False)

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixels, got {p.shape}")
        if p.shape[0] == 0 or p.shape[1] == 0:
            raise ValueError("image dimensions must be positive")
        if p.dtype != np.float64:
            raise ValueError("pixels must be float64")
        if float(p.min(initial=0.0)) < 0.0 or float(p.max(initial=0.0)) > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    def with_key(self, key: str | None) -> "RasterImage":
        return RasterImage(self.pixels, key)


def bbox_iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    ix = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
    iy = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def bbox_center(b: BBox) -> tuple[float, float]:
    return ((b.x0 + b.x1) / 2.0, (b.y0 + b.y1) / 2.0)


def mask_area(m: BinaryMask) -> int:
    return int(m.bits.sum())


def mask_union(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    if a.bits.shape != b.bits.shape:
        raise DimensionMismatch(f"mask shapes {a.bits.shape} vs {b.bits.shape}")
    return BinaryMask(a.bits | b.bits)


def crop_by_bbox(img: RasterImage, b: BBox) -> RasterImage:
    """Sub-raster covering the snapped box, clamped to the image.

    The crop inherits a derived provider key so keyed providers can look up
    embeddings for it.
    """
    x0, y0, x1, y1 = b.clamped(img.width, img.height).snapped()
    if x1 <= x0 or y1 <= y0:
        raise EmptyCrop(f"box {b.as_tuple()} snaps to zero area")
    key = f"{img.key}@{x0},{y0},{x1},{y1}" if img.key else None
    return RasterImage(img.pixels[y0:y1, x0:x1].copy(), key)


def apply_exclusion_mask(img: RasterImage, m: BinaryMask) -> RasterImage:
    """Zero out every pixel where the mask is set; keep the rest."""
    if (m.height, m.width) != (img.height, img.width):
        raise DimensionMismatch(
            f"mask {m.height}x{m.width} vs image {img.height}x{img.width}"
        )
    out = img.pixels.copy()
    out[m.bits] = 0.0
    return RasterImage(out, img.key)


def add_gaussian_noise(img: RasterImage, sigma: float, seed: int) -> RasterImage:
    """Per-channel i.i.d. Gaussian noise, clamped to [0, 1]; seed-deterministic."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    noised = img.pixels + rng.normal(0.0, sigma, img.pixels.shape)
    return RasterImage(np.clip(noised, 0.0, 1.0), img.key)


def resize_image(img: RasterImage, width: int, height: int) -> RasterImage:
    """Bilinear resize, channel-wise on float rasters."""
    if (img.width, img.height) == (width, height):
        return img
    planes = []
    for c in range(3):
        plane = Image.fromarray(img.pixels[:, :, c].astype(np.float32), mode="F")
        plane = plane.resize((width, height), Image.BILINEAR)
        planes.append(np.asarray(plane, dtype=np.float64))
    out = np.clip(np.stack(planes, axis=-1), 0.0, 1.0)
    return RasterImage(out, img.key)


def resize_mask_nearest(m: BinaryMask, width: int, height: int) -> BinaryMask:
    if (m.width, m.height) == (width, height):
        return m
    img = Image.fromarray(m.bits.astype(np.uint8) * 255, mode="L")
    img = img.resize((width, height), Image.NEAREST)
    return BinaryMask(np.asarray(img) >= 128)


# PNG codec: 8-bit RGB images, 8-bit grayscale masks (pixel >= 128 means set).

def decode_png(data: bytes, key: str | None = None) -> RasterImage:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    pixels = np.asarray(img, dtype=np.float64) / 255.0
    return RasterImage(pixels, key)


def encode_png(img: RasterImage) -> bytes:
    arr = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_mask_png(data: bytes) -> BinaryMask:
    img = Image.open(io.BytesIO(data)).convert("L")
    return BinaryMask(np.asarray(img) >= 128)


def encode_mask_png(m: BinaryMask) -> bytes:
    arr = m.bits.astype(np.uint8) * 255
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def load_image(path, key: str | None = None) -> RasterImage:
    with open(path, "rb") as f:
        return decode_png(f.read(), key)


def save_image(img: RasterImage, path) -> None:
    with open(path, "wb") as f:
        f.write(encode_png(img))


def load_mask(path) -> BinaryMask:
    with open(path, "rb") as f:
        return decode_mask_png(f.read())


def save_mask(m: BinaryMask, path) -> None:
    with open(path, "wb") as f:
        f.write(encode_mask_png(m))


def image_b64(img: RasterImage) -> str:
    return base64.b64encode(encode_png(img)).decode("ascii")


def image_from_b64(s: str, key: str | None = None) -> RasterImage:
    return decode_png(base64.b64decode(s), key)


def mask_b64(m: BinaryMask) -> str:
    return base64.b64encode(encode_mask_png(m)).decode("ascii")


def mask_from_b64(s: str) -> BinaryMask:
    return decode_mask_png(base64.b64decode(s))
