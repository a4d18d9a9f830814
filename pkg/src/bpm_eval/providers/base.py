"""Perception provider protocol: parses, detections, masks, embeddings."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from math import isfinite

import numpy as np

from ..errors import SchemaViolation
from ..geometry import BBox, BinaryMask, RasterImage
from ..parsing import ParsedInstruction

# Embeddings are plain float vectors; providers L2-normalize before returning,
# so norms sit in (0, 1 + 1e-6].
EmbeddingVector = np.ndarray

_NORM_CEILING = 1.0 + 1e-6


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    confidence: float
    label: str

    def __post_init__(self):
        if not (isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise SchemaViolation("confidence", f"out of range: {self.confidence}")


@dataclass(frozen=True)
class ProviderCapabilities:
    embed_dim: int
    supports_parse: bool
    supports_detect: bool
    supports_segment: bool
    supports_embed: bool
    version: str

    def __post_init__(self):
        if self.supports_embed and self.embed_dim <= 0:
            raise SchemaViolation("embed_dim", "must be positive when embedding is supported")


def validate_embedding(values, expected_dim: int | None = None) -> EmbeddingVector:
    """Check shape, finiteness and the post-normalization norm range."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise SchemaViolation("vector", f"expected a non-empty 1-d vector, got shape {vec.shape}")
    if expected_dim is not None and vec.size != expected_dim:
        raise SchemaViolation("vector", f"dimension {vec.size} != session dimension {expected_dim}")
    if not np.all(np.isfinite(vec)):
        raise SchemaViolation("vector", "non-finite values")
    norm = float(np.linalg.norm(vec))
    if not (0.0 < norm <= _NORM_CEILING):
        raise SchemaViolation("vector", f"norm {norm} outside (0, 1+1e-6]")
    return vec


class PerceptionProvider(ABC):
    """Engine-side view of the perception models."""

    @abstractmethod
    def capabilities(self) -> ProviderCapabilities: ...

    @abstractmethod
    def parse(self, instruction: str) -> ParsedInstruction: ...

    @abstractmethod
    def detect(self, image: RasterImage, query: str) -> list[Detection]: ...

    @abstractmethod
    def segment(self, image: RasterImage, bbox: BBox) -> BinaryMask: ...

    @abstractmethod
    def embed_image(self, image: RasterImage) -> EmbeddingVector: ...

    @abstractmethod
    def embed_text(self, text: str) -> EmbeddingVector: ...
