from ..errors import SchemaViolation
from .base import Detection, EmbeddingVector, PerceptionProvider, ProviderCapabilities, validate_embedding
from .fixture import FixtureProvider, bbox_key
from .http import HttpProvider

__all__ = [
    "Detection",
    "EmbeddingVector",
    "PerceptionProvider",
    "ProviderCapabilities",
    "FixtureProvider",
    "HttpProvider",
    "bbox_key",
    "make_provider",
    "validate_embedding",
]


def make_provider(kind: str, locator: str, **kwargs) -> PerceptionProvider:
    """Build a provider from a (kind, locator) pair, e.g. ("fixtures", "./fx")."""
    if kind == "fixtures":
        return FixtureProvider(locator)
    if kind == "http":
        return HttpProvider(locator, **kwargs)
    raise SchemaViolation("provider", f"unknown provider kind {kind!r}")
