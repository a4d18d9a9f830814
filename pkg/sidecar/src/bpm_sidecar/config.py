"""Sidecar configuration: one model identifier per capability plus transport knobs."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

DEFAULT_PARSER = "rule-parser-v1"
DEFAULT_DETECTOR = "blob-detector-v1"
DEFAULT_SEGMENTER = "box-color-segmenter-v1"
DEFAULT_EMBEDDER = "patchgram-512"  # suffix selects the vector dimension

CAPABILITIES = ("parse", "detect", "segment", "embed")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SidecarConfig:
    parser_model: str | None = DEFAULT_PARSER
    detector_model: str | None = DEFAULT_DETECTOR
    segmenter_model: str | None = DEFAULT_SEGMENTER
    embedder_model: str | None = DEFAULT_EMBEDDER
    device: str = "cpu"
    max_request_bytes: int = 8 * 1024 * 1024
    token: str | None = None

    def __post_init__(self):
        if self.max_request_bytes < 1024:
            raise ConfigError("max_request_bytes must be at least 1024")
        if not self.device:
            raise ConfigError("device must be non-empty")

    def model_id(self, capability: str) -> str | None:
        return {
            "parse": self.parser_model,
            "detect": self.detector_model,
            "segment": self.segmenter_model,
            "embed": self.embedder_model,
        }[capability]


def load_sidecar_config(path: str | None = None) -> SidecarConfig:
    """Defaults, optionally overridden by a JSON file. Unknown keys are errors."""
    cfg = SidecarConfig()
    if path is None:
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object")
    known = {
        "parser_model", "detector_model", "segmenter_model", "embedder_model",
        "device", "max_request_bytes", "token",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    return replace(cfg, **data)
