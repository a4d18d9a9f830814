"""Capability runtime shared by the HTTP service and the in-process provider.

Holds the loaded models, serializes access to each one when the device is not
plain CPU, and shapes every answer exactly as the wire protocol defines it,
so both transports return byte-equal payloads.
"""

from __future__ import annotations

import contextlib
import json
import threading

import numpy as np

from bpm_eval.errors import SchemaViolation
from bpm_eval.geometry import BBox, BinaryMask, RasterImage, mask_b64
from bpm_eval.parsing import build_parse_prompt, validate_parse_response

from .config import CAPABILITIES, SidecarConfig
from .models import ModelLoadError, build_model

PARSE_REFORMAT_RETRIES = 2

_REFORMAT_SUFFIX = (
    "\n\nYour previous reply was not the required JSON. Respond with ONLY a "
    "single JSON object containing exactly the keys \"source_object\", "
    "\"target_object\", \"reference_object\", \"pos_st\" and \"size_st\"."
)


class CapabilityUnavailable(RuntimeError):
    """The capability's model did not load; callers answer 503."""


class ParseOutputInvalid(RuntimeError):
    """The parser model kept producing schema-invalid output."""


def _extract_json_object(raw: str) -> str:
    """First balanced {...} block in the model output; the raw text otherwise."""
    start = raw.find("{")
    if start < 0:
        return raw
    depth = 0
    for k in range(start, len(raw)):
        if raw[k] == "{":
            depth += 1
        elif raw[k] == "}":
            depth -= 1
            if depth == 0:
                return raw[start:k + 1]
    return raw


class SidecarCore:
    def __init__(self, config: SidecarConfig):
        self.config = config
        self.models: dict[str, object] = {}
        self.load_errors: dict[str, str] = {}
        self._locks: dict[str, threading.Lock] = {}
        for capability in CAPABILITIES:
            model_id = config.model_id(capability)
            if model_id is None:
                self.load_errors[capability] = "no model configured"
                continue
            try:
                self.models[capability] = build_model(capability, model_id)
            except ModelLoadError as exc:
                self.load_errors[capability] = str(exc)
            else:
                self._locks[capability] = threading.Lock()

    def _model(self, capability: str):
        model = self.models.get(capability)
        if model is None:
            raise CapabilityUnavailable(
                f"{capability}: {self.load_errors.get(capability, 'not loaded')}"
            )
        return model

    def _guard(self, capability: str):
        # device-backed models share memory; serialize them. CPU paths are pure.
        if self.config.device != "cpu":
            return self._locks[capability]
        return contextlib.nullcontext()

    @property
    def version(self) -> str:
        ids = [self.config.model_id(c) or "-" for c in CAPABILITIES]
        return "sidecar/" + "+".join(ids)

    def capabilities_payload(self) -> dict:
        embedder = self.models.get("embed")
        return {
            "embed_dim": embedder.dim if embedder is not None else 0,
            "supports_parse": "parse" in self.models,
            "supports_detect": "detect" in self.models,
            "supports_segment": "segment" in self.models,
            "supports_embed": "embed" in self.models,
            "version": self.version,
            "device": self.config.device,
            "models": {c: self.config.model_id(c) for c in CAPABILITIES},
            "load_errors": dict(self.load_errors),
        }

    def parse_payload(self, instruction: str) -> dict:
        model = self._model("parse")
        prompt = build_parse_prompt(instruction)
        with self._guard("parse"):
            for attempt in range(1 + PARSE_REFORMAT_RETRIES):
                raw = model.generate(prompt if attempt == 0 else prompt + _REFORMAT_SUFFIX)
                try:
                    parsed = validate_parse_response(_extract_json_object(raw))
                except SchemaViolation:
                    continue
                return parsed.to_dict()
        raise ParseOutputInvalid(f"no valid JSON after {PARSE_REFORMAT_RETRIES} reformats")

    def detect_payload(self, image: RasterImage, query: str) -> dict:
        model = self._model("detect")
        with self._guard("detect"):
            return {"detections": model.detect(image, query)}

    def segment_payload(self, image: RasterImage, bbox: BBox) -> dict:
        model = self._model("segment")
        with self._guard("segment"):
            mask: BinaryMask = model.segment(image, bbox)
        return {"mask_png_b64": mask_b64(mask)}

    def _unit(self, vec: np.ndarray) -> list[float]:
        norm = float(np.linalg.norm(vec))
        if not np.isfinite(norm) or norm < 1e-12:
            raise RuntimeError("embedder returned a degenerate vector")
        return (np.asarray(vec, dtype=np.float64) / norm).tolist()

    def embed_image_payload(self, image: RasterImage) -> dict:
        model = self._model("embed")
        with self._guard("embed"):
            return {"vector": self._unit(model.embed_image(image))}

    def embed_text_payload(self, text: str) -> dict:
        model = self._model("embed")
        with self._guard("embed"):
            return {"vector": self._unit(model.embed_text(text))}


def roundtrip_json(payload: dict) -> dict:
    """Exactly what a wire hop does to a payload; keeps local == HTTP bit-for-bit."""
    return json.loads(json.dumps(payload))
