"""Built-in deterministic backends, one per capability.

Each backend fills a model role behind the service (instruction parser,
open-vocabulary detector, promptable segmenter, image/text encoder) with
classical, weight-free computation, so the service runs anywhere and returns
identical outputs for identical inputs. Heavier checkpointed models plug in
by registering a new identifier; unknown identifiers fail the capability at
load time and the service answers 503 for it.
"""

from __future__ import annotations

import hashlib
import json
import re

import numpy as np
from PIL import Image
from scipy import ndimage

from bpm_eval.errors import EmptyCrop
from bpm_eval.geometry import BBox, BinaryMask, RasterImage


class ModelLoadError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# instruction parser


_ARTICLES = ("the", "a", "an")


def _clean(words: list[str]) -> str | None:
    while words and words[0] in _ARTICLES:
        words = words[1:]
    phrase = " ".join(words).strip(" .,!")
    return phrase or None


class RuleParserModel:
    """Pseudo language model: reads the instruction out of the prompt and
    answers with a JSON object, like an instruction-following model would.

    Token-scan grammar over the verb templates the benchmark uses; anything
    else yields a refusal string (schema-invalid on purpose, exercising the
    caller's reformat path before it gives up).
    """

    _DIRS = {"left": "left", "right": "right", "up": "up", "down": "down",
             "upwards": "up", "downwards": "down", "upward": "up", "downward": "down"}
    _SIZES = {"bigger": "larger", "larger": "larger", "smaller": "smaller"}

    def generate(self, prompt: str) -> str:
        quoted = re.findall(r'Instruction: "(.*)"', prompt)
        if not quoted:
            return "I could not find an instruction to analyze."
        fields = self._analyze(quoted[-1])
        if fields is None:
            return f"I cannot analyze the instruction {quoted[-1]!r}."
        return json.dumps(fields)

    def _analyze(self, instruction: str) -> dict | None:
        words = instruction.lower().replace(",", " ").split()
        words = [w.strip(".!") for w in words if w.strip(".!")]
        if not words:
            return None
        verb, rest = words[0], words[1:]
        out = {"source_object": None, "target_object": None,
               "reference_object": None, "pos_st": "unchanged", "size_st": "unchanged"}

        if verb == "remove" and rest:
            out["source_object"] = _clean(rest)
        elif verb in ("replace", "change") and rest:
            pivot = "with" if verb == "replace" else "to"
            if pivot not in rest:
                return None
            cut = rest.index(pivot)
            out["source_object"] = _clean(rest[:cut])
            out["target_object"] = _clean(rest[cut + 1:])
        elif verb == "make" and len(rest) >= 2 and rest[-1] in self._SIZES:
            obj = _clean(rest[:-1])
            out["source_object"] = out["target_object"] = obj
            out["size_st"] = self._SIZES[rest[-1]]
        elif verb == "move" and len(rest) >= 2 and rest[-1] in self._DIRS:
            body = rest[:-1]
            if len(body) >= 2 and body[-2:] == ["to", "the"]:
                body = body[:-2]
            obj = _clean(body)
            out["source_object"] = out["target_object"] = obj
            out["pos_st"] = self._DIRS[rest[-1]]
        elif verb == "add" and rest:
            body = rest
            for k in range(len(body) - 1):
                if body[k] == "above" or body[k] == "below":
                    out["pos_st"] = "up" if body[k] == "above" else "down"
                    out["reference_object"] = _clean(body[k + 1:])
                    body = body[:k]
                    break
                if (body[k:k + 2] == ["to", "the"] and k + 3 < len(body)
                        and body[k + 2] in ("left", "right") and body[k + 3] == "of"):
                    out["pos_st"] = body[k + 2]
                    out["reference_object"] = _clean(body[k + 4:])
                    body = body[:k]
                    break
            out["target_object"] = _clean(body)
        else:
            return None

        if out["source_object"] is None and out["target_object"] is None:
            return None
        return out


# ---------------------------------------------------------------------------
# open-vocabulary detector and box-prompted segmenter


COLOR_ANCHORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
    "white": (1.0, 1.0, 1.0),
    "black": (0.0, 0.0, 0.0),
    "orange": (1.0, 0.5, 0.0),
    "purple": (0.5, 0.0, 1.0),
    "pink": (1.0, 0.6, 0.8),
    "brown": (0.55, 0.27, 0.07),
}

COLOR_TOLERANCE = 0.25
MIN_COMPONENT_AREA = 9


def _color_distance(pixels: np.ndarray, anchor) -> np.ndarray:
    return np.sqrt(((pixels - np.asarray(anchor)) ** 2).sum(axis=-1))


def _border_background(pixels: np.ndarray):
    # modal border color in uint8 space: exact, no averaging artifacts
    u8 = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    border = np.concatenate([u8[0], u8[-1], u8[:, 0], u8[:, -1]])
    colors, counts = np.unique(border.reshape(-1, 3), axis=0, return_counts=True)
    return colors[int(np.argmax(counts))].astype(np.float64) / 255.0


class BlobDetectorModel:
    """Connected-component detector over a color-word vocabulary.

    A query naming a known color selects pixels near that color; otherwise
    anything sufficiently far from the border background counts. Components
    become boxes; confidence ranks by area with the largest at 1.0.
    """

    def detect(self, image: RasterImage, query: str) -> list[dict]:
        anchor = None
        for word in query.lower().split():
            if word.strip(".,") in COLOR_ANCHORS:
                anchor = COLOR_ANCHORS[word.strip(".,")]
                break
        if anchor is not None:
            selected = _color_distance(image.pixels, anchor) < COLOR_TOLERANCE
        else:
            background = _border_background(image.pixels)
            selected = _color_distance(image.pixels, background) > COLOR_TOLERANCE

        labels, count = ndimage.label(selected)
        components = []
        for idx in range(1, count + 1):
            ys, xs = np.nonzero(labels == idx)
            area = int(ys.size)
            if area < MIN_COMPONENT_AREA:
                continue
            components.append((area, float(xs.min()), float(ys.min()),
                               float(xs.max()) + 1.0, float(ys.max()) + 1.0))
        if not components:
            return []
        largest = max(c[0] for c in components)
        components.sort(key=lambda c: (-c[0], c[1], c[2]))
        return [
            {
                "bbox": [x0, y0, x1, y1],
                "confidence": 0.5 + 0.5 * (area / largest),
                "label": query,
            }
            for area, x0, y0, x1, y1 in components
        ]


class BoxColorSegmenterModel:
    """Box-prompted segmenter: pixels inside the box near its median color."""

    def segment(self, image: RasterImage, bbox: BBox) -> BinaryMask:
        bits = np.zeros((image.height, image.width), dtype=bool)
        try:
            x0, y0, x1, y1 = bbox.clamped(image.width, image.height).snapped()
        except EmptyCrop:
            return BinaryMask(bits)  # box entirely outside the frame
        if x1 > x0 and y1 > y0:
            patch = image.pixels[y0:y1, x0:x1]
            u8 = np.clip(np.rint(patch * 255.0), 0, 255).astype(np.uint8)
            seed = np.median(u8.reshape(-1, 3), axis=0) / 255.0
            bits[y0:y1, x0:x1] = _color_distance(patch, seed) < COLOR_TOLERANCE
        return BinaryMask(bits)


# ---------------------------------------------------------------------------
# image/text encoder


class PatchGramEmbedderModel:
    """Deterministic encoder pair sharing one vector space dimension.

    Images: 8x8 box-filtered RGB thumbnail, flattened and zero-padded.
    Text: hashed character trigrams with hash-derived signs. Both unit-norm.
    """

    PATCH = 8

    def __init__(self, dim: int):
        if dim < 1:
            raise ModelLoadError(f"embedding dimension must be positive, got {dim}")
        self.dim = dim

    def _finish(self, vec: np.ndarray) -> np.ndarray:
        norm = float(np.linalg.norm(vec))
        if norm < 1e-12:
            vec = np.zeros(self.dim)
            vec[0] = 1.0
            return vec
        return vec / norm

    def embed_image(self, image: RasterImage) -> np.ndarray:
        u8 = np.clip(np.rint(image.pixels * 255.0), 0, 255).astype(np.uint8)
        thumb = Image.fromarray(u8, mode="RGB").resize((self.PATCH, self.PATCH), Image.BOX)
        features = (np.asarray(thumb, dtype=np.float64) / 255.0).ravel()
        vec = np.zeros(self.dim)
        n = min(self.dim, features.size)
        vec[:n] = features[:n]
        return self._finish(vec)

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        padded = f"^{text.strip().lower()}$"
        for k in range(len(padded) - 2):
            digest = hashlib.sha256(padded[k:k + 3].encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:8], "big") % self.dim
            sign = 1.0 if digest[8] % 2 == 0 else -1.0
            vec[bucket] += sign
        return self._finish(vec)


# ---------------------------------------------------------------------------
# registry


def build_model(capability: str, model_id: str):
    """Instantiate the backend registered under model_id; ModelLoadError otherwise."""
    if capability == "parse" and model_id == "rule-parser-v1":
        return RuleParserModel()
    if capability == "detect" and model_id == "blob-detector-v1":
        return BlobDetectorModel()
    if capability == "segment" and model_id == "box-color-segmenter-v1":
        return BoxColorSegmenterModel()
    if capability == "embed":
        m = re.fullmatch(r"patchgram-(\d+)", model_id)
        if m:
            return PatchGramEmbedderModel(int(m.group(1)))
    raise ModelLoadError(f"no {capability} backend registered as {model_id!r}")
