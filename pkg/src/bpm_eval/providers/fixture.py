"""File-backed provider: the whole pipeline runs offline against a fixture tree.

Layout, one directory per sample id under the root:

    <root>/provider.json                     optional {"embed_dim": .., "version": ..}
    <root>/<sid>/parse.json                  {"instruction": .., "response": {..}}
    <root>/<sid>/detections.json             {"origin": {"<query>": [det, ..]}, "edit": {..}}
    <root>/<sid>/mask_<role>_<n>.png         masks referenced by detection entries
    <root>/<sid>/embeddings.json             {"image": {"<role>[@x0,y0,x1,y1]": [..]},
                                              "text": {"<text>": [..]}}

Detection entries: {"bbox": [x0,y0,x1,y1], "confidence": f, "label": str,
"mask": "mask_origin_0.png"}. Image embedding keys quantize crop boxes to the
integer pixel bounds the engine snaps to, so float boxes stay stable keys.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import FixtureMiss, SchemaViolation
from ..geometry import BBox, BinaryMask, RasterImage, load_mask, resize_mask_nearest
from ..parsing import ParsedInstruction, validate_parse_response
from .base import Detection, EmbeddingVector, PerceptionProvider, ProviderCapabilities, validate_embedding

IMAGE_ROLES = ("origin", "edit")


def bbox_key(b: BBox) -> str:
    x0, y0, x1, y1 = b.snapped()
    return f"{x0},{y0},{x1},{y1}"


class FixtureProvider(PerceptionProvider):
    """Read-only keyed lookup over a fixture directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FixtureMiss(f"fixture root {self.root} is not a directory")
        self._parses: dict[str, str] = {}
        self._detections: dict[tuple[str, str, str], list[dict]] = {}
        self._mask_paths: dict[tuple[str, str, str], Path] = {}
        self._image_embeds: dict[str, EmbeddingVector] = {}
        self._text_embeds: dict[str, EmbeddingVector] = {}
        self._embed_dim: int | None = None
        self._version = "fixtures"
        self._load()

    def _load(self) -> None:
        meta = self.root / "provider.json"
        if meta.is_file():
            info = json.loads(meta.read_text())
            self._embed_dim = info.get("embed_dim")
            self._version = info.get("version", self._version)

        for sample_dir in sorted(p for p in self.root.iterdir() if p.is_dir()):
            sid = sample_dir.name
            self._load_parse(sid, sample_dir)
            self._load_detections(sid, sample_dir)
            self._load_embeddings(sid, sample_dir)

    def _load_parse(self, sid: str, sample_dir: Path) -> None:
        path = sample_dir / "parse.json"
        if not path.is_file():
            return
        payload = json.loads(path.read_text())
        instruction = payload["instruction"].strip()
        response = json.dumps(payload["response"], sort_keys=True)
        previous = self._parses.get(instruction)
        if previous is not None and previous != response:
            raise SchemaViolation("parse", f"conflicting responses for {instruction!r}")
        self._parses[instruction] = response

    def _load_detections(self, sid: str, sample_dir: Path) -> None:
        path = sample_dir / "detections.json"
        if not path.is_file():
            return
        payload = json.loads(path.read_text())
        for role, queries in payload.items():
            if role not in IMAGE_ROLES:
                raise SchemaViolation("detections", f"unknown image role {role!r}")
            for query, entries in queries.items():
                self._detections[(sid, role, query)] = entries
                for entry in entries:
                    if "mask" in entry:
                        box = BBox(*entry["bbox"])
                        self._mask_paths[(sid, role, bbox_key(box))] = sample_dir / entry["mask"]

    def _load_embeddings(self, sid: str, sample_dir: Path) -> None:
        path = sample_dir / "embeddings.json"
        if not path.is_file():
            return
        payload = json.loads(path.read_text())
        for key, values in payload.get("image", {}).items():
            vec = validate_embedding(values, self._embed_dim)
            self._embed_dim = self._embed_dim or vec.size
            self._image_embeds[f"{sid}/{key}"] = vec
        for text, values in payload.get("text", {}).items():
            vec = validate_embedding(values, self._embed_dim)
            self._embed_dim = self._embed_dim or vec.size
            previous = self._text_embeds.get(text)
            if previous is not None and not np.array_equal(previous, vec):
                raise SchemaViolation("text", f"conflicting embeddings for {text!r}")
            self._text_embeds[text] = vec

    def capabilities(self) -> ProviderCapabilities:
        return ProviderCapabilities(
            embed_dim=self._embed_dim or 0,
            supports_parse=bool(self._parses),
            supports_detect=bool(self._detections),
            supports_segment=bool(self._mask_paths),
            supports_embed=bool(self._image_embeds or self._text_embeds),
            version=self._version,
        )

    @staticmethod
    def _split_key(image: RasterImage) -> tuple[str, str]:
        if not image.key or "@" in image.key or "/" not in image.key:
            raise FixtureMiss(f"image has no sample/role key: {image.key!r}")
        sid, role = image.key.split("/", 1)
        if role not in IMAGE_ROLES:
            raise FixtureMiss(f"unknown image role in key {image.key!r}")
        return sid, role

    def parse(self, instruction: str) -> ParsedInstruction:
        raw = self._parses.get(instruction.strip())
        if raw is None:
            raise FixtureMiss(f"no parse fixture for {instruction!r}")
        return validate_parse_response(raw)

    def detect(self, image: RasterImage, query: str) -> list[Detection]:
        sid, role = self._split_key(image)
        entries = self._detections.get((sid, role, query))
        if entries is None:
            raise FixtureMiss(f"no detections for ({sid}, {role}, {query!r})")
        return [
            Detection(BBox(*e["bbox"]), float(e["confidence"]), str(e.get("label", query)))
            for e in entries
        ]

    def segment(self, image: RasterImage, bbox: BBox) -> BinaryMask:
        sid, role = self._split_key(image)
        path = self._mask_paths.get((sid, role, bbox_key(bbox)))
        if path is None:
            raise FixtureMiss(f"no mask for ({sid}, {role}, {bbox_key(bbox)})")
        mask = load_mask(path)
        return resize_mask_nearest(mask, image.width, image.height)

    def embed_image(self, image: RasterImage) -> EmbeddingVector:
        if not image.key:
            raise FixtureMiss("image has no provider key")
        vec = self._image_embeds.get(image.key)
        if vec is None:
            raise FixtureMiss(f"no image embedding for {image.key!r}")
        return vec.copy()

    def embed_text(self, text: str) -> EmbeddingVector:
        vec = self._text_embeds.get(text)
        if vec is None:
            raise FixtureMiss(f"no text embedding for {text!r}")
        return vec.copy()
