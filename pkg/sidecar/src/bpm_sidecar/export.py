"""Fixture export: replay the engine against the sidecar models and record
every perception exchange into the engine's offline fixture layout.

The in-process provider below routes images and payloads through the same
PNG and JSON codecs the HTTP transport uses, so a recorded fixture tree
reproduces a live-service evaluation bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

from bpm_eval.aggregate import evaluate_batch
from bpm_eval.config import EngineConfig
from bpm_eval.geometry import (
    BBox,
    BinaryMask,
    RasterImage,
    image_from_b64,
    image_b64,
    load_image,
    mask_from_b64,
    resize_mask_nearest,
    save_mask,
)
from bpm_eval.harness import load_manifest
from bpm_eval.parsing import ParsedInstruction, validate_parse_response
from bpm_eval.providers import (
    Detection,
    PerceptionProvider,
    ProviderCapabilities,
    bbox_key,
    validate_embedding,
)

from .config import SidecarConfig
from .core import SidecarCore, roundtrip_json


class ExportError(RuntimeError):
    pass


def _wire_image(image: RasterImage) -> RasterImage:
    """PNG-encode and decode, exactly like one HTTP hop; key is preserved."""
    return image_from_b64(image_b64(image), key=image.key)


class LocalSidecarProvider(PerceptionProvider):
    """The sidecar models behind the engine's provider interface, in process.

    Every call mirrors the HTTP client's handling of the core payloads,
    codec roundtrips included.
    """

    def __init__(self, core: SidecarCore):
        self.core = core
        self._embed_dim: int | None = None

    def capabilities(self) -> ProviderCapabilities:
        payload = roundtrip_json(self.core.capabilities_payload())
        caps = ProviderCapabilities(
            embed_dim=int(payload["embed_dim"]),
            supports_parse=bool(payload["supports_parse"]),
            supports_detect=bool(payload["supports_detect"]),
            supports_segment=bool(payload["supports_segment"]),
            supports_embed=bool(payload["supports_embed"]),
            version=str(payload["version"]),
        )
        if caps.supports_embed:
            self._embed_dim = caps.embed_dim
        return caps

    def parse(self, instruction: str) -> ParsedInstruction:
        payload = roundtrip_json(self.core.parse_payload(instruction))
        return validate_parse_response(json.dumps(payload))

    def detect(self, image: RasterImage, query: str) -> list[Detection]:
        payload = roundtrip_json(self.core.detect_payload(_wire_image(image), query))
        return [
            Detection(
                BBox(*[float(v) for v in entry["bbox"]]),
                float(entry["confidence"]),
                str(entry.get("label", query)),
            )
            for entry in payload["detections"]
        ]

    def segment(self, image: RasterImage, bbox: BBox) -> BinaryMask:
        payload = roundtrip_json(self.core.segment_payload(_wire_image(image), bbox))
        mask = mask_from_b64(payload["mask_png_b64"])
        return resize_mask_nearest(mask, image.width, image.height)

    def _embed(self, payload: dict):
        vec = validate_embedding(payload["vector"], self._embed_dim)
        self._embed_dim = self._embed_dim or vec.size
        return vec

    def embed_image(self, image: RasterImage):
        return self._embed(roundtrip_json(self.core.embed_image_payload(_wire_image(image))))

    def embed_text(self, text: str):
        return self._embed(roundtrip_json(self.core.embed_text_payload(text)))


class RecordingProvider(PerceptionProvider):
    """Pass-through wrapper that captures one sample's perception exchanges."""

    def __init__(self, inner: PerceptionProvider, sample_id: str):
        self.inner = inner
        self.sample_id = sample_id
        self.parse_record: tuple[str, dict] | None = None
        self.detections: dict[tuple[str, str], list[dict]] = {}
        self.masks: dict[tuple[str, str], BinaryMask] = {}
        self.image_embeds: dict[str, list[float]] = {}
        self.text_embeds: dict[str, list[float]] = {}

    def _role_of(self, image: RasterImage) -> str:
        key = image.key or ""
        sid, _, rest = key.partition("/")
        if sid != self.sample_id or not rest:
            raise ExportError(f"image key {key!r} does not belong to sample {self.sample_id!r}")
        return rest.split("@", 1)[0]

    def capabilities(self) -> ProviderCapabilities:
        return self.inner.capabilities()

    def parse(self, instruction: str) -> ParsedInstruction:
        parsed = self.inner.parse(instruction)
        self.parse_record = (instruction, parsed.to_dict())
        return parsed

    def detect(self, image: RasterImage, query: str) -> list[Detection]:
        detections = self.inner.detect(image, query)
        self.detections[(self._role_of(image), query)] = [
            {
                "bbox": [d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1],
                "confidence": d.confidence,
                "label": d.label,
            }
            for d in detections
        ]
        return detections

    def segment(self, image: RasterImage, bbox: BBox) -> BinaryMask:
        mask = self.inner.segment(image, bbox)
        self.masks[(self._role_of(image), bbox_key(bbox))] = mask
        return mask

    def embed_image(self, image: RasterImage):
        vec = self.inner.embed_image(image)
        if not image.key or not image.key.startswith(f"{self.sample_id}/"):
            raise ExportError(f"unexpected embed key {image.key!r}")
        self.image_embeds[image.key.split("/", 1)[1]] = vec.tolist()
        return vec

    def embed_text(self, text: str):
        vec = self.inner.embed_text(text)
        self.text_embeds[text] = vec.tolist()
        return vec

    def write_sample(self, root: Path) -> None:
        """Emit this sample's directory in the engine's fixture layout."""
        sample_dir = root / self.sample_id
        sample_dir.mkdir(parents=True, exist_ok=True)

        if self.parse_record is not None:
            instruction, response = self.parse_record
            _dump_json(sample_dir / "parse.json",
                       {"instruction": instruction, "response": response})

        detections = {}
        for (role, query), entries in sorted(self.detections.items()):
            detections.setdefault(role, {})[query] = [dict(e) for e in entries]

        counters: dict[str, int] = {}
        for (role, bkey), mask in sorted(self.masks.items()):
            target = None
            for query_entries in detections.get(role, {}).values():
                for entry in query_entries:
                    if bbox_key(BBox(*entry["bbox"])) == bkey:
                        target = entry
                        break
                if target is not None:
                    break
            if target is None:
                raise ExportError(f"mask for ({role}, {bkey}) matches no detection")
            n = counters.get(role, 0)
            counters[role] = n + 1
            name = f"mask_{role}_{n}.png"
            save_mask(mask, sample_dir / name)
            target["mask"] = name

        if detections:
            _dump_json(sample_dir / "detections.json", detections)
        if self.image_embeds or self.text_embeds:
            _dump_json(sample_dir / "embeddings.json",
                       {"image": self.image_embeds, "text": self.text_embeds})


def _dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def export_fixtures(
    manifest: str | Path,
    out_dir: str | Path,
    config: SidecarConfig | None = None,
    engine_config: EngineConfig | None = None,
) -> dict:
    """Evaluate every manifest sample against the sidecar models, recording
    each one's perception traffic as an offline fixture directory.

    Per-sample failures land in export_errors.json next to the sample dirs;
    the rest of the export proceeds. Returns {"exported", "errors", "out_dir"}.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    core = SidecarCore(config or SidecarConfig())
    inner = LocalSidecarProvider(core)
    # one worker: recorded call order stays reproducible
    cfg = engine_config or EngineConfig(jobs=1)

    entries = load_manifest(manifest, check_paths=False)
    exported: list[str] = []
    errors: dict[str, str] = {}
    for entry in entries:
        recorder = RecordingProvider(inner, entry.id)
        try:
            sample = {
                "id": entry.id,
                "origin": load_image(entry.original_path, key=f"{entry.id}/origin"),
                "edited": load_image(entry.edited_path, key=f"{entry.id}/edit"),
                "instruction": entry.instruction,
                "model_tag": entry.model_tag,
            }
            evaluate_batch([sample], recorder, cfg)
            recorder.write_sample(out)
        except Exception as exc:
            errors[entry.id] = f"{type(exc).__name__}: {exc}"
            continue
        exported.append(entry.id)

    meta: dict = {"version": core.version}
    caps = core.capabilities_payload()
    if caps["supports_embed"]:
        meta["embed_dim"] = caps["embed_dim"]
    _dump_json(out / "provider.json", meta)
    _dump_json(out / "export_errors.json", errors)
    return {"exported": exported, "errors": errors, "out_dir": out}
