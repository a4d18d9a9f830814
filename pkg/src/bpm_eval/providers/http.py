"""HTTP client for a perception sidecar speaking the /v1 JSON protocol."""

from __future__ import annotations

import json
import time

import requests
from requests.adapters import HTTPAdapter

from ..errors import ProviderUnavailable, SchemaViolation
from ..geometry import BBox, BinaryMask, RasterImage, image_b64, mask_from_b64, resize_mask_nearest
from ..parsing import ParsedInstruction, validate_parse_response
from .base import Detection, EmbeddingVector, PerceptionProvider, ProviderCapabilities, validate_embedding


class HttpProvider(PerceptionProvider):
    """Thin client: schema-validates responses, retries idempotent calls.

    Retries use exponential backoff, capped by both a retry count and a
    wall-clock deadline per request.
    """

    def __init__(
        self,
        base_url: str,
        token: str | None = None,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.25,
        deadline: float = 60.0,
        pool_size: int = 8,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.deadline = deadline
        self._session = requests.Session()
        adapter = HTTPAdapter(pool_connections=pool_size, pool_maxsize=pool_size)
        self._session.mount("http://", adapter)
        self._session.mount("https://", adapter)
        if token:
            self._session.headers["Authorization"] = f"Bearer {token}"
        self._capabilities: ProviderCapabilities | None = None
        self._embed_dim: int | None = None

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        url = f"{self.base_url}{path}"
        start = time.monotonic()
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt > 0:
                delay = self.backoff * (2 ** (attempt - 1))
                if time.monotonic() - start + delay > self.deadline:
                    break
                time.sleep(delay)
            try:
                if method == "GET":
                    resp = self._session.get(url, timeout=self.timeout)
                else:
                    resp = self._session.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 422:
                raise SchemaViolation("request", f"{path}: {resp.text[:200]}")
            if resp.status_code >= 500 or resp.status_code == 503:
                last_error = ProviderUnavailable(f"{path}: HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ProviderUnavailable(f"{path}: HTTP {resp.status_code}")
            try:
                return resp.json()
            except (ValueError, json.JSONDecodeError) as exc:
                raise SchemaViolation("response", f"{path}: not JSON") from exc
        raise ProviderUnavailable(f"{url}: {last_error}")

    def capabilities(self) -> ProviderCapabilities:
        if self._capabilities is None:
            payload = self._request("GET", "/v1/capabilities")
            try:
                self._capabilities = ProviderCapabilities(
                    embed_dim=int(payload["embed_dim"]),
                    supports_parse=bool(payload["supports_parse"]),
                    supports_detect=bool(payload["supports_detect"]),
                    supports_segment=bool(payload["supports_segment"]),
                    supports_embed=bool(payload["supports_embed"]),
                    version=str(payload.get("version", "unknown")),
                )
            except KeyError as exc:
                raise SchemaViolation("capabilities", f"missing {exc}") from exc
            if self._capabilities.supports_embed:
                self._embed_dim = self._capabilities.embed_dim
        return self._capabilities

    def parse(self, instruction: str) -> ParsedInstruction:
        payload = self._request("POST", "/v1/parse", {"instruction": instruction})
        return validate_parse_response(json.dumps(payload))

    def detect(self, image: RasterImage, query: str) -> list[Detection]:
        payload = self._request(
            "POST", "/v1/detect", {"image_png_b64": image_b64(image), "query": query}
        )
        if "detections" not in payload or not isinstance(payload["detections"], list):
            raise SchemaViolation("detections", "missing or not a list")
        out = []
        for entry in payload["detections"]:
            try:
                box = BBox(*[float(v) for v in entry["bbox"]])
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaViolation("bbox", str(exc)) from exc
            out.append(Detection(box, float(entry["confidence"]), str(entry.get("label", query))))
        return out

    def segment(self, image: RasterImage, bbox: BBox) -> BinaryMask:
        payload = self._request(
            "POST",
            "/v1/segment",
            {"image_png_b64": image_b64(image), "bbox": list(bbox.as_tuple())},
        )
        if "mask_png_b64" not in payload:
            raise SchemaViolation("mask_png_b64", "missing")
        mask = mask_from_b64(payload["mask_png_b64"])
        return resize_mask_nearest(mask, image.width, image.height)

    def _embed(self, path: str, payload: dict) -> EmbeddingVector:
        response = self._request("POST", path, payload)
        if "vector" not in response:
            raise SchemaViolation("vector", "missing")
        vec = validate_embedding(response["vector"], self._embed_dim)
        self._embed_dim = self._embed_dim or vec.size
        return vec

    def embed_image(self, image: RasterImage) -> EmbeddingVector:
        return self._embed("/v1/embed/image", {"image_png_b64": image_b64(image)})

    def embed_text(self, text: str) -> EmbeddingVector:
        return self._embed("/v1/embed/text", {"text": text})
