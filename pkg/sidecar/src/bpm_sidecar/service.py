"""HTTP front of the sidecar: the /v1 perception protocol over stdlib http.server.

Endpoints are stateless; every request is decoded, dispatched to the shared
core, and answered as JSON. Schema-invalid requests get 422, capabilities
whose model failed to load get 503, oversized bodies get 413, and a bad or
missing bearer token (when one is configured) gets 401.
"""

from __future__ import annotations

import binascii
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from bpm_eval.errors import EmptyInstruction
from bpm_eval.geometry import BBox, image_from_b64

from .config import SidecarConfig
from .core import CapabilityUnavailable, ParseOutputInvalid, SidecarCore


class RequestInvalid(ValueError):
    pass


def _field(body: dict, name: str, kind) -> object:
    if name not in body:
        raise RequestInvalid(f"missing field {name!r}")
    value = body[name]
    if not isinstance(value, kind):
        raise RequestInvalid(f"field {name!r} has wrong type")
    return value


def _decode_image(body: dict):
    encoded = _field(body, "image_png_b64", str)
    try:
        return image_from_b64(encoded)
    except (binascii.Error, ValueError, OSError) as exc:
        raise RequestInvalid(f"image_png_b64 does not decode: {exc}") from exc


def _decode_bbox(body: dict) -> BBox:
    raw = _field(body, "bbox", list)
    if len(raw) != 4 or not all(isinstance(v, (int, float)) for v in raw):
        raise RequestInvalid("bbox must be [x0, y0, x1, y1]")
    try:
        return BBox(*[float(v) for v in raw])
    except ValueError as exc:
        raise RequestInvalid(str(exc)) from exc


class _Handler(BaseHTTPRequestHandler):
    core: SidecarCore  # set by the server factory
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # quiet by default; tests read responses
        pass

    def _send(self, status: int, payload: dict) -> None:
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _authorized(self) -> bool:
        token = self.core.config.token
        if token is None:
            return True
        return self.headers.get("Authorization") == f"Bearer {token}"

    def do_GET(self):
        if not self._authorized():
            return self._send(401, {"error": "unauthorized"})
        if self.path == "/v1/capabilities":
            return self._send(200, self.core.capabilities_payload())
        return self._send(404, {"error": f"no route {self.path}"})

    def do_POST(self):
        if not self._authorized():
            return self._send(401, {"error": "unauthorized"})
        length = int(self.headers.get("Content-Length", 0))
        if length > self.core.config.max_request_bytes:
            return self._send(413, {"error": "request body too large"})
        try:
            body = json.loads(self.rfile.read(length).decode("utf-8"))
            if not isinstance(body, dict):
                raise RequestInvalid("body must be a JSON object")
        except (ValueError, UnicodeDecodeError) as exc:
            return self._send(422, {"error": f"body is not valid JSON: {exc}"})

        try:
            payload = self._dispatch(body)
        except RequestInvalid as exc:
            return self._send(422, {"error": str(exc)})
        except EmptyInstruction as exc:
            return self._send(422, {"error": str(exc)})
        except CapabilityUnavailable as exc:
            return self._send(503, {"error": f"capability model failed: {exc}"})
        except ParseOutputInvalid as exc:
            return self._send(500, {"error": str(exc)})
        except Exception as exc:  # stateless service: report, never crash the thread
            return self._send(500, {"error": f"internal: {exc}"})
        if payload is None:
            return self._send(404, {"error": f"no route {self.path}"})
        return self._send(200, payload)

    def _dispatch(self, body: dict) -> dict | None:
        core = self.core
        if self.path == "/v1/parse":
            return core.parse_payload(str(_field(body, "instruction", str)))
        if self.path == "/v1/detect":
            return core.detect_payload(_decode_image(body), str(_field(body, "query", str)))
        if self.path == "/v1/segment":
            return core.segment_payload(_decode_image(body), _decode_bbox(body))
        if self.path == "/v1/embed/image":
            return core.embed_image_payload(_decode_image(body))
        if self.path == "/v1/embed/text":
            return core.embed_text_payload(str(_field(body, "text", str)))
        return None


class SidecarService:
    """Owns the listening server plus its serving thread."""

    def __init__(self, config: SidecarConfig, host: str = "127.0.0.1", port: int = 0):
        self.core = SidecarCore(config)
        handler = type("BoundHandler", (_Handler,), {"core": self.core})
        self.server = ThreadingHTTPServer((host, port), handler)
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "SidecarService":
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def wait(self) -> None:
        if self._thread is not None:
            self._thread.join()

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        if self._thread is not None:
            self._thread.join()
            self._thread = None


def serve(
    config: SidecarConfig | None = None,
    host: str = "127.0.0.1",
    port: int = 0,
    block: bool = False,
) -> SidecarService:
    """Start the service; with block=True runs until interrupted."""
    service = SidecarService(config or SidecarConfig(), host, port)
    if block:
        try:
            service.server.serve_forever()
        finally:
            service.server.server_close()
        return service
    return service.start()
