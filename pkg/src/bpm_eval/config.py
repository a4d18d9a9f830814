"""Engine configuration: defaults, JSON config file, environment, flags.

Precedence, lowest to highest: built-in defaults, BPM_PROVIDER_URL
environment variable (provider locator only), config file, command-line
flags.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

from .errors import SchemaViolation
from .region_judge import JudgeConfig

ENV_PROVIDER_URL = "BPM_PROVIDER_URL"

NORM_MODES = ("batch", "fixed")
PROVIDER_KINDS = ("fixtures", "http")


@dataclass(frozen=True)
class ProviderSpec:
    kind: str
    locator: str

    def __post_init__(self):
        if self.kind not in PROVIDER_KINDS:
            raise SchemaViolation("provider.kind", f"unknown kind {self.kind!r}")
        if not self.locator:
            raise SchemaViolation("provider.locator", "empty locator")


def parse_provider_spec(text: str) -> ProviderSpec:
    """Accepts "fixtures:PATH", "http:URL", or a bare http(s) URL."""
    if text.startswith(("http://", "https://")):
        return ProviderSpec("http", text)
    kind, sep, locator = text.partition(":")
    if not sep:
        raise SchemaViolation("provider", f"expected kind:locator, got {text!r}")
    return ProviderSpec(kind, locator)


@dataclass(frozen=True)
class EngineConfig:
    alpha: float = 0.7
    judge: JudgeConfig = field(default_factory=JudgeConfig)
    norm_mode: str = "batch"
    det_floor: float = 0.25
    provider: ProviderSpec | None = None
    jobs: int = field(default_factory=lambda: os.cpu_count() or 1)
    absent_phrase: str = "background"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise SchemaViolation("alpha", f"must be in [0, 1], got {self.alpha}")
        if self.norm_mode not in NORM_MODES:
            raise SchemaViolation("norm_mode", f"must be one of {NORM_MODES}")
        if not 0.0 <= self.det_floor <= 1.0:
            raise SchemaViolation("det_floor", f"must be in [0, 1], got {self.det_floor}")
        if self.jobs < 1:
            raise SchemaViolation("jobs", "must be >= 1")
        if not self.absent_phrase:
            raise SchemaViolation("absent_phrase", "must be non-empty")

    def to_dict(self) -> dict:
        d = {
            "alpha": self.alpha,
            "judge": self.judge.to_dict(),
            "norm_mode": self.norm_mode,
            "det_floor": self.det_floor,
            "jobs": self.jobs,
            "absent_phrase": self.absent_phrase,
        }
        if self.provider is not None:
            d["provider"] = {"kind": self.provider.kind, "locator": self.provider.locator}
        return d


def _config_from_dict(data: dict, base: EngineConfig) -> EngineConfig:
    known = {
        "alpha", "judge", "norm_mode", "det_floor", "provider", "jobs", "absent_phrase",
    }
    unknown = set(data) - known
    if unknown:
        raise SchemaViolation("config", f"unknown keys {sorted(unknown)}")

    updates: dict = {}
    if "alpha" in data:
        updates["alpha"] = float(data["alpha"])
    if "judge" in data:
        j = data["judge"]
        if not isinstance(j, dict):
            raise SchemaViolation("judge", "must be an object")
        updates["judge"] = JudgeConfig(
            iou_tau=float(j.get("iou_tau", base.judge.iou_tau)),
            ortho_eps=float(j.get("ortho_eps", base.judge.ortho_eps)),
            size_delta=float(j.get("size_delta", base.judge.size_delta)),
        )
    if "norm_mode" in data:
        updates["norm_mode"] = data["norm_mode"]
    if "det_floor" in data:
        updates["det_floor"] = float(data["det_floor"])
    if "provider" in data:
        p = data["provider"]
        if isinstance(p, str):
            updates["provider"] = parse_provider_spec(p)
        elif isinstance(p, dict) and "kind" in p and "locator" in p:
            updates["provider"] = ProviderSpec(p["kind"], p["locator"])
        else:
            raise SchemaViolation("provider", "expected string or {kind, locator}")
    if "jobs" in data:
        updates["jobs"] = int(data["jobs"])
    if "absent_phrase" in data:
        updates["absent_phrase"] = data["absent_phrase"]
    return replace(base, **updates)


def load_config(
    config_path: str | None = None,
    provider_flag: str | None = None,
    alpha_flag: float | None = None,
    jobs_flag: int | None = None,
    norm_mode_flag: str | None = None,
    env: dict | None = None,
) -> EngineConfig:
    """Resolve the effective configuration from all sources."""
    env = os.environ if env is None else env
    cfg = EngineConfig()

    url = env.get(ENV_PROVIDER_URL)
    if url:
        cfg = replace(cfg, provider=parse_provider_spec(url))

    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaViolation("config", f"cannot load {config_path}: {exc}") from exc
        if not isinstance(data, dict):
            raise SchemaViolation("config", "top level must be an object")
        cfg = _config_from_dict(data, cfg)

    if provider_flag:
        cfg = replace(cfg, provider=parse_provider_spec(provider_flag))
    if alpha_flag is not None:
        cfg = replace(cfg, alpha=alpha_flag)
    if jobs_flag is not None:
        cfg = replace(cfg, jobs=jobs_flag)
    if norm_mode_flag is not None:
        cfg = replace(cfg, norm_mode=norm_mode_flag)
    return cfg
