"""Per-sample evaluation pipeline and score mixing.

One sample flows parse -> localize -> region judge -> raw semantic scores.
Normalization needs batch statistics, so raw breakdowns are collected first
and the normalized fields plus the final score are filled at finalize.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .errors import (
    AlphaOutOfRange,
    LocalizationFailure,
    ProviderUnavailable,
    SchemaViolation,
    Unparseable,
)
from .geometry import RasterImage, crop_by_bbox, resize_image
from .localize import localize, union_edit_mask
from .parsing import ParsedInstruction, fallback_parse
from .providers import PerceptionProvider
from .region_judge import (
    JudgeConfig,
    has_degenerate_origin_mask,
    judge_regions,
)
from .semantic_judge import (
    ALL_EXCLUDED,
    SemanticRaw,
    directional_similarity,
    normalized_components,
    preservation_score,
)

SCHEMA_VERSION = 1

# Flags for sample-level degradations beyond the localization ones.
PARSE_FAILED = "parse_failed"
PROVIDER_ERROR = "provider_error"
NO_REGION = "no_region"
DEGENERATE_MASK = "degenerate_mask"
EDIT_RESIZED = "edit_resized"

# Stand-in phrase embedded when an edit case leaves one side without an
# object (removal target, addition source).
DEFAULT_ABSENT_PHRASE = "background"

_WORST_MODIFY = -1.0
_WORST_PRESERVE = 0.0


@dataclass(frozen=True)
class ScoreBreakdown:
    """Complete audit record for one evaluated sample."""

    sample_id: str
    s_position: int
    s_size: int
    s_region: int
    s_modify_raw: float
    s_preserve_raw: float
    s_modify_norm: float | None = None
    s_preserve_norm: float | None = None
    s_semantic: float | None = None
    bpm: float | None = None
    flags: frozenset[str] = frozenset()
    config_echo: dict = field(default_factory=dict)
    criteria: dict = field(default_factory=dict)
    model_tag: str | None = None

    def to_record(self) -> dict:
        rec = {
            "bpm_schema": SCHEMA_VERSION,
            "sample_id": self.sample_id,
            "s_position": self.s_position,
            "s_size": self.s_size,
            "s_region": self.s_region,
            "s_modify_raw": self.s_modify_raw,
            "s_preserve_raw": self.s_preserve_raw,
            "s_modify_norm": self.s_modify_norm,
            "s_preserve_norm": self.s_preserve_norm,
            "s_semantic": self.s_semantic,
            "bpm": self.bpm,
            "flags": sorted(self.flags),
            "criteria": self.criteria,
            "config_echo": self.config_echo,
        }
        if self.model_tag is not None:
            rec["model_tag"] = self.model_tag
        return rec


def bpm_combine(s_semantic: float, s_region: float, alpha: float) -> float:
    """Mix the two component scores: alpha weighs the semantic side."""
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must be in [0, 1], got {alpha}")
    return alpha * s_semantic + (1.0 - alpha) * s_region


def _config_echo(cfg) -> dict:
    return {
        "alpha": cfg.alpha,
        "norm_mode": cfg.norm_mode,
        "det_floor": cfg.det_floor,
        "judge": cfg.judge.to_dict(),
    }


def _parse_instruction(instruction: str, provider: PerceptionProvider) -> ParsedInstruction:
    if provider.capabilities().supports_parse:
        return provider.parse(instruction)
    return fallback_parse(instruction)


def evaluate_sample(
    origin: RasterImage,
    edited: RasterImage,
    instruction: str,
    provider: PerceptionProvider,
    cfg,
    sample_id: str | None = None,
    model_tag: str | None = None,
) -> ScoreBreakdown:
    """Score one origin/edited pair. Normalized fields stay unset here.

    Degradations (missed detections, degenerate masks, fully-excluded
    preservation) are flagged, not raised; only provider transport failures
    and unlocalizable replace cases propagate, and batch runners convert
    those to worst-case rows.
    """
    if sample_id is None:
        sample_id = origin.key.split("/", 1)[0] if origin.key else "sample"
    flags: set[str] = set()

    if (edited.width, edited.height) != (origin.width, origin.height):
        edited = resize_image(edited, origin.width, origin.height)
        flags.add(EDIT_RESIZED)

    parsed = _parse_instruction(instruction, provider)
    rp = localize(parsed, origin, edited, provider, det_floor=cfg.det_floor)
    flags |= rp.flags
    if has_degenerate_origin_mask(rp):
        flags.add(DEGENERATE_MASK)

    verdict = judge_regions(rp, parsed, (origin.width, origin.height), cfg.judge)

    # Modification: directional similarity between crop-difference and
    # text-difference embeddings.
    source_text = parsed.source_object or cfg.absent_phrase
    target_text = parsed.target_object or cfg.absent_phrase
    crop_origin = crop_by_bbox(origin, rp.b_origin)
    crop_edit = crop_by_bbox(edited, rp.b_edit)
    s_modify_raw = directional_similarity(
        provider.embed_image(crop_origin),
        provider.embed_image(crop_edit),
        provider.embed_text(source_text),
        provider.embed_text(target_text),
    )

    # Preservation: everything either mask touches is off-limits.
    excluded = union_edit_mask(rp)
    if bool(excluded.bits.all()):
        flags.add(ALL_EXCLUDED)
    s_preserve_raw = preservation_score(origin, edited, excluded)

    return ScoreBreakdown(
        sample_id=sample_id,
        s_position=verdict.s_position,
        s_size=verdict.s_size,
        s_region=verdict.s_position + verdict.s_size,
        s_modify_raw=s_modify_raw,
        s_preserve_raw=s_preserve_raw,
        flags=frozenset(flags),
        config_echo=_config_echo(cfg),
        criteria=dict(verdict.criteria),
        model_tag=model_tag,
    )


def worst_case_breakdown(
    sample_id: str,
    cfg,
    reason_flag: str,
    model_tag: str | None = None,
) -> ScoreBreakdown:
    """Floor-scored row for a sample the pipeline could not evaluate."""
    return ScoreBreakdown(
        sample_id=sample_id,
        s_position=0,
        s_size=0,
        s_region=0,
        s_modify_raw=_WORST_MODIFY,
        s_preserve_raw=_WORST_PRESERVE,
        flags=frozenset({reason_flag}),
        config_echo=_config_echo(cfg),
        model_tag=model_tag,
    )


def finalize_batch(rows: list[ScoreBreakdown], cfg) -> list[ScoreBreakdown]:
    """Fill normalized fields and the final score across the whole batch."""
    raws = [SemanticRaw(r.s_modify_raw, r.s_preserve_raw) for r in rows]
    preserve_norm, modify_norm = normalized_components(raws, cfg.norm_mode)
    out = []
    for row, p, m in zip(rows, preserve_norm, modify_norm):
        s_semantic = p + m
        out.append(
            replace(
                row,
                s_preserve_norm=p,
                s_modify_norm=m,
                s_semantic=s_semantic,
                bpm=bpm_combine(s_semantic, float(row.s_region), cfg.alpha),
            )
        )
    return out


@dataclass(frozen=True)
class BatchResult:
    rows: list[ScoreBreakdown]
    degraded: bool  # any sample fell back to a worst-case row


def evaluate_batch(samples: list[dict], provider: PerceptionProvider, cfg) -> BatchResult:
    """Evaluate manifest entries in order; parallel workers, ordered output.

    Each entry needs origin/edited RasterImages (keys set), instruction, id,
    and optionally model_tag.
    """
    degraded = False

    def run(entry: dict) -> ScoreBreakdown:
        return evaluate_sample(
            entry["origin"],
            entry["edited"],
            entry["instruction"],
            provider,
            cfg,
            sample_id=entry["id"],
            model_tag=entry.get("model_tag"),
        )

    rows: list[ScoreBreakdown] = []
    with ThreadPoolExecutor(max_workers=max(1, cfg.jobs)) as pool:
        futures = [pool.submit(run, entry) for entry in samples]
        for entry, fut in zip(samples, futures):
            try:
                rows.append(fut.result())
            except (LocalizationFailure, ProviderUnavailable, Unparseable, SchemaViolation) as exc:
                degraded = True
                flag = PROVIDER_ERROR if isinstance(exc, ProviderUnavailable) else (
                    NO_REGION if isinstance(exc, LocalizationFailure) else PARSE_FAILED
                )
                rows.append(
                    worst_case_breakdown(entry["id"], cfg, flag, entry.get("model_tag"))
                )
    return BatchResult(finalize_batch(rows, cfg), degraded)


def write_scores_jsonl(rows: list[ScoreBreakdown], path) -> None:
    """Serialize rows deterministically: sorted keys, minimal separators."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row.to_record(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_scores_jsonl(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("bpm_schema") != SCHEMA_VERSION:
                raise SchemaViolation("bpm_schema", f"unsupported version {rec.get('bpm_schema')}")
            rows.append(rec)
    return rows
