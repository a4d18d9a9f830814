"""Benchmark procedures: human-alignment, ground-truth triplets, correlation.

Everything here is pure bookkeeping over score and annotation files; the
only image operation is constructing the over-preserved candidate by
noising the original.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateVariance,
    EmptyInput,
    IdSetMismatch,
    MissingDistractor,
    NoComparablePairs,
    SchemaViolation,
)
from .geometry import add_gaussian_noise, load_image, save_image

TIES_EXCLUDE = "exclude"
TIES_DISAGREE = "count-as-disagreement"

HUMAN_FIELDS = ("overall", "preservation", "modification", "size", "position")


@dataclass(frozen=True)
class SampleManifestEntry:
    id: str
    original_path: str
    edited_path: str
    instruction: str
    model_tag: str = ""
    human: dict | None = None

    def __post_init__(self):
        if self.human is None:
            return
        for k, v in self.human.items():
            if k not in HUMAN_FIELDS:
                raise SchemaViolation("human", f"unknown rating field {k!r}")
            if not isinstance(v, int) or not 1 <= v <= 5:
                raise SchemaViolation("human", f"{k} must be an integer 1-5, got {v!r}")


@dataclass(frozen=True)
class Triplet:
    id: str
    original_path: str
    instruction: str
    gt_path: str
    over_preserved_path: str
    over_modified_path: str

    def __post_init__(self):
        candidates = {self.gt_path, self.over_preserved_path, self.over_modified_path}
        if len(candidates) != 3:
            raise SchemaViolation("triplet", f"candidates must be distinct for {self.id}")


def load_manifest(path, check_paths: bool = True) -> list[SampleManifestEntry]:
    entries = []
    base = Path(path).parent
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation("manifest", f"line {ln}: invalid JSON ({exc})") from exc
            for req in ("id", "original_path", "edited_path", "instruction"):
                if req not in rec:
                    raise SchemaViolation("manifest", f"line {ln}: missing {req!r}")
            entry = SampleManifestEntry(
                id=str(rec["id"]),
                original_path=str(base / rec["original_path"]),
                edited_path=str(base / rec["edited_path"]),
                instruction=rec["instruction"],
                model_tag=rec.get("model_tag", ""),
                human=rec.get("human"),
            )
            if check_paths:
                for p in (entry.original_path, entry.edited_path):
                    if not Path(p).is_file():
                        raise SchemaViolation("manifest", f"line {ln}: no such file {p}")
            entries.append(entry)
    return entries


def pairwise_alignment(
    scores_a: dict[str, float],
    scores_b: dict[str, float],
    human_a: dict[str, float],
    human_b: dict[str, float],
    ties: str = TIES_EXCLUDE,
) -> float:
    """Fraction of samples where the metric's strict preference matches the
    human's strict preference.

    Metric ties count as "not greater". Human ties are excluded by default;
    with ties="count-as-disagreement" they stay in and count against.
    """
    ids = set(scores_a)
    for other in (scores_b, human_a, human_b):
        if set(other) != ids:
            raise IdSetMismatch(
                f"sample-id sets differ: {sorted(ids ^ set(other))[:5]} ..."
            )
    if ties not in (TIES_EXCLUDE, TIES_DISAGREE):
        raise ValueError(f"unknown tie policy {ties!r}")

    agree = 0
    total = 0
    for sid in ids:
        h_tie = human_a[sid] == human_b[sid]
        if h_tie and ties == TIES_EXCLUDE:
            continue
        total += 1
        if h_tie:
            continue  # counts as disagreement: strict metric pref cannot match a tie
        m_pref = scores_a[sid] > scores_b[sid]
        h_pref = human_a[sid] > human_b[sid]
        if m_pref == h_pref:
            agree += 1
    if total == 0:
        raise NoComparablePairs("every pair was a human tie")
    return agree / total


def gt_favoring(
    triplet_scores: list[tuple[float, float, float]],
) -> tuple[float, float, float]:
    """Winning rates (over_preserved, over_modified, gt) across triplets.

    Input tuples are (gt, over_preserved, over_modified). The per-triplet
    winner is the argmax; on ties the later candidate in scan order
    over_preserved, over_modified, gt wins, so gt takes any tie it is in.
    Rational arithmetic keeps the proportions summing to exactly 1.
    """
    if not triplet_scores:
        raise EmptyInput("no triplets")
    wins = [0, 0, 0]  # ep, em, gt
    for gt, ep, em in triplet_scores:
        best, best_val = 0, ep
        if em >= best_val:
            best, best_val = 1, em
        if gt >= best_val:
            best = 2
        wins[best] += 1
    n = len(triplet_scores)
    fracs = [Fraction(w, n) for w in wins]
    assert sum(fracs) == 1
    return tuple(float(f) for f in fracs)


def pearson_correlation(metric: list[float], human: list[float]) -> float:
    """Sample Pearson r between two equal-length score lists."""
    if len(metric) != len(human):
        raise IdSetMismatch(f"length mismatch: {len(metric)} vs {len(human)}")
    if len(metric) < 2:
        raise DegenerateVariance("need at least two points")
    x = np.asarray(metric, dtype=np.float64)
    y = np.asarray(human, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt(np.sum(xc * xc)))
    sy = float(np.sqrt(np.sum(yc * yc)))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateVariance("an input has zero variance")
    r = float(np.sum(xc * yc) / (sx * sy))
    return min(1.0, max(-1.0, r))


def _entry_seed(base_seed: int, sample_id: str) -> int:
    # stable across manifest reordering
    return (base_seed << 32) ^ zlib.crc32(sample_id.encode("utf-8"))


def build_gt_triplets(
    manifest: list[SampleManifestEntry],
    sigma: float,
    seed: int,
    distractor_source,
    out_dir,
) -> list[Triplet]:
    """Assemble (gt, over_preserved, over_modified) candidates per entry.

    The entry's edited image is taken as ground truth. The over-preserved
    candidate is written to out_dir as the noised original; the over-modified
    candidate is drawn from distractor_source (a directory of images or an
    explicit path list) in sorted order, one per entry.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if isinstance(distractor_source, (str, Path)):
        src = Path(distractor_source)
        distractors = sorted(p for p in src.glob("*.png")) if src.is_dir() else []
    else:
        distractors = [Path(p) for p in distractor_source]
    if len(distractors) < len(manifest):
        raise MissingDistractor(
            f"need {len(manifest)} distractor images, found {len(distractors)}"
        )

    triplets = []
    for entry, distractor in zip(manifest, distractors):
        original = load_image(entry.original_path)
        ep = add_gaussian_noise(original, sigma, _entry_seed(seed, entry.id))
        ep_path = out / f"{entry.id}_over_preserved.png"
        save_image(ep, ep_path)
        triplets.append(
            Triplet(
                id=entry.id,
                original_path=entry.original_path,
                instruction=entry.instruction,
                gt_path=entry.edited_path,
                over_preserved_path=str(ep_path),
                over_modified_path=str(distractor),
            )
        )
    return triplets


def mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else float("nan")


def emit_report(
    score_files: dict[str, str],
    alignment_rows: list[dict],
    favoring_rows: list[dict],
    out_path,
    svg: bool = False,
) -> None:
    """Write a markdown summary of score files plus harness comparisons.

    score_files maps a display label to a scores-JSONL path. alignment_rows
    and favoring_rows are pre-computed dicts (see the align / gt-test
    commands); either may be empty.
    """
    from .aggregate import read_scores_jsonl

    lines = ["# Evaluation report", ""]

    lines.append("## Score summaries")
    lines.append("")
    lines.append("| run | samples | mean bpm | mean s_region | mean s_semantic | flagged |")
    lines.append("|---|---|---|---|---|---|")
    means_for_chart = []
    for label in sorted(score_files):
        rows = read_scores_jsonl(score_files[label])
        n = len(rows)
        mb = mean([r["bpm"] for r in rows if r["bpm"] is not None])
        mr = mean([float(r["s_region"]) for r in rows])
        ms = mean([r["s_semantic"] for r in rows if r["s_semantic"] is not None])
        flagged = sum(1 for r in rows if r.get("flags"))
        lines.append(f"| {label} | {n} | {mb:.4f} | {mr:.4f} | {ms:.4f} | {flagged} |")
        means_for_chart.append((label, mb))
    lines.append("")

    if alignment_rows:
        lines.append("## Human alignment")
        lines.append("")
        lines.append("| comparison | dimension | alignment | pairs | tie policy |")
        lines.append("|---|---|---|---|---|")
        for row in alignment_rows:
            lines.append(
                f"| {row['comparison']} | {row['dimension']} | {row['alignment']:.4f} "
                f"| {row['pairs']} | {row['ties']} |"
            )
        lines.append("")

    if favoring_rows:
        lines.append("## Ground-truth favoring")
        lines.append("")
        lines.append("| run | over_preserved | over_modified | gt |")
        lines.append("|---|---|---|---|")
        for row in favoring_rows:
            lines.append(
                f"| {row['run']} | {row['p_ep']:.4f} | {row['p_em']:.4f} | {row['p_gt']:.4f} |"
            )
        lines.append("")

    if svg and means_for_chart:
        lines.append("## Mean score chart")
        lines.append("")
        lines.append(_bar_chart_svg(means_for_chart))
        lines.append("")

    Path(out_path).write_text("\n".join(lines), encoding="utf-8")


def _bar_chart_svg(pairs: list[tuple[str, float]]) -> str:
    """Minimal inline SVG bar chart of (label, value) pairs, values in [0,2]."""
    bar_w, gap, h = 60, 20, 140
    width = gap + len(pairs) * (bar_w + gap)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{h + 30}">'
    ]
    for i, (label, value) in enumerate(pairs):
        x = gap + i * (bar_w + gap)
        bh = 0 if not np.isfinite(value) else int(round(h * min(2.0, max(0.0, value)) / 2.0))
        y = h - bh
        parts.append(
            f'<rect x="{x}" y="{y}" width="{bar_w}" height="{bh}" fill="#4a90d9"/>'
        )
        parts.append(
            f'<text x="{x + bar_w // 2}" y="{h + 15}" font-size="10" '
            f'text-anchor="middle">{label}</text>'
        )
        parts.append(
            f'<text x="{x + bar_w // 2}" y="{max(10, y - 4)}" font-size="10" '
            f'text-anchor="middle">{value:.2f}</text>'
        )
    parts.append("</svg>")
    return "".join(parts)
