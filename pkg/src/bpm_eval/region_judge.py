"""Rule-based checks that the edited region's position and size follow the instruction.

Both judges emit a binary score plus the per-criterion booleans that produced
it, so every verdict is auditable. Corner cases: removals get full position
credit (there is no edited object to place), additions get full size credit
(there is no original size to compare against).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import SchemaViolation
from .geometry import bbox_center, bbox_iou, mask_area
from .localize import TARGET_NOT_FOUND, RegionPair
from .parsing import ADD, REMOVE, ParsedInstruction

DEGENERATE_ORIGIN_MASK = "degenerate_origin_mask"


@dataclass(frozen=True)
class JudgeConfig:
    """Thresholds for the saliency and drift checks.

    iou_tau: box-IoU saliency threshold for movement and the unchanged check.
    ortho_eps: allowed center drift on the orthogonal axis, as a fraction of
        the image extent on that axis.
    size_delta: relative area change below which a size change is not salient.
    """

    iou_tau: float = 0.5
    ortho_eps: float = 0.1
    size_delta: float = 0.1

    def __post_init__(self):
        for name in ("iou_tau", "ortho_eps", "size_delta"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise SchemaViolation(name, f"must be in (0, 1), got {v}")

    def to_dict(self) -> dict:
        return {"iou_tau": self.iou_tau, "ortho_eps": self.ortho_eps, "size_delta": self.size_delta}


@dataclass(frozen=True)
class RegionVerdict:
    s_position: int
    s_size: int
    criteria: dict[str, bool]


_POSITION_KEYS = ("position_ok", "direction_ok", "saliency_ok")
_SIZE_KEYS = ("area_ok", "size_saliency_ok")


def judge_position(
    rp: RegionPair,
    parsed: ParsedInstruction,
    image_dims: tuple[int, int],
    cfg: JudgeConfig,
) -> tuple[int, dict[str, bool]]:
    """Verify the edited object's placement against pos_st.

    The reference box is the detected reference object when one exists,
    otherwise the object's own origin box.
    """
    if rp.edit_case == REMOVE:
        # Nothing is placed; full credit.
        criteria = {k: True for k in _POSITION_KEYS}
        return 1, criteria
    if TARGET_NOT_FOUND in rp.flags:
        criteria = {k: False for k in _POSITION_KEYS}
        return 0, criteria

    width, height = image_dims
    ref_box = rp.b_ref if rp.b_ref is not None else rp.b_origin

    if parsed.pos_st == "unchanged":
        ok = bbox_iou(rp.b_edit, rp.b_origin) > cfg.iou_tau
        criteria = {"position_ok": True, "direction_ok": True, "saliency_ok": ok}
        return int(ok), criteria

    cx_e, cy_e = bbox_center(rp.b_edit)
    cx_r, cy_r = bbox_center(ref_box)
    if parsed.pos_st == "left":
        position_ok = cx_e < cx_r
        drift, extent = abs(cy_e - cy_r), height
    elif parsed.pos_st == "right":
        position_ok = cx_e > cx_r
        drift, extent = abs(cy_e - cy_r), height
    elif parsed.pos_st == "up":
        position_ok = cy_e < cy_r
        drift, extent = abs(cx_e - cx_r), width
    else:  # down
        position_ok = cy_e > cy_r
        drift, extent = abs(cx_e - cx_r), width

    direction_ok = drift <= cfg.ortho_eps * extent
    saliency_ok = bbox_iou(rp.b_edit, ref_box) < cfg.iou_tau
    criteria = {
        "position_ok": position_ok,
        "direction_ok": direction_ok,
        "saliency_ok": saliency_ok,
    }
    return int(position_ok and direction_ok and saliency_ok), criteria


def has_degenerate_origin_mask(rp: RegionPair) -> bool:
    """True when the size ratio is undefined: empty origin mask outside an add."""
    return rp.edit_case != ADD and mask_area(rp.m_origin) == 0


def judge_size(
    rp: RegionPair,
    parsed: ParsedInstruction,
    cfg: JudgeConfig,
) -> tuple[int, dict[str, bool]]:
    """Verify the mask-area change against size_st via the area ratio."""
    if rp.edit_case == ADD:
        criteria = {k: True for k in _SIZE_KEYS}
        return 1, criteria

    if has_degenerate_origin_mask(rp) or TARGET_NOT_FOUND in rp.flags:
        criteria = {k: False for k in _SIZE_KEYS}
        return 0, criteria

    ratio = mask_area(rp.m_edit) / mask_area(rp.m_origin)
    if parsed.size_st == "larger":
        area_ok = ratio > 1.0
        saliency_ok = ratio >= 1.0 + cfg.size_delta
    elif parsed.size_st == "smaller":
        area_ok = ratio < 1.0
        saliency_ok = ratio <= 1.0 - cfg.size_delta
    else:  # unchanged: saliency check only, ratio within [1-delta, 1+delta]
        area_ok = True
        saliency_ok = 1.0 - cfg.size_delta <= ratio <= 1.0 + cfg.size_delta

    criteria = {"area_ok": area_ok, "size_saliency_ok": saliency_ok}
    return int(area_ok and saliency_ok), criteria


def judge_regions(
    rp: RegionPair,
    parsed: ParsedInstruction,
    image_dims: tuple[int, int],
    cfg: JudgeConfig,
) -> RegionVerdict:
    s_position, pos_criteria = judge_position(rp, parsed, image_dims, cfg)
    s_size, size_criteria = judge_size(rp, parsed, cfg)
    return RegionVerdict(s_position, s_size, {**pos_criteria, **size_criteria})


def region_score(verdict: RegionVerdict) -> int:
    return verdict.s_position + verdict.s_size
