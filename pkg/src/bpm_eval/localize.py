"""Locate the edited regions in both images and apply the add/remove substitutions.

For additions the source object does not exist in the original image, so the
origin region is initialized from the edited one; for removals the edited
region is initialized from the origin one. A missing detection degrades the
sample (empty mask, full-image box, flag) instead of aborting it, except when
a replacement finds neither object.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import FixtureMiss, LocalizationFailure
from .geometry import (
    BBox,
    BinaryMask,
    RasterImage,
    empty_mask,
    full_image_bbox,
    mask_union,
    resize_mask_nearest,
)
from .parsing import ADD, REMOVE, ParsedInstruction
from .providers import Detection, PerceptionProvider

SOURCE_NOT_FOUND = "source_not_found"
TARGET_NOT_FOUND = "target_not_found"
REF_NOT_FOUND = "ref_not_found"


@dataclass(frozen=True)
class RegionPair:
    """Editing-relevant regions of one sample, in origin-image pixel space."""

    b_origin: BBox
    b_edit: BBox
    m_origin: BinaryMask
    m_edit: BinaryMask
    b_ref: BBox | None
    edit_case: str
    flags: frozenset[str] = field(default_factory=frozenset)


def select_detection(detections: list[Detection], floor: float) -> Detection | None:
    """Highest confidence at or above the floor; ties prefer larger area, then
    lexicographically smaller coordinates."""
    best = None
    for det in detections:
        if det.confidence < floor:
            continue
        if best is None:
            best = det
            continue
        key = (det.confidence, det.bbox.area, tuple(-c for c in det.bbox.as_tuple()))
        best_key = (best.confidence, best.bbox.area, tuple(-c for c in best.bbox.as_tuple()))
        if key > best_key:
            best = det
    return best


def _find_region(
    provider: PerceptionProvider,
    image: RasterImage,
    query: str,
    det_floor: float,
) -> tuple[BBox, BinaryMask] | None:
    try:
        detections = provider.detect(image, query)
    except FixtureMiss:
        return None
    best = select_detection(detections, det_floor)
    if best is None:
        return None
    box = best.bbox.clamped(image.width, image.height)
    mask = provider.segment(image, best.bbox)
    mask = resize_mask_nearest(mask, image.width, image.height)
    return box, mask


def localize(
    parsed: ParsedInstruction,
    origin: RasterImage,
    edited: RasterImage,
    provider: PerceptionProvider,
    det_floor: float = 0.25,
) -> RegionPair:
    """Detect and segment the source/target objects, then fill in corner cases."""
    width, height = origin.width, origin.height
    flags: set[str] = set()
    fallback = (full_image_bbox(width, height), empty_mask(width, height))

    if parsed.edit_case == ADD:
        found = _find_region(provider, edited, parsed.target_object, det_floor)
        if found is None:
            flags.add(TARGET_NOT_FOUND)
            found = fallback
        b_edit, m_edit = found
        b_origin, m_origin = b_edit, m_edit
    elif parsed.edit_case == REMOVE:
        found = _find_region(provider, origin, parsed.source_object, det_floor)
        if found is None:
            flags.add(SOURCE_NOT_FOUND)
            found = fallback
        b_origin, m_origin = found
        b_edit, m_edit = b_origin, m_origin
    else:
        origin_found = _find_region(provider, origin, parsed.source_object, det_floor)
        edit_found = _find_region(provider, edited, parsed.target_object, det_floor)
        if origin_found is None and edit_found is None:
            raise LocalizationFailure(
                f"neither {parsed.source_object!r} nor {parsed.target_object!r} located"
            )
        if origin_found is None:
            flags.add(SOURCE_NOT_FOUND)
            origin_found = fallback
        if edit_found is None:
            flags.add(TARGET_NOT_FOUND)
            edit_found = fallback
        b_origin, m_origin = origin_found
        b_edit, m_edit = edit_found

    b_ref = None
    if parsed.reference_object is not None:
        ref_found = _find_region(provider, edited, parsed.reference_object, det_floor)
        if ref_found is None:
            flags.add(REF_NOT_FOUND)
        else:
            b_ref = ref_found[0]

    return RegionPair(
        b_origin=b_origin,
        b_edit=b_edit,
        m_origin=m_origin,
        m_edit=m_edit,
        b_ref=b_ref,
        edit_case=parsed.edit_case,
        flags=frozenset(flags),
    )


def union_edit_mask(rp: RegionPair) -> BinaryMask:
    """All pixels intended for editing: the union of both region masks."""
    return mask_union(rp.m_origin, rp.m_edit)
