"""Deterministic synthetic datasets: images, fixture trees, manifests.

These builders exist so the whole pipeline can run offline with known
outcomes. Each triplet pairs a clean original (gray background, red
rectangle) with three candidate edits of instruction "change the red box
into a blue box":

  gt  - blue rectangle at the same place: regions correct, embedding
        difference parallel to the text difference, retained pixels intact
  ep  - the original plus Gaussian noise: nothing to detect, preservation
        merely good, no embedding movement along the text direction
  em  - unrelated background with a displaced, enlarged blue rectangle:
        regions wrong, embedding difference anti-parallel, preservation poor

A separate two-sample set anti-correlates region and semantic quality so
weight sweeps have a known direction.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import (
    BBox,
    RasterImage,
    add_gaussian_noise,
    mask_from_bbox,
    save_image,
    save_mask,
)
from .harness import _entry_seed

INSTRUCTION = "change the red box to a blue box"
SOURCE_TEXT = "red box"
TARGET_TEXT = "blue box"

RED = (0.8, 0.1, 0.1)
BLUE = (0.1, 0.2, 0.9)
GRAY = (0.5, 0.5, 0.5)
MOSS = (0.15, 0.35, 0.2)

DEFAULT_DIM = 512
DEFAULT_SIZE = 64
DEFAULT_SIGMA = 0.15

PARSE_RESPONSE = {
    "source_object": SOURCE_TEXT,
    "target_object": TARGET_TEXT,
    "reference_object": None,
    "pos_st": "unchanged",
    "size_st": "unchanged",
}


def solid_image(width: int, height: int, rgb, key: str | None = None) -> RasterImage:
    px = np.empty((height, width, 3), dtype=np.float64)
    px[:, :] = rgb
    return RasterImage(px, key)


def paint_rect(img: RasterImage, box: BBox, rgb) -> RasterImage:
    x0, y0, x1, y1 = box.snapped()
    px = img.pixels.copy()
    px[y0:y1, x0:x1] = rgb
    return RasterImage(px, img.key)


def sparse_vector(parts: dict[int, float], dim: int = DEFAULT_DIM) -> list[float]:
    vec = [0.0] * dim
    for idx, val in parts.items():
        vec[idx] = val
    return vec


# Embedding design: text difference points along axis 4 - axis 3; image
# embeddings move along (gt), across (ep), or against (em) that direction.
def _embeddings(dim: int) -> dict[str, list[float]]:
    return {
        "text_source": sparse_vector({3: 1.0}, dim),
        "text_target": sparse_vector({4: 1.0}, dim),
        "crop_origin": sparse_vector({3: 0.3, 5: 0.5}, dim),
        "crop_gt": sparse_vector({4: 0.3, 5: 0.5}, dim),
        "crop_ep": sparse_vector({3: 0.3, 5: 0.5, 6: 0.2}, dim),
        "crop_em": sparse_vector({3: 0.6, 4: -0.3, 5: 0.5}, dim),
    }


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def _box_key(box: BBox) -> str:
    x0, y0, x1, y1 = box.snapped()
    return f"{x0},{y0},{x1},{y1}"


def _detection(box: BBox, mask_name: str, label: str, confidence: float = 0.9) -> dict:
    return {
        "bbox": list(box.as_tuple()),
        "confidence": confidence,
        "label": label,
        "mask": mask_name,
    }


def _write_sample_fixture(
    sample_dir: Path,
    size: int,
    origin_box: BBox,
    edit_box: BBox | None,
    edit_crop_vec: list[float],
    edit_crop_box: BBox,
    emb: dict[str, list[float]],
) -> None:
    """One candidate's fixture dir: parse, detections (+masks), embeddings.

    edit_box None means the target object is absent from the edited image.
    """
    sample_dir.mkdir(parents=True, exist_ok=True)
    _write_json(sample_dir / "parse.json", {"instruction": INSTRUCTION, "response": PARSE_RESPONSE})

    detections = {
        "origin": {SOURCE_TEXT: [_detection(origin_box, "mask_origin_0.png", SOURCE_TEXT)]},
        "edit": {TARGET_TEXT: []},
    }
    save_mask(mask_from_bbox(origin_box, size, size), sample_dir / "mask_origin_0.png")
    if edit_box is not None:
        detections["edit"][TARGET_TEXT] = [_detection(edit_box, "mask_edit_0.png", TARGET_TEXT)]
        save_mask(mask_from_bbox(edit_box, size, size), sample_dir / "mask_edit_0.png")
    _write_json(sample_dir / "detections.json", detections)

    _write_json(
        sample_dir / "embeddings.json",
        {
            "image": {
                f"origin@{_box_key(origin_box)}": emb["crop_origin"],
                f"edit@{_box_key(edit_crop_box)}": edit_crop_vec,
            },
            "text": {SOURCE_TEXT: emb["text_source"], TARGET_TEXT: emb["text_target"]},
        },
    )


def _write_manifest(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def build_gt_triplet_set(
    root,
    n: int = 50,
    size: int = DEFAULT_SIZE,
    dim: int = DEFAULT_DIM,
    sigma: float = DEFAULT_SIGMA,
    seed: int = 7,
) -> dict:
    """Write n synthetic triplets plus fixtures and manifests under root.

    Returns paths: images/, fixtures/, manifest_triplets.jsonl (one row per
    triplet, edited = gt candidate), manifest_candidates.jsonl (3n rows with
    ids <tid>__gt / <tid>__ep / <tid>__em), and the triplet id list.
    """
    root = Path(root)
    images = root / "images"
    fixtures = root / "fixtures"
    distractors = root / "distractors"
    images.mkdir(parents=True, exist_ok=True)
    fixtures.mkdir(parents=True, exist_ok=True)
    distractors.mkdir(parents=True, exist_ok=True)
    _write_json(fixtures / "provider.json", {"embed_dim": dim, "version": "synthetic"})

    emb = _embeddings(dim)
    obj = size * 3 // 8  # object side; ~14% of the image area
    step = max(1, (size - obj - 8) // max(1, n - 1))

    triplet_rows = []
    candidate_rows = []
    tids = []
    for i in range(n):
        tid = f"t{i:03d}"
        tids.append(tid)
        # slide the object along the diagonal band so samples differ
        off = 4 + (i * step) % (size - obj - 8)
        box = BBox(float(off), float(off), float(off + obj), float(off + obj))
        em_side = min(size - 2, obj + 8)
        # opposite quadrant, so the displaced box never overlaps much
        em_off = 1 if off + obj // 2 > size // 2 else size - 1 - em_side
        em_box = BBox(float(em_off), float(em_off), float(em_off + em_side), float(em_off + em_side))

        origin = paint_rect(solid_image(size, size, GRAY), box, RED)
        gt = paint_rect(solid_image(size, size, GRAY), box, BLUE)
        em = paint_rect(solid_image(size, size, MOSS), em_box, BLUE)
        ep = add_gaussian_noise(origin, sigma, _entry_seed(seed, tid))

        paths = {
            "origin": images / f"{tid}_origin.png",
            "gt": images / f"{tid}_gt.png",
            "em": distractors / f"{tid}_em.png",
            "ep": images / f"{tid}_ep.png",
        }
        save_image(origin, paths["origin"])
        save_image(gt, paths["gt"])
        save_image(em, paths["em"])
        save_image(ep, paths["ep"])

        _write_sample_fixture(
            fixtures / f"{tid}__gt", size, box, box, emb["crop_gt"], box, emb
        )
        # ep: target absent; the engine falls back to the full-image crop
        full = BBox(0.0, 0.0, float(size), float(size))
        _write_sample_fixture(
            fixtures / f"{tid}__ep", size, box, None, emb["crop_ep"], full, emb
        )
        _write_sample_fixture(
            fixtures / f"{tid}__em", size, box, em_box, emb["crop_em"], em_box, emb
        )

        triplet_rows.append(
            {
                "id": tid,
                "original_path": f"images/{tid}_origin.png",
                "edited_path": f"images/{tid}_gt.png",
                "instruction": INSTRUCTION,
            }
        )
        for tag in ("gt", "ep", "em"):
            candidate_rows.append(
                {
                    "id": f"{tid}__{tag}",
                    "original_path": f"images/{tid}_origin.png",
                    "edited_path": (
                        f"distractors/{tid}_em.png" if tag == "em" else f"images/{tid}_{tag}.png"
                    ),
                    "instruction": INSTRUCTION,
                    "model_tag": tag,
                }
            )

    manifest_triplets = root / "manifest_triplets.jsonl"
    manifest_candidates = root / "manifest_candidates.jsonl"
    _write_manifest(manifest_triplets, triplet_rows)
    _write_manifest(manifest_candidates, candidate_rows)
    return {
        "images": images,
        "fixtures": fixtures,
        "manifest_triplets": manifest_triplets,
        "manifest_candidates": manifest_candidates,
        "triplet_ids": tids,
        "distractors": distractors,  # only em images; safe as a directory pool
    }


def build_anticorrelated_pair(root, size: int = DEFAULT_SIZE, dim: int = DEFAULT_DIM) -> dict:
    """Two samples with opposite strengths, for weight-sweep direction tests.

    semantic_good: wrong region placement (moved, enlarged) but perfect
    retained pixels and an embedding difference parallel to the text
    difference. region_good: exact region match but altered background
    everywhere and an anti-parallel embedding difference.
    """
    root = Path(root)
    images = root / "images"
    fixtures = root / "fixtures"
    distractors = root / "distractors"
    images.mkdir(parents=True, exist_ok=True)
    fixtures.mkdir(parents=True, exist_ok=True)
    distractors.mkdir(parents=True, exist_ok=True)
    _write_json(fixtures / "provider.json", {"embed_dim": dim, "version": "synthetic"})

    emb = _embeddings(dim)
    obj = size * 3 // 8
    box = BBox(8.0, 8.0, float(8 + obj), float(8 + obj))
    moved_side = min(size - 2, obj + 10)
    moved = BBox(
        float(size - 1 - moved_side),
        float(size - 1 - moved_side),
        float(size - 1),
        float(size - 1),
    )

    origin = paint_rect(solid_image(size, size, GRAY), box, RED)
    # wrong place, wrong size, right look elsewhere
    semantic_edit = paint_rect(solid_image(size, size, GRAY), moved, BLUE)
    # right place, right size, background repainted
    region_edit = paint_rect(solid_image(size, size, (0.3, 0.3, 0.3)), box, BLUE)

    save_image(origin, images / "origin.png")
    save_image(semantic_edit, images / "semantic_good_edit.png")
    save_image(region_edit, images / "region_good_edit.png")

    _write_sample_fixture(
        fixtures / "semantic_good", size, box, moved, emb["crop_gt"], moved, emb
    )
    _write_sample_fixture(
        fixtures / "region_good", size, box, box, emb["crop_em"], box, emb
    )

    rows = [
        {
            "id": "semantic_good",
            "original_path": "images/origin.png",
            "edited_path": "images/semantic_good_edit.png",
            "instruction": INSTRUCTION,
        },
        {
            "id": "region_good",
            "original_path": "images/origin.png",
            "edited_path": "images/region_good_edit.png",
            "instruction": INSTRUCTION,
        },
    ]
    manifest = root / "manifest.jsonl"
    _write_manifest(manifest, rows)
    return {"images": images, "fixtures": fixtures, "manifest": manifest}
