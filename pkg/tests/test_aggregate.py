import dataclasses
import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpm_eval.aggregate import (
    ALL_EXCLUDED,
    DEGENERATE_MASK,
    EDIT_RESIZED,
    NO_REGION,
    PARSE_FAILED,
    PROVIDER_ERROR,
    SCHEMA_VERSION,
    ScoreBreakdown,
    bpm_combine,
    evaluate_batch,
    evaluate_sample,
    finalize_batch,
    read_scores_jsonl,
    worst_case_breakdown,
    write_scores_jsonl,
)
from bpm_eval.config import EngineConfig
from bpm_eval.errors import (
    AlphaOutOfRange,
    LocalizationFailure,
    ProviderUnavailable,
    SchemaViolation,
    Unparseable,
)
from bpm_eval.geometry import BBox, RasterImage, mask_from_bbox
from bpm_eval.localize import TARGET_NOT_FOUND
from bpm_eval.parsing import ParsedInstruction
from bpm_eval.providers import Detection, ProviderCapabilities


def cfg_with(**kw):
    kw.setdefault("jobs", 2)
    return EngineConfig(**kw)


class ScriptedProvider:
    """Deterministic in-memory provider for pipeline tests."""

    def __init__(self, parses=None, detections=None, image_vecs=None, text_vecs=None, dim=4):
        self.parses = parses or {}
        self.detections = detections or {}
        self.image_vecs = image_vecs or {}
        self.text_vecs = text_vecs or {}
        self.dim = dim

    def capabilities(self):
        return ProviderCapabilities(self.dim, True, True, True, True, "scripted")

    def parse(self, instruction):
        if instruction in self.parses:
            return self.parses[instruction]
        raise Unparseable(f"no scripted parse for {instruction!r}")

    def detect(self, image, query):
        return self.detections.get((image.key, query), [])

    def segment(self, image, box):
        return mask_from_bbox(box.clamped(image.width, image.height), image.width, image.height)

    def embed_image(self, image):
        try:
            return np.asarray(self.image_vecs[image.key], dtype=np.float64)
        except KeyError:
            raise ProviderUnavailable(f"no scripted embedding for key {image.key!r}")

    def embed_text(self, text):
        try:
            return np.asarray(self.text_vecs[text], dtype=np.float64)
        except KeyError:
            raise ProviderUnavailable(f"no scripted embedding for text {text!r}")


REPLACE = ParsedInstruction("red box", "blue box", None, "unchanged", "unchanged")
INSTRUCTION = "change the red box to a blue box"
BOX = BBox(4, 4, 12, 12)


def flat(w=16, h=16, value=0.5, key=None):
    return RasterImage(np.full((h, w, 3), value), key)


def with_patch(base, box, color, key=None):
    pix = base.pixels.copy()
    x0, y0, x1, y1 = (int(v) for v in box.as_tuple())
    pix[y0:y1, x0:x1] = color
    return RasterImage(pix, key)


def perfect_provider():
    """Perfect edit: object swapped in place, crop diff parallel to text diff."""
    return ScriptedProvider(
        parses={INSTRUCTION: REPLACE},
        detections={
            ("s1/origin", "red box"): [Detection(BOX, 0.9, "red box")],
            ("s1/edit", "blue box"): [Detection(BOX, 0.9, "blue box")],
        },
        image_vecs={
            "s1/origin@4,4,12,12": [1.0, 0.0, 0.0, 0.0],
            "s1/edit@4,4,12,12": [1.0, 0.0, 0.5, 0.0],
        },
        text_vecs={
            "red box": [0.0, 1.0, 0.0, 0.0],
            "blue box": [0.0, 1.0, 1.0, 0.0],
        },
    )


def sample_pair():
    origin = with_patch(flat(), BOX, (0.8, 0.1, 0.1), key="s1/origin")
    edited = with_patch(flat(), BOX, (0.1, 0.2, 0.9), key="s1/edit")
    return origin, edited


class TestBpmCombine:
    def test_equal_components(self):
        assert bpm_combine(2.0, 2.0, 0.7) == 2.0

    def test_direct_substitution(self):
        assert bpm_combine(1.0, 0.0, 0.7) == pytest.approx(0.7, abs=1e-12)

    def test_mixed(self):
        assert bpm_combine(0.4, 1.0, 0.7) == pytest.approx(0.58, abs=1e-12)

    def test_alpha_endpoints(self):
        assert bpm_combine(1.3, 0.4, 1.0) == 1.3
        assert bpm_combine(1.3, 0.4, 0.0) == 0.4

    @pytest.mark.parametrize("alpha", [-0.01, 1.01, float("nan")])
    def test_alpha_out_of_range(self, alpha):
        with pytest.raises(AlphaOutOfRange):
            bpm_combine(1.0, 1.0, alpha)

    @given(
        s1=st.floats(min_value=0, max_value=2),
        s2=st.floats(min_value=0, max_value=2),
        r=st.floats(min_value=0, max_value=2),
        alpha=st.floats(min_value=0, max_value=1),
    )
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_semantic(self, s1, s2, r, alpha):
        lo, hi = sorted([s1, s2])
        assert bpm_combine(lo, r, alpha) <= bpm_combine(hi, r, alpha) + 1e-12


class TestEvaluateSample:
    def test_perfect_edit(self):
        origin, edited = sample_pair()
        row = evaluate_sample(origin, edited, INSTRUCTION, perfect_provider(), cfg_with())
        assert row.sample_id == "s1"
        assert (row.s_position, row.s_size, row.s_region) == (1, 1, 2)
        assert row.s_modify_raw == pytest.approx(1.0, abs=1e-9)
        assert row.s_preserve_raw == 1.0
        assert row.flags == frozenset()
        assert row.s_semantic is None and row.bpm is None  # not yet finalized

    def test_target_absent(self):
        origin, edited = sample_pair()
        provider = perfect_provider()
        del provider.detections[("s1/edit", "blue box")]
        # the fallback edit crop is the full image
        provider.image_vecs["s1/edit@0,0,16,16"] = [0.0, 0.0, 1.0, 0.0]
        row = evaluate_sample(origin, edited, INSTRUCTION, provider, cfg_with())
        assert (row.s_position, row.s_size) == (0, 0)
        assert TARGET_NOT_FOUND in row.flags

    def test_identical_images_replace(self):
        origin, _ = sample_pair()
        twin = RasterImage(origin.pixels.copy(), "s1/edit")
        provider = perfect_provider()
        provider.detections[("s1/edit", "blue box")] = [Detection(BOX, 0.9, "blue box")]
        provider.image_vecs["s1/edit@4,4,12,12"] = provider.image_vecs["s1/origin@4,4,12,12"]
        row = evaluate_sample(origin, twin, INSTRUCTION, provider, cfg_with())
        assert row.s_preserve_raw == 1.0
        assert row.s_modify_raw == 0.0  # degenerate image difference

    def test_edit_resized_flag(self):
        origin, _ = sample_pair()
        small = with_patch(flat(w=8, h=8), BBox(2, 2, 6, 6), (0.1, 0.2, 0.9), key="s1/edit")
        row = evaluate_sample(origin, small, INSTRUCTION, perfect_provider(), cfg_with())
        assert EDIT_RESIZED in row.flags

    def test_all_excluded_flag(self):
        origin, edited = sample_pair()
        provider = perfect_provider()
        full = BBox(0, 0, 16, 16)
        provider.detections[("s1/origin", "red box")] = [Detection(full, 0.9, "red box")]
        provider.detections[("s1/edit", "blue box")] = [Detection(full, 0.9, "blue box")]
        provider.image_vecs["s1/origin@0,0,16,16"] = [1.0, 0.0, 0.0, 0.0]
        provider.image_vecs["s1/edit@0,0,16,16"] = [1.0, 0.0, 0.5, 0.0]
        row = evaluate_sample(origin, edited, INSTRUCTION, provider, cfg_with())
        assert ALL_EXCLUDED in row.flags
        assert row.s_preserve_raw == 1.0

    def test_config_echo_carries_behavioral_settings(self):
        origin, edited = sample_pair()
        cfg = cfg_with(alpha=0.4, norm_mode="fixed")
        row = evaluate_sample(origin, edited, INSTRUCTION, perfect_provider(), cfg)
        assert row.config_echo["alpha"] == 0.4
        assert row.config_echo["norm_mode"] == "fixed"
        assert row.config_echo["judge"]["iou_tau"] == 0.5

    def test_criteria_breakdown_present(self):
        origin, edited = sample_pair()
        row = evaluate_sample(origin, edited, INSTRUCTION, perfect_provider(), cfg_with())
        assert set(row.criteria) == {
            "position_ok",
            "direction_ok",
            "saliency_ok",
            "area_ok",
            "size_saliency_ok",
        }


class TestWorstCase:
    def test_floor_scores(self):
        row = worst_case_breakdown("bad1", cfg_with(), NO_REGION)
        assert (row.s_position, row.s_size, row.s_region) == (0, 0, 0)
        assert row.s_modify_raw == -1.0
        assert row.s_preserve_raw == 0.0
        assert row.flags == {NO_REGION}

    def test_model_tag_carried(self):
        row = worst_case_breakdown("bad1", cfg_with(), PARSE_FAILED, model_tag="m7")
        assert row.model_tag == "m7"


class TestFinalize:
    def rows(self):
        return [
            ScoreBreakdown("a", 1, 1, 2, s_modify_raw=0.0, s_preserve_raw=0.5),
            ScoreBreakdown("b", 0, 1, 1, s_modify_raw=1.0, s_preserve_raw=1.0),
        ]

    def test_batch_mode_normalization(self):
        done = finalize_batch(self.rows(), cfg_with(alpha=0.7, norm_mode="batch"))
        a, b = done
        assert (a.s_modify_norm, a.s_preserve_norm) == (0.0, 0.0)
        assert (b.s_modify_norm, b.s_preserve_norm) == (1.0, 1.0)
        assert a.s_semantic == 0.0 and b.s_semantic == 2.0
        assert a.bpm == pytest.approx(0.7 * 0.0 + 0.3 * 2, abs=1e-12)
        assert b.bpm == pytest.approx(0.7 * 2.0 + 0.3 * 1, abs=1e-12)

    def test_fixed_mode_normalization(self):
        done = finalize_batch(self.rows(), cfg_with(alpha=0.7, norm_mode="fixed"))
        a, b = done
        assert a.s_modify_norm == pytest.approx(0.5)  # 0 on (-1,1)
        assert a.s_preserve_norm == pytest.approx(0.5)
        assert b.s_semantic == pytest.approx(2.0)

    def test_exact_mixing_identity(self):
        for row in finalize_batch(self.rows(), cfg_with(alpha=0.37)):
            assert row.bpm == 0.37 * row.s_semantic + (1 - 0.37) * row.s_region


class TestEvaluateBatch:
    def batch_samples(self, n=6):
        samples = []
        for i in range(n):
            sid = f"s{i}"
            origin, edited = sample_pair()
            samples.append(
                {
                    "id": sid,
                    "origin": origin.with_key(f"{sid}/origin"),
                    "edited": edited.with_key(f"{sid}/edit"),
                    "instruction": INSTRUCTION,
                }
            )
        return samples

    def batch_provider(self, n=6):
        p = perfect_provider()
        for i in range(n):
            sid = f"s{i}"
            p.detections[(f"{sid}/origin", "red box")] = [Detection(BOX, 0.9, "red box")]
            p.detections[(f"{sid}/edit", "blue box")] = [Detection(BOX, 0.9, "blue box")]
            p.image_vecs[f"{sid}/origin@4,4,12,12"] = [1.0, 0.0, 0.0, 0.0]
            p.image_vecs[f"{sid}/edit@4,4,12,12"] = [1.0, 0.0, 0.5, 0.0]
        return p

    def test_order_matches_manifest_with_parallel_workers(self):
        samples = self.batch_samples()
        result = evaluate_batch(samples, self.batch_provider(), cfg_with(jobs=4))
        assert [r.sample_id for r in samples_ids(result)] == [s["id"] for s in samples]
        assert not result.degraded

    def test_localization_failure_becomes_worst_row(self):
        samples = self.batch_samples(3)
        provider = self.batch_provider(3)
        del provider.detections[("s1/origin", "red box")]
        del provider.detections[("s1/edit", "blue box")]
        result = evaluate_batch(samples, provider, cfg_with(jobs=2))
        assert result.degraded
        bad = result.rows[1]
        assert bad.sample_id == "s1"
        assert NO_REGION in bad.flags
        assert bad.s_region == 0

    def test_provider_error_becomes_worst_row(self):
        samples = self.batch_samples(2)
        provider = self.batch_provider(2)
        del provider.image_vecs["s0/edit@4,4,12,12"]  # embed raises ProviderUnavailable
        result = evaluate_batch(samples, provider, cfg_with(jobs=2))
        assert result.degraded
        assert PROVIDER_ERROR in result.rows[0].flags

    def test_unparseable_becomes_worst_row(self):
        samples = self.batch_samples(2)
        samples[1]["instruction"] = "???"
        result = evaluate_batch(samples, self.batch_provider(2), cfg_with(jobs=2))
        assert result.degraded
        assert PARSE_FAILED in result.rows[1].flags

    def test_rows_are_finalized(self):
        result = evaluate_batch(self.batch_samples(2), self.batch_provider(2), cfg_with())
        for row in result.rows:
            assert row.bpm is not None
            assert row.s_semantic is not None


def samples_ids(result):
    return result.rows


class TestJsonlRoundtrip:
    def finalized_rows(self):
        rows = [
            ScoreBreakdown("a", 1, 1, 2, 0.5, 0.5, model_tag="m1"),
            ScoreBreakdown("b", 0, 0, 0, -1.0, 0.0),
        ]
        return finalize_batch(rows, cfg_with())

    def test_roundtrip(self, tmp_path):
        rows = self.finalized_rows()
        path = tmp_path / "scores.jsonl"
        write_scores_jsonl(rows, path)
        back = read_scores_jsonl(path)
        assert len(back) == 2
        assert back[0]["sample_id"] == "a"
        assert back[0]["bpm_schema"] == SCHEMA_VERSION
        assert back[0]["model_tag"] == "m1"
        assert "model_tag" not in back[1]
        assert back[0]["bpm"] == pytest.approx(rows[0].bpm)

    def test_flags_serialized_sorted(self, tmp_path):
        row = dataclasses.replace(
            self.finalized_rows()[0], flags=frozenset({"zebra", "alpha"})
        )
        path = tmp_path / "scores.jsonl"
        write_scores_jsonl([row], path)
        assert read_scores_jsonl(path)[0]["flags"] == ["alpha", "zebra"]

    def test_write_is_deterministic(self, tmp_path):
        rows = self.finalized_rows()
        p1, p2 = tmp_path / "one.jsonl", tmp_path / "two.jsonl"
        write_scores_jsonl(rows, p1)
        write_scores_jsonl(rows, p2)
        assert hashlib.sha256(p1.read_bytes()).hexdigest() == hashlib.sha256(p2.read_bytes()).hexdigest()

    def test_unknown_schema_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"bpm_schema":99,"sample_id":"x"}\n')
        with pytest.raises(SchemaViolation):
            read_scores_jsonl(path)

    def test_blank_lines_skipped(self, tmp_path):
        rows = self.finalized_rows()
        path = tmp_path / "scores.jsonl"
        write_scores_jsonl(rows, path)
        path.write_text(path.read_text() + "\n\n")
        assert len(read_scores_jsonl(path)) == 2
