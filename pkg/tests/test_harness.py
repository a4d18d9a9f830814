import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpm_eval.errors import (
    DegenerateVariance,
    EmptyInput,
    IdSetMismatch,
    MissingDistractor,
    NoComparablePairs,
    SchemaViolation,
)
from bpm_eval.geometry import RasterImage, load_image, save_image
from bpm_eval.harness import (
    TIES_DISAGREE,
    TIES_EXCLUDE,
    SampleManifestEntry,
    build_gt_triplets,
    emit_report,
    gt_favoring,
    load_manifest,
    pairwise_alignment,
    pearson_correlation,
)

DATA = Path(__file__).parent / "data"


def by_id(values):
    return {f"s{i}": v for i, v in enumerate(values)}


class TestPairwiseAlignment:
    def test_full_agreement(self):
        scores_a = by_id([0.9] * 10)
        scores_b = by_id([0.1] * 10)
        human_a = by_id([5] * 10)
        human_b = by_id([2] * 10)
        assert pairwise_alignment(scores_a, scores_b, human_a, human_b) == 1.0

    def test_two_of_three(self):
        # human prefers (A, B, A); metric prefers (A, A, A)
        scores_a = by_id([0.9, 0.9, 0.9])
        scores_b = by_id([0.1, 0.1, 0.1])
        human_a = by_id([5, 2, 5])
        human_b = by_id([2, 5, 2])
        got = pairwise_alignment(scores_a, scores_b, human_a, human_b)
        assert got == pytest.approx(2 / 3, abs=1e-12)

    def test_all_human_ties(self):
        s = by_id([0.5, 0.6])
        h = by_id([3, 3])
        with pytest.raises(NoComparablePairs):
            pairwise_alignment(s, s, h, h)

    def test_tie_exclusion_shrinks_denominator(self):
        scores_a = by_id([0.9, 0.9])
        scores_b = by_id([0.1, 0.1])
        human_a = by_id([5, 3])
        human_b = by_id([2, 3])  # second pair tied, dropped
        got = pairwise_alignment(scores_a, scores_b, human_a, human_b, ties=TIES_EXCLUDE)
        assert got == 1.0

    def test_ties_count_as_disagreement_policy(self):
        scores_a = by_id([0.9, 0.9])
        scores_b = by_id([0.1, 0.1])
        human_a = by_id([5, 3])
        human_b = by_id([2, 3])
        got = pairwise_alignment(scores_a, scores_b, human_a, human_b, ties=TIES_DISAGREE)
        assert got == 0.5

    def test_metric_tie_counts_as_not_greater(self):
        # metric ties, human prefers A: indicator 0 vs 1 -> disagreement;
        # human prefers B: indicator 0 vs 0 -> agreement
        scores_a = by_id([0.5, 0.5])
        scores_b = by_id([0.5, 0.5])
        human_a = by_id([5, 2])
        human_b = by_id([2, 5])
        got = pairwise_alignment(scores_a, scores_b, human_a, human_b)
        assert got == 0.5

    def test_id_set_mismatch(self):
        with pytest.raises(IdSetMismatch):
            pairwise_alignment({"a": 1.0}, {"b": 1.0}, {"a": 1}, {"a": 2})

    def test_unknown_tie_policy(self):
        s, h = by_id([0.5]), by_id([3])
        with pytest.raises(ValueError):
            pairwise_alignment(s, s, h, h, ties="coin-flip")

    def test_bundled_fixture_alignment(self):
        # frozen fixture: metric contradicts the human preference on s3 and s7
        from bpm_eval.aggregate import read_scores_jsonl

        rows_a = {r["sample_id"]: r["bpm"] for r in read_scores_jsonl(DATA / "align_scores_a.jsonl")}
        rows_b = {r["sample_id"]: r["bpm"] for r in read_scores_jsonl(DATA / "align_scores_b.jsonl")}
        human_a, human_b = {}, {}
        with open(DATA / "align_human.jsonl") as fh:
            for line in fh:
                rec = json.loads(line)
                human_a[rec["id"]] = rec["a"]["overall"]
                human_b[rec["id"]] = rec["b"]["overall"]
        got = pairwise_alignment(rows_a, rows_b, human_a, human_b)
        assert got == pytest.approx(0.8, abs=1e-12)


class TestGtFavoring:
    def test_gt_sweeps(self):
        rates = gt_favoring([(0.9, 0.2, 0.1)] * 10)
        assert rates == (0.0, 0.0, 1.0)

    def test_half_split(self):
        rows = [(0.9, 0.5, 0.1)] * 5 + [(0.4, 0.8, 0.2)] * 5
        assert gt_favoring(rows) == (0.5, 0.0, 0.5)

    def test_bundled_fixture(self):
        rows = [tuple(r) for r in json.loads((DATA / "favoring_triplets.json").read_text())]
        assert gt_favoring(rows) == (0.5, 0.0, 0.5)

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            gt_favoring([])

    def test_tie_goes_to_gt(self):
        assert gt_favoring([(0.5, 0.5, 0.5)]) == (0.0, 0.0, 1.0)

    def test_em_beats_ep_on_tie(self):
        # gt strictly lower; ep == em, later candidate in scan order wins
        assert gt_favoring([(0.1, 0.5, 0.5)]) == (0.0, 1.0, 0.0)

    def test_proportions_are_exact_rationals(self):
        rows = [(0.9, 0.1, 0.2)] * 1 + [(0.1, 0.9, 0.2)] * 2
        p_ep, p_em, p_gt = gt_favoring(rows)
        assert p_ep == float(Fraction(2, 3))
        assert p_gt == float(Fraction(1, 3))

    @given(
        st.lists(
            st.tuples(
                st.floats(min_value=0, max_value=2),
                st.floats(min_value=0, max_value=2),
                st.floats(min_value=0, max_value=2),
            ),
            min_size=1,
            max_size=40,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_sums_to_one(self, rows):
        p_ep, p_em, p_gt = gt_favoring(rows)
        assert p_ep >= 0 and p_em >= 0 and p_gt >= 0
        assert p_ep + p_em + p_gt == pytest.approx(1.0, abs=1e-12)


def pearson_oracle(xs, ys):
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / n
    sx = (sum((x - mx) ** 2 for x in xs) / n) ** 0.5
    sy = (sum((y - my) ** 2 for y in ys) / n) ** 0.5
    return cov / (sx * sy)


class TestPearson:
    def test_identity(self):
        xs = [1.0, 2.0, 5.0, 3.0]
        assert pearson_correlation(xs, xs) == pytest.approx(1.0, abs=1e-12)

    def test_negation(self):
        xs = [1.0, 2.0, 5.0, 3.0]
        assert pearson_correlation(xs, [-x for x in xs]) == pytest.approx(-1.0, abs=1e-12)

    def test_fixed_lists_against_formula(self):
        xs = [0.58, 1.2, 1.9, 0.3, 1.1]
        ys = [2.0, 3.0, 5.0, 1.0, 4.0]
        assert pearson_correlation(xs, ys) == pytest.approx(pearson_oracle(xs, ys), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(IdSetMismatch):
            pearson_correlation([1.0, 2.0], [1.0])

    def test_too_short(self):
        with pytest.raises(DegenerateVariance):
            pearson_correlation([1.0], [2.0])

    def test_zero_variance(self):
        with pytest.raises(DegenerateVariance):
            pearson_correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    @given(
        st.lists(st.integers(min_value=-1000, max_value=1000), min_size=3, max_size=20),
        st.floats(min_value=0.1, max_value=10),
        st.floats(min_value=-50, max_value=50),
    )
    @settings(max_examples=150, deadline=None)
    def test_positive_affine_invariance(self, raw, scale, shift):
        # integer-derived grid keeps values well separated under the transform
        xs = [v / 10.0 for v in raw]
        if len(set(xs)) < 2:
            return
        ys = [2.0 * x + 1.0 for x in xs]
        base = pearson_correlation(xs, ys)
        transformed = pearson_correlation([scale * x + shift for x in xs], ys)
        assert transformed == pytest.approx(base, abs=1e-6)


def write_png(path, rng, w=16, h=16):
    save_image(RasterImage(rng.random((h, w, 3))), path)


@pytest.fixture
def small_manifest(tmp_path):
    rng = np.random.default_rng(3)
    rows = []
    for i in range(4):
        orig = tmp_path / f"o{i}.png"
        edit = tmp_path / f"e{i}.png"
        write_png(orig, rng)
        write_png(edit, rng)
        rows.append(
            {
                "id": f"t{i}",
                "original_path": orig.name,
                "edited_path": edit.name,
                "instruction": "make the sky bluer",
            }
        )
    mpath = tmp_path / "manifest.jsonl"
    mpath.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return mpath


class TestLoadManifest:
    def test_happy_path_resolves_relative(self, small_manifest):
        entries = load_manifest(small_manifest)
        assert len(entries) == 4
        assert Path(entries[0].original_path).is_absolute()
        assert Path(entries[0].original_path).exists()

    def test_missing_file_rejected(self, small_manifest, tmp_path):
        (tmp_path / "o0.png").unlink()
        with pytest.raises(SchemaViolation):
            load_manifest(small_manifest)
        load_manifest(small_manifest, check_paths=False)  # opt-out for dry runs

    def test_missing_required_field(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text(json.dumps({"id": "x", "original_path": "a.png"}) + "\n")
        with pytest.raises(SchemaViolation):
            load_manifest(p, check_paths=False)

    def test_human_scores_validated(self, tmp_path):
        p = tmp_path / "m.jsonl"
        rec = {
            "id": "x",
            "original_path": "a.png",
            "edited_path": "b.png",
            "instruction": "i",
            "human": {"overall": 9},
        }
        p.write_text(json.dumps(rec) + "\n")
        with pytest.raises(SchemaViolation):
            load_manifest(p, check_paths=False)

    def test_human_scores_accepted(self, tmp_path):
        p = tmp_path / "m.jsonl"
        rec = {
            "id": "x",
            "original_path": "a.png",
            "edited_path": "b.png",
            "instruction": "i",
            "human": {"overall": 4, "preservation": 1},
        }
        p.write_text(json.dumps(rec) + "\n")
        entries = load_manifest(p, check_paths=False)
        assert entries[0].human["overall"] == 4


class TestBuildGtTriplets:
    def distractors(self, tmp_path, n=4):
        rng = np.random.default_rng(9)
        paths = []
        for i in range(n):
            p = tmp_path / f"d{i}.png"
            write_png(p, rng)
            paths.append(p)
        return paths

    def test_counts_and_paths(self, small_manifest, tmp_path):
        entries = load_manifest(small_manifest)
        out = tmp_path / "triplets"
        trips = build_gt_triplets(entries, 0.15, 7, self.distractors(tmp_path), out)
        assert len(trips) == 4
        for t in trips:
            assert Path(t.over_preserved_path).exists()
            assert Path(t.over_modified_path).exists()
            assert t.gt_path == entries[0].edited_path or Path(t.gt_path).exists()

    def test_deterministic_ep_bytes(self, small_manifest, tmp_path):
        entries = load_manifest(small_manifest)
        d = self.distractors(tmp_path)
        t1 = build_gt_triplets(entries, 0.15, 7, d, tmp_path / "r1")
        t2 = build_gt_triplets(entries, 0.15, 7, d, tmp_path / "r2")
        for a, b in zip(t1, t2):
            assert Path(a.over_preserved_path).read_bytes() == Path(b.over_preserved_path).read_bytes()

    def test_different_seed_changes_ep(self, small_manifest, tmp_path):
        entries = load_manifest(small_manifest)
        d = self.distractors(tmp_path)
        t1 = build_gt_triplets(entries, 0.15, 7, d, tmp_path / "r1")
        t2 = build_gt_triplets(entries, 0.15, 8, d, tmp_path / "r2")
        assert Path(t1[0].over_preserved_path).read_bytes() != Path(t2[0].over_preserved_path).read_bytes()

    def test_sigma_zero_ep_identical_to_original(self, small_manifest, tmp_path):
        entries = load_manifest(small_manifest)
        trips = build_gt_triplets(entries, 0.0, 7, self.distractors(tmp_path), tmp_path / "r")
        orig = load_image(entries[0].original_path)
        ep = load_image(trips[0].over_preserved_path)
        # PNG quantization is the only difference channel
        assert np.allclose(orig.pixels, ep.pixels, atol=1 / 255)

    def test_missing_distractors(self, small_manifest, tmp_path):
        entries = load_manifest(small_manifest)
        with pytest.raises(MissingDistractor):
            build_gt_triplets(entries, 0.15, 7, self.distractors(tmp_path, n=2), tmp_path / "r")

    def test_directory_distractor_source(self, small_manifest, tmp_path):
        ddir = tmp_path / "pool"
        ddir.mkdir()
        self.distractors(ddir, n=5)
        entries = load_manifest(small_manifest)
        trips = build_gt_triplets(entries, 0.15, 7, ddir, tmp_path / "r")
        assert len(trips) == 4


class TestEmitReport:
    def score_file(self, tmp_path):
        from bpm_eval.aggregate import ScoreBreakdown, finalize_batch, write_scores_jsonl
        from bpm_eval.config import EngineConfig

        rows = [
            ScoreBreakdown("a", 1, 1, 2, 0.5, 0.9),
            ScoreBreakdown("b", 0, 1, 1, 0.1, 0.4, flags=frozenset({"target_not_found"})),
        ]
        path = tmp_path / "scores.jsonl"
        write_scores_jsonl(finalize_batch(rows, EngineConfig(jobs=1)), path)
        return path

    def test_summary_only(self, tmp_path):
        out = tmp_path / "report.md"
        emit_report({"modelX": str(self.score_file(tmp_path))}, [], [], out)
        text = out.read_text()
        assert "modelX" in text
        assert "| run |" in text
        assert "alignment" not in text.lower() or "| run_a |" not in text

    def test_full_report_tables(self, tmp_path):
        out = tmp_path / "report.md"
        alignment = [{"comparison": "x-vs-y", "dimension": "overall", "alignment": 0.8, "pairs": 10, "ties": "exclude"}]
        favoring = [{"run": "gt-test", "p_ep": 0.1, "p_em": 0.0, "p_gt": 0.9}]
        emit_report({"modelX": str(self.score_file(tmp_path))}, alignment, favoring, out, svg=True)
        text = out.read_text()
        assert "0.8" in text
        assert "0.9" in text
        assert "<svg" in text

    def test_deterministic(self, tmp_path):
        sf = self.score_file(tmp_path)
        o1, o2 = tmp_path / "r1.md", tmp_path / "r2.md"
        emit_report({"m": str(sf)}, [], [], o1)
        emit_report({"m": str(sf)}, [], [], o2)
        assert o1.read_bytes() == o2.read_bytes()
