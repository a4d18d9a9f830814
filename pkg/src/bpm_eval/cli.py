"""Command-line entry point.

Exit codes: 0 success, 1 finished with per-sample degradations, 2 fatal.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .aggregate import (
    evaluate_batch,
    read_scores_jsonl,
    write_scores_jsonl,
)
from .config import ENV_PROVIDER_URL, load_config
from .errors import BpmError, ProviderUnavailable
from .geometry import BinaryMask, load_image
from .guidance import compose_guided_noise
from .harness import (
    TIES_EXCLUDE,
    build_gt_triplets,
    emit_report,
    gt_favoring,
    load_manifest,
    pairwise_alignment,
    pearson_correlation,
)
from .parsing import fallback_parse
from .providers import make_provider

EXIT_OK = 0
EXIT_DEGRADED = 1
EXIT_FATAL = 2

# Human rating dimension -> score-row column carrying the comparable metric.
DIMENSION_COLUMNS = {
    "overall": "bpm",
    "preservation": "s_preserve_norm",
    "modification": "s_modify_norm",
    "size": "s_size",
    "position": "s_position",
}


def _provider_from_cfg(cfg):
    if cfg.provider is None:
        raise BpmError(
            f"no provider configured (use --provider, a config file, or {ENV_PROVIDER_URL})"
        )
    return make_provider(cfg.provider.kind, cfg.provider.locator)


def _load_samples(manifest_entries):
    samples = []
    for e in manifest_entries:
        samples.append(
            {
                "id": e.id,
                "origin": load_image(e.original_path, key=f"{e.id}/origin"),
                "edited": load_image(e.edited_path, key=f"{e.id}/edit"),
                "instruction": e.instruction,
                "model_tag": e.model_tag or None,
            }
        )
    return samples


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.provider, args.alpha, args.jobs, args.norm_mode)
    provider = _provider_from_cfg(cfg)
    provider.capabilities()  # reachability probe; ProviderUnavailable is fatal here
    entries = load_manifest(args.manifest)
    result = evaluate_batch(_load_samples(entries), provider, cfg)
    write_scores_jsonl(result.rows, args.out)
    flagged = sum(1 for r in result.rows if r.flags)
    print(f"evaluated {len(result.rows)} samples -> {args.out} ({flagged} flagged)")
    return EXIT_DEGRADED if (result.degraded or flagged) else EXIT_OK


def _scores_by_id(path, column: str) -> dict[str, float]:
    out = {}
    for rec in read_scores_jsonl(path):
        val = rec.get(column)
        if val is None:
            raise BpmError(f"score file {path} lacks {column!r} for {rec['sample_id']}")
        out[rec["sample_id"]] = float(val)
    return out


def cmd_align(args) -> int:
    column = DIMENSION_COLUMNS[args.dimension]
    scores_a = _scores_by_id(args.scores_a, column)
    scores_b = _scores_by_id(args.scores_b, column)
    human_a: dict[str, float] = {}
    human_b: dict[str, float] = {}
    with open(args.human, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            human_a[rec["id"]] = float(rec["a"][args.dimension])
            human_b[rec["id"]] = float(rec["b"][args.dimension])
    value = pairwise_alignment(scores_a, scores_b, human_a, human_b, ties=args.ties)
    print(f"{value:g}")
    return EXIT_OK


def cmd_gt_test(args) -> int:
    cfg = load_config(args.config, args.provider, args.alpha, args.jobs, args.norm_mode)
    provider = _provider_from_cfg(cfg)
    provider.capabilities()
    entries = load_manifest(args.manifest)
    triplets = build_gt_triplets(
        entries, args.sigma, args.seed, args.distractors, args.work_dir
    )

    candidates = {"gt": "gt_path", "ep": "over_preserved_path", "em": "over_modified_path"}
    samples = []
    for t in triplets:
        origin = load_image(t.original_path)
        for tag, attr in candidates.items():
            # each candidate is its own sample; keys must match its fixtures
            samples.append(
                {
                    "id": f"{t.id}__{tag}",
                    "origin": origin.with_key(f"{t.id}__{tag}/origin"),
                    "edited": load_image(getattr(t, attr), key=f"{t.id}__{tag}/edit"),
                    "instruction": t.instruction,
                    "model_tag": tag,
                }
            )
    result = evaluate_batch(samples, provider, cfg)
    if args.out:
        write_scores_jsonl(result.rows, args.out)

    by_id = {r.sample_id: r.bpm for r in result.rows}
    scores = [
        (by_id[f"{t.id}__gt"], by_id[f"{t.id}__ep"], by_id[f"{t.id}__em"])
        for t in triplets
    ]
    p_ep, p_em, p_gt = gt_favoring(scores)
    print(f"over_preserved={p_ep:g} over_modified={p_em:g} gt={p_gt:g}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    column = DIMENSION_COLUMNS[args.dimension]
    scores = _scores_by_id(args.scores, column)
    entries = load_manifest(args.manifest, check_paths=False)
    metric, human = [], []
    for e in entries:
        if e.human is None or args.dimension not in e.human:
            continue
        if e.id not in scores:
            raise BpmError(f"manifest id {e.id} missing from {args.scores}")
        metric.append(scores[e.id])
        human.append(float(e.human[args.dimension]))
    r = pearson_correlation(metric, human)
    print(f"{r:.6f}")
    return EXIT_OK


def cmd_compose(args) -> int:
    with open(args.fields, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    mask = BinaryMask(np.asarray(data["mask"], dtype=bool))
    out = compose_guided_noise(
        data["eps_uncond"],
        data["eps_img"],
        data["eps_full"],
        float(data["s_image"]),
        float(data["s_text"]),
        mask,
    )
    text = json.dumps({"composed": out.tolist()}, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def cmd_parse(args) -> int:
    if args.provider:
        cfg = load_config(args.config, args.provider)
        provider = _provider_from_cfg(cfg)
        if provider.capabilities().supports_parse:
            parsed = provider.parse(args.instruction)
        else:
            parsed = fallback_parse(args.instruction)
    else:
        parsed = fallback_parse(args.instruction)
    print(json.dumps(parsed.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    score_files = {}
    for item in args.scores:
        label, sep, path = item.partition("=")
        if not sep:
            raise BpmError(f"--scores expects label=path, got {item!r}")
        score_files[label] = path
    alignment_rows = []
    if args.align_json:
        alignment_rows = json.loads(Path(args.align_json).read_text(encoding="utf-8"))
    favoring_rows = []
    if args.favoring_json:
        favoring_rows = json.loads(Path(args.favoring_json).read_text(encoding="utf-8"))
    emit_report(score_files, alignment_rows, favoring_rows, args.out, svg=args.svg)
    print(f"wrote {args.out}")
    return EXIT_OK


def _add_engine_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file")
    p.add_argument(
        "--provider",
        help="provider spec: fixtures:PATH or http:URL (flags beat config file; "
        f"env {ENV_PROVIDER_URL} is the lowest-precedence source)",
    )
    p.add_argument("--alpha", type=float, help="semantic/region mixing weight in [0,1]")
    p.add_argument("--jobs", type=int, help="parallel evaluation workers")
    p.add_argument("--norm-mode", choices=("batch", "fixed"), help="normalization population")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bpm-eval",
        description="Region/semantic disentangled scoring for instruction-based image editing.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="score a manifest of origin/edited pairs")
    _add_engine_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("align", help="pairwise human-alignment between two score files")
    p.add_argument("--scores-a", required=True)
    p.add_argument("--scores-b", required=True)
    p.add_argument("--human", required=True, help="JSONL: {id, a:{...}, b:{...}} ratings")
    p.add_argument("--dimension", choices=sorted(DIMENSION_COLUMNS), default="overall")
    p.add_argument(
        "--ties",
        choices=(TIES_EXCLUDE, "count-as-disagreement"),
        default=TIES_EXCLUDE,
        help="human-tie policy",
    )
    p.set_defaults(fn=cmd_align)

    p = sub.add_parser("gt-test", help="ground-truth triplet favoring test")
    _add_engine_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--distractors", required=True, help="directory of over-modified candidates")
    p.add_argument("--work-dir", required=True, help="where noised candidates are written")
    p.add_argument("--sigma", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional per-candidate scores JSONL")
    p.set_defaults(fn=cmd_gt_test)

    p = sub.add_parser("correlate", help="Pearson r between a score file and human ratings")
    p.add_argument("--scores", required=True)
    p.add_argument("--manifest", required=True, help="manifest JSONL carrying human ratings")
    p.add_argument("--dimension", choices=sorted(DIMENSION_COLUMNS), default="overall")
    p.set_defaults(fn=cmd_correlate)

    p = sub.add_parser("compose", help="masked guidance composition on JSON noise fields")
    p.add_argument("--fields", required=True, help="JSON with eps_* arrays, mask, s_image, s_text")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_compose)

    p = sub.add_parser("parse", help="parse one instruction to its structured form")
    p.add_argument("--config")
    p.add_argument("--provider")
    p.add_argument("--instruction", required=True)
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("report", help="markdown report over score files")
    p.add_argument("--scores", action="append", default=[], help="label=path, repeatable")
    p.add_argument("--align-json", help="JSON list of alignment rows")
    p.add_argument("--favoring-json", help="JSON list of favoring rows")
    p.add_argument("--out", required=True)
    p.add_argument("--svg", action="store_true", help="embed a bar chart")
    p.set_defaults(fn=cmd_report)

    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ProviderUnavailable as exc:
        print(f"error: provider unreachable: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except BpmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
