"""Command line front end.

Subcommands: generate a dataset, solve one trial, evaluate a full sweep,
extrapolate a trial's rule past the blank. Pipeline failures print one
machine-readable JSON line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import Error, IoError
from .geometry import classify
from .harness import (
    evaluate,
    report_csv,
    report_json,
    solve_trial,
    trial_seed,
)
from .imgcore import crop, save_png
from .search import SearchConfig, derive_sequence, extrapolate, match_windows
from .attention import identify_layout
from .taskgen import TrialManifest, generate_dataset, load_trial


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="matrixreason")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a procedural trial dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    s = sub.add_parser("solve", help="solve one trial and print the outcome")
    s.add_argument("--trial", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dump-prediction", metavar="PNG", default=None)
    s.add_argument("--dump-sequence", action="store_true")

    e = sub.add_parser("evaluate", help="run every trial for K agents")
    e.add_argument("--dataset", required=True)
    e.add_argument("--agents", type=int, default=5)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--csv", default=None)
    e.add_argument("--json", default=None)
    e.add_argument("--timings", action="store_true",
                   help="write measured wall times instead of zeros")

    x = sub.add_parser("extrapolate", help="continue a trial's rule for N more steps")
    x.add_argument("--trial", required=True)
    x.add_argument("--dataset", required=True)
    x.add_argument("--steps", type=int, default=3)
    x.add_argument("--out", required=True)
    x.add_argument("--seed", type=int, default=0)
    return p


def _load(dataset: str) -> TrialManifest:
    return TrialManifest.load(Path(dataset) / "manifest.json")


def _cmd_generate(args) -> int:
    manifest = generate_dataset(args.seed, args.out)
    counts = manifest.counts()
    print(f"wrote {len(manifest.trials)} trials to {args.out}")
    for cond, n in sorted(counts.items()):
        print(f"  {cond}: {n}")
    return 0


def _cmd_solve(args) -> int:
    manifest = _load(args.dataset)
    trial = load_trial(args.dataset, manifest[args.trial])
    cfg = SearchConfig(seed=trial_seed(args.seed, trial.id))
    result, prediction = solve_trial(trial, cfg, return_prediction=True)
    print(f"trial: {result.trial_id}")
    print(f"condition: {result.condition}")
    print(f"chosen: {result.chosen}")
    verdict = "yes" if result.correct else "no"
    print(f"correct: {verdict} (answer {trial.correct})")
    print(f"n_features: {result.n_features}")
    print(f"global_mse: {result.global_mse:.4f}")
    if result.fallback:
        print("fallback: copy-last-cue (no usable feature consensus)")
    if result.tie:
        print("tie: choices indistinguishable, picked 0")
    if args.dump_sequence:
        for i, line in enumerate(result.sequence_summary):
            print(f"step {i + 1}: {line}")
    if args.dump_prediction:
        if prediction is not None:
            save_png(prediction.cropped, args.dump_prediction)
        else:
            layout = identify_layout(trial.cue_screen, trial.condition)
            win_c = crop(trial.cue_screen, layout.windows[2])
            save_png(crop(win_c, layout.blank_in_window()), args.dump_prediction)
        print(f"prediction: {args.dump_prediction}")
    return 0


def _cmd_evaluate(args) -> int:
    manifest = _load(args.dataset)
    report = evaluate(manifest, n_agents=args.agents, base_seed=args.seed,
                      dataset_dir=args.dataset)
    per_cond = report.per_condition()
    from .harness import HUMAN_REFERENCE, MODEL_REFERENCE

    print(f"{'condition':<22}{'accuracy':>9}{'std':>8}{'n':>6}{'model':>8}{'human':>8}")
    for cond, row in per_cond.items():
        print(
            f"{cond:<22}{row['accuracy']:>9.4f}{row['std']:>8.4f}{row['n']:>6}"
            f"{MODEL_REFERENCE[cond]['accuracy']:>8.4f}"
            f"{HUMAN_REFERENCE[cond]['accuracy']:>8.4f}"
        )
    total = len(report.results)
    n_correct = sum(1 for _, r in report.results if r.correct)
    print(f"overall: {n_correct}/{total} ({n_correct / total:.4f}) "
          f"in {report.runtime_s:.1f}s with {report.n_agents} agents")
    if args.csv:
        report_csv(report, args.csv, include_timings=args.timings)
        print(f"csv: {args.csv}")
    if args.json:
        report_json(report, args.json, include_timings=args.timings)
        print(f"json: {args.json}")
    return 0


def _cmd_extrapolate(args) -> int:
    if args.steps < 1:
        raise ValueError("--steps must be >= 1")
    manifest = _load(args.dataset)
    trial = load_trial(args.dataset, manifest[args.trial])
    cfg = SearchConfig(seed=trial_seed(args.seed, trial.id))
    layout = identify_layout(trial.cue_screen, trial.condition)
    wins = [crop(trial.cue_screen, w) for w in layout.windows]
    matches = match_windows(wins[0], wins[1])
    seq = derive_sequence(wins[0], wins[1], wins[2], cfg, matches=matches)
    panels = extrapolate(wins[2], seq, args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, panel in enumerate(panels, start=1):
        path = out / f"{trial.id}_step{i}.png"
        save_png(panel, path)
        print(f"step {i}: {path}")
    for i, line in enumerate(classify(s.transform).describe() for s in seq.steps):
        print(f"rule step {i + 1}: {line}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "solve": _cmd_solve,
    "evaluate": _cmd_evaluate,
    "extrapolate": _cmd_extrapolate,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Error as exc:
        line = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(line), file=sys.stderr)
        return 1
    except OSError as exc:
        line = {"error": IoError.__name__, "message": str(exc)}
        print(json.dumps(line), file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        line = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(line), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
