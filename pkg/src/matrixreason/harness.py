"""Batch evaluation: solve single trials, run multi-agent sweeps over a
generated dataset, aggregate per-condition accuracy with trial-level stds,
fit the accuracy-vs-feature-count regression, and write deterministic CSV
and JSON reports.

Timings are measured but written as zero unless explicitly requested, so
repeated runs with the same seeds produce byte-identical report files.
"""

from __future__ import annotations

import json
import os
import time
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .attention import Condition, identify_layout
from .errors import IoError, NoConsensus, NoFeatures, TooFewMatches
from .geometry import classify
from .imgcore import crop, mse
from .search import SearchConfig, derive_sequence, match_windows, predict_and_choose
from .taskgen import Trial, TrialManifest, load_trial

# Published reference profiles, shipped for side-by-side display in reports.
# Never asserted against: the procedural dataset is an analogue, not the
# original stimuli.
MODEL_REFERENCE = {
    "SymbolicMatching": {"accuracy": 1.0, "std": 0.0},
    "SymbolicReasoning": {"accuracy": 0.8875, "std": 0.3163},
    "PerceptualMatching": {"accuracy": 0.8229, "std": 0.3821},
    "PerceptualReasoning": {"accuracy": 0.6333, "std": 0.4824},
}
HUMAN_REFERENCE = {
    "SymbolicMatching": {"accuracy": 0.9636, "std": 0.1873},
    "SymbolicReasoning": {"accuracy": 0.956, "std": 0.205},
    "PerceptualMatching": {"accuracy": 0.9354, "std": 0.2458},
    "PerceptualReasoning": {"accuracy": 0.9496, "std": 0.2186},
}

_CONDITIONS = [c.value for c in Condition]


@dataclass
class TrialResult:
    trial_id: str
    condition: str
    chosen: int
    correct: bool
    n_features: int
    global_mse: float
    sequence_summary: list
    wall_time_ms: float
    fallback: bool = False
    tie: bool = False


def solve_trial(trial: Trial, cfg: SearchConfig, *, return_prediction: bool = False):
    """Run the full pipeline on one trial.

    If no features, matches or consensus can be found the trial degrades to
    a copy-last-cue baseline (blank-region crop of window C against each
    choice) and is flagged, so every trial stays scorable.
    """
    t0 = time.perf_counter()
    screen = trial.cue_screen
    layout = identify_layout(screen, trial.condition)
    wins = [crop(screen, w) for w in layout.windows]
    choice_inner = [crop(screen, c.inset(1)) for c in layout.choices]
    n_features = 0
    fallback = False
    prediction = None
    try:
        matches = match_windows(wins[0], wins[1])
        n_features = len(matches)
        seq = derive_sequence(wins[0], wins[1], wins[2], cfg, matches=matches)
        prediction = predict_and_choose(layout, screen, seq, choice_inner)
        chosen, tie = prediction.chosen, prediction.tie
        global_mse = seq.global_mse
        summary = [classify(s.transform).describe() for s in seq.steps]
    except (NoFeatures, TooFewMatches, NoConsensus):
        base = crop(wins[2], layout.blank_in_window())
        scores = [mse(base, ci) for ci in choice_inner]
        tie = abs(scores[0] - scores[1]) < 1e-9
        chosen = 0 if tie else int(np.argmin(scores))
        global_mse = float(min(scores))
        summary = ["Fallback(copy-last-cue)"]
        fallback = True
    result = TrialResult(
        trial_id=trial.id,
        condition=trial.condition.value,
        chosen=chosen,
        correct=(chosen == trial.correct),
        n_features=n_features,
        global_mse=global_mse,
        sequence_summary=summary,
        wall_time_ms=(time.perf_counter() - t0) * 1000.0,
        fallback=fallback,
        tie=tie,
    )
    if return_prediction:
        return result, prediction
    return result


def trial_seed(agent_seed: int, trial_id: str) -> list:
    """Seed material for one (agent, trial) pair: stable across runs and
    uncorrelated across trials (crc of the id, not Python's salted hash)."""
    return [agent_seed, zlib.crc32(trial_id.encode("utf-8"))]


def _solve_one(dataset_dir: str, meta, agent_seed: int) -> TrialResult:
    trial = load_trial(dataset_dir, meta)
    cfg = SearchConfig(seed=trial_seed(agent_seed, trial.id))
    return solve_trial(trial, cfg)


def _worker(job) -> TrialResult:
    dataset_dir, meta, agent_seed = job
    return _solve_one(dataset_dir, meta, agent_seed)


def _thread_budget() -> int:
    env = os.environ.get("MR_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


@dataclass
class EvaluationReport:
    dataset_seed: int
    base_seed: int
    n_agents: int
    results: list  # (agent index, TrialResult), ordered by (agent, manifest order)
    runtime_s: float = 0.0

    def per_condition(self) -> dict:
        out = {}
        for cond in _CONDITIONS:
            flags = [
                1.0 if r.correct else 0.0 for _, r in self.results if r.condition == cond
            ]
            if not flags:
                continue
            arr = np.asarray(flags)
            std = float(np.std(arr, ddof=1)) if len(arr) > 1 else 0.0
            out[cond] = {"accuracy": float(arr.mean()), "std": std, "n": len(arr)}
        return out

    def per_agent(self) -> dict:
        out: dict = {}
        for agent, r in self.results:
            bucket = out.setdefault(agent, {})
            cell = bucket.setdefault(r.condition, [0, 0])
            cell[0] += 1 if r.correct else 0
            cell[1] += 1
        return {
            agent: {cond: c[0] / c[1] for cond, c in buckets.items()}
            for agent, buckets in out.items()
        }

    def regression(self) -> dict:
        out = {}
        for cond in _CONDITIONS:
            xs = [r.n_features for _, r in self.results if r.condition == cond]
            ys = [1.0 if r.correct else 0.0 for _, r in self.results if r.condition == cond]
            if xs:
                out[cond] = fit_regression(xs, ys)
        return out

    def to_json(self, include_timings: bool = False) -> dict:
        rows = []
        for agent, r in self.results:
            rows.append(
                {
                    "agent": agent,
                    "trial_id": r.trial_id,
                    "condition": r.condition,
                    "chosen": r.chosen,
                    "correct": int(r.correct),
                    "n_features": r.n_features,
                    "global_mse": round(r.global_mse, 6),
                    "wall_time_ms": round(r.wall_time_ms, 3) if include_timings else 0.0,
                    "sequence_summary": list(r.sequence_summary),
                    "fallback": r.fallback,
                    "tie": r.tie,
                }
            )
        doc = {
            "dataset_seed": self.dataset_seed,
            "base_seed": self.base_seed,
            "n_agents": self.n_agents,
            "per_condition": self.per_condition(),
            "per_agent": {str(k): v for k, v in self.per_agent().items()},
            "regression": self.regression(),
            "reference_model": MODEL_REFERENCE,
            "reference_human": HUMAN_REFERENCE,
            "rows": rows,
        }
        if include_timings:
            doc["runtime_s"] = round(self.runtime_s, 3)
        return doc


def fit_regression(n_features, correct) -> dict:
    """OLS of 0/1 correctness on matched-feature count; p-value is the
    two-sided t-test on the slope. Degenerate columns (constant x or y)
    report a flat fit rather than NaNs."""
    x = np.asarray(n_features, dtype=np.float64)
    y = np.asarray(correct, dtype=np.float64)
    if len(x) < 3 or np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        mean = float(y.mean()) if len(y) else 0.0
        return {"intercept": mean, "slope": 0.0, "p_value": 1.0, "r_squared": 0.0}
    fit = stats.linregress(x, y)
    return {
        "intercept": float(fit.intercept),
        "slope": float(fit.slope),
        "p_value": float(fit.pvalue),
        "r_squared": float(fit.rvalue**2),
    }


def evaluate(
    manifest: TrialManifest,
    n_agents: int = 5,
    base_seed: int = 0,
    *,
    dataset_dir,
) -> EvaluationReport:
    """Run every trial once per agent (agent k uses base_seed + k) and fold
    the results into a report, ordered by (agent, manifest order)."""
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    t0 = time.perf_counter()
    dataset_dir = str(dataset_dir)
    jobs = [
        (dataset_dir, meta, base_seed + agent)
        for agent in range(n_agents)
        for meta in manifest.trials
    ]
    workers = _thread_budget()
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            solved = list(pool.map(_worker, jobs, chunksize=8))
    else:
        solved = [_worker(j) for j in jobs]
    results = []
    k = 0
    for agent in range(n_agents):
        for _ in manifest.trials:
            results.append((agent, solved[k]))
            k += 1
    return EvaluationReport(
        dataset_seed=manifest.dataset_seed,
        base_seed=base_seed,
        n_agents=n_agents,
        results=results,
        runtime_s=time.perf_counter() - t0,
    )


def report_csv(report: EvaluationReport, path, include_timings: bool = False) -> None:
    """Data rows plus a commented summary block; LF newlines, stable order."""
    lines = ["agent,condition,trial_id,chosen,correct,n_features,global_mse,wall_time_ms"]
    for agent, r in report.results:
        wall = f"{r.wall_time_ms:.3f}" if include_timings else "0.000"
        lines.append(
            f"{agent},{r.condition},{r.trial_id},{r.chosen},{int(r.correct)},"
            f"{r.n_features},{r.global_mse:.6f},{wall}"
        )
    lines.append("#")
    lines.append("# condition,accuracy,std,n")
    for cond, row in report.per_condition().items():
        lines.append(f"# {cond},{row['accuracy']:.6f},{row['std']:.6f},{row['n']}")
    lines.append("# regression: condition,intercept,slope,p_value,r_squared")
    for cond, row in report.regression().items():
        lines.append(
            f"# {cond},{row['intercept']:.6f},{row['slope']:.8f},"
            f"{row['p_value']:.6g},{row['r_squared']:.6f}"
        )
    lines.append("# reference_model: condition,accuracy,std")
    for cond, row in MODEL_REFERENCE.items():
        lines.append(f"# {cond},{row['accuracy']:.4f},{row['std']:.4f}")
    lines.append("# reference_human: condition,accuracy,std")
    for cond, row in HUMAN_REFERENCE.items():
        lines.append(f"# {cond},{row['accuracy']:.4f},{row['std']:.4f}")
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def report_json(report: EvaluationReport, path, include_timings: bool = False) -> None:
    doc = report.to_json(include_timings=include_timings)
    try:
        Path(path).write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
        )
    except OSError as exc:
        raise IoError(str(exc)) from exc
