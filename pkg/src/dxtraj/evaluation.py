"""Recall@k, the untrained random baseline, and comparison grids over cell
kinds / layer counts / node counts / extra features."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import network
from .ehr_data import CodeVocabulary, build_batch
from .network import ModelParams, rank_codes
from .numerics import SeededRng


@dataclass
class RecallResult:
    k: int
    values: list  # one recall per (patient, transition) prediction
    mean: float


@dataclass
class GridRow:
    label: str
    config: dict
    recall: dict = field(default_factory=dict)  # k -> mean over seeds
    iterations: float = 0.0
    time_s: float = 0.0
    failed: bool = False
    error: str = ""


def recall_at_k(yhat: np.ndarray, target_codes, k: int) -> float:
    """|top-k(yhat) intersect target| / |target|. Ties in yhat are broken by
    ascending code index."""
    target_codes = set(target_codes)
    if not target_codes:
        raise ValueError("empty target code set")
    if not (1 <= k <= yhat.size):
        raise ValueError(f"k={k} out of range [1, {yhat.size}]")
    top = rank_codes(np.asarray(yhat, dtype=np.float64))[:k]
    hits = sum(1 for i in top if int(i) in target_codes)
    return hits / len(target_codes)


def evaluate_model(model: ModelParams, patients, vocab: CodeVocabulary,
                   ks=(10, 20, 30)) -> dict:
    """Mean Recall@k over every (patient, transition) pair, one sample per
    transition, all samples weighted equally."""
    ks = [k for k in ks if 1 <= k <= len(vocab)]
    results = {k: [] for k in ks}
    if not patients:
        raise ValueError("empty evaluation cohort")
    batch = build_batch(patients, vocab, model.extras,
                        duration_max=model.duration_max or None,
                        interval_max=model.interval_max or None)
    trace = network.forward(batch, model)
    yhat = trace["yhat"]
    for t in range(batch.n_steps):
        for h in range(batch.n_patients):
            if batch.mask[t, h] == 0:
                continue
            target = set(np.nonzero(batch.targets[t, h])[0].tolist())
            for k in ks:
                results[k].append(recall_at_k(yhat[t, h], target, k))
    return {
        k: RecallResult(k=k, values=v, mean=float(np.mean(v)) if v else 0.0)
        for k, v in results.items()
    }


def random_baseline(patients, vocab: CodeVocabulary, rng: SeededRng,
                    ks=(10, 20, 30)) -> dict:
    """Recall of uniformly random scores, one fresh draw per transition."""
    ks = [k for k in ks if 1 <= k <= len(vocab)]
    results = {k: [] for k in ks}
    for p in patients:
        for i in range(len(p.admissions) - 1):
            scores = rng.uniform(len(vocab))
            target = {vocab.index[c] for c in p.admissions[i + 1].codes}
            for k in ks:
                results[k].append(recall_at_k(scores, target, k))
    return {
        k: RecallResult(k=k, values=v, mean=float(np.mean(v)) if v else 0.0)
        for k, v in results.items()
    }


def run_comparison(cohort, grid_spec: list, seeds, ks=(10, 20, 30)) -> list:
    """Train/evaluate every grid configuration on every seed and average.

    grid_spec rows are dicts of TrainConfig overrides, plus optional keys
    "label" and "random_baseline": true for the untrained-scores row. A
    failing configuration yields a marked row instead of aborting the grid.
    """
    from .training import TrainConfig, train
    from .ehr_data import build_vocabulary

    rows = []
    for idx, spec in enumerate(grid_spec):
        spec = dict(spec)
        label = spec.pop("label", f"config-{idx}")
        is_random = spec.pop("random_baseline", False)
        row = GridRow(label=label, config=dict(spec))
        try:
            per_seed = []
            times = []
            iters = []
            for seed in seeds:
                t0 = time.perf_counter()
                if is_random:
                    vocab = build_vocabulary(cohort)
                    rng = SeededRng(int(seed))
                    _, test = _seed_split(cohort, spec, int(seed))
                    res = random_baseline(test, vocab, rng, ks=ks)
                    iters.append(1)
                else:
                    config = TrainConfig.from_dict({**spec, "seed": int(seed)})
                    model, report = train(cohort, config)
                    res = {k: _as_result(k, report.recall.get(k))
                           for k in ks if k in report.recall}
                    iters.append(report.iterations)
                times.append(time.perf_counter() - t0)
                per_seed.append({k: r.mean for k, r in res.items()})
            row.recall = {
                k: float(np.mean([s[k] for s in per_seed if k in s]))
                for k in ks if any(k in s for s in per_seed)
            }
            row.iterations = float(np.mean(iters))
            row.time_s = float(np.mean(times))
        except Exception as exc:  # noqa: BLE001 - isolate per-cell failures
            row.failed = True
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _as_result(k, mean):
    return RecallResult(k=k, values=[], mean=float(mean))


def _seed_split(cohort, spec, seed):
    from .training import split_patients
    fraction = spec.get("split_fraction", 0.9)
    return split_patients(cohort, fraction, SeededRng(seed))


def grid_to_csv(rows) -> str:
    ks = sorted({k for r in rows for k in r.recall})
    header = ["label"] + [f"recall@{k}" for k in ks] + \
        ["iterations", "time_s", "failed"]
    lines = [",".join(header)]
    for r in rows:
        cells = [r.label]
        cells += [f"{r.recall[k]:.4f}" if k in r.recall else "" for k in ks]
        cells += [f"{r.iterations:g}", f"{r.time_s:.2f}", str(r.failed).lower()]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def grid_to_json(rows) -> list:
    return [
        {
            "label": r.label, "config": r.config,
            "recall": {str(k): v for k, v in r.recall.items()},
            "iterations": r.iterations, "time_s": r.time_s,
            "failed": r.failed, "error": r.error,
        }
        for r in rows
    ]
