"""Weight-diffusion experiments.

Train copies of a model at different hyperparameter values, track how far
the weights wander from a reference snapshot, and decide whether the
hyperparameter behaves like a temperature: more noise should mean more
diffusion, monotonically.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .optimizer import DivergenceError


@dataclass
class DiffusionCurve:
    replica_id: int
    value: float
    seed: int
    origin_step: int
    steps: list[int] = field(default_factory=list)
    displacements: list[float] = field(default_factory=list)
    diverged: bool = False

    def __post_init__(self):
        if self.steps and self.steps[0] == self.origin_step and self.displacements[0] != 0.0:
            raise ValueError("displacement at the origin step must be 0")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("curve steps must be strictly increasing")

    def subsample(self, every: int) -> DiffusionCurve:
        # keep the last sample so the final window still ends at the same step
        idx = list(range(0, len(self.steps), every))
        if idx[-1] != len(self.steps) - 1:
            idx.append(len(self.steps) - 1)
        return DiffusionCurve(
            self.replica_id, self.value, self.seed, self.origin_step,
            [self.steps[i] for i in idx], [self.displacements[i] for i in idx], self.diverged,
        )


def record_displacement(w_t, w_t0) -> float:
    """Euclidean distance between two weight vectors."""
    a = np.asarray(w_t, dtype=np.float64)
    b = np.asarray(w_t0, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def run_diffusion_experiment(task, kind: str, values, seeds, total_steps: int, interval: int, origin_step: int = 0) -> list[DiffusionCurve]:
    """One curve per (value, seed), no exchanges.

    Every value shares the same initial weights and random stream for a given
    seed, so curves differ only through the hyperparameter. Displacement is
    sampled every ``interval`` steps from ``origin_step`` on.
    """
    values = list(values)
    if len(values) < 2 or len(seeds) < 1:
        raise ValueError("need at least 2 values and 1 seed")
    if interval < 1 or origin_step % interval or origin_step >= total_steps:
        raise ValueError("origin_step must be a multiple of interval and precede total_steps")
    curves = []
    for vi, value in enumerate(values):
        for seed in seeds:
            r = task.make_replica(vi, int(seed), 0)
            ref = r.weights.copy() if origin_step == 0 else None
            curve = DiffusionCurve(vi, value, int(seed), origin_step)
            if ref is not None:
                curve.steps.append(0)
                curve.displacements.append(0.0)
            t = 0
            while t < total_steps:
                n = min(interval, total_steps - t)
                try:
                    task.advance(r, kind, value, n)
                except (DivergenceError, FloatingPointError):
                    curve.diverged = True
                    break
                t += n
                if t == origin_step:
                    ref = r.weights.copy()
                if ref is not None:
                    curve.steps.append(t)
                    curve.displacements.append(record_displacement(r.weights, ref))
            curves.append(curve)
    return curves


@dataclass(frozen=True)
class SmoothnessVerdict:
    kind: str
    score: float
    temperature_like: bool
    plateau_detected: dict
    final_displacement: dict
    threshold: float


def final_window_mean(curve: DiffusionCurve, fraction: float = 0.1) -> float:
    """Mean displacement over samples in the last ``fraction`` of the recorded steps."""
    steps = np.asarray(curve.steps, dtype=np.float64)
    d = np.asarray(curve.displacements)
    cut = steps[-1] - fraction * (steps[-1] - steps[0])
    return float(d[steps >= cut].mean())


def _quarter_slope(steps, d, which):
    lo, hi = steps[0], steps[-1]
    span = hi - lo
    if which == "first":
        sel = steps <= lo + 0.25 * span
    else:
        sel = steps >= hi - 0.25 * span
    if sel.sum() < 2:
        raise ValueError("too few samples in a quarter to fit a slope")
    return np.polyfit(steps[sel], d[sel], 1)[0]


def has_plateau(curve: DiffusionCurve, fraction: float = 0.25) -> bool:
    """Last-quarter slope below ``fraction`` of the first-quarter slope."""
    steps = np.asarray(curve.steps, dtype=np.float64)
    d = np.asarray(curve.displacements)
    first = _quarter_slope(steps, d, "first")
    last = _quarter_slope(steps, d, "last")
    return bool(first > 0 and last < fraction * first)


def classify_smoothing(
    curves,
    kind: str = "",
    more_noise: str = "increasing",
    threshold: float = 0.8,
    plateau_fraction: float = 0.25,
    window: float = 0.1,
) -> SmoothnessVerdict:
    """Rank-correlate hyperparameter value (oriented so larger means noisier)
    with the seed-averaged final-window displacement."""
    if more_noise not in ("increasing", "decreasing"):
        raise ValueError("more_noise must be 'increasing' or 'decreasing'")
    by_value: dict = {}
    for c in curves:
        by_value.setdefault(c.value, []).append(c)
    if len(by_value) < 2:
        raise ValueError("need at least 2 distinct hyperparameter values")
    n_seeds = min(len(v) for v in by_value.values())
    if n_seeds < 3:
        raise ValueError(f"need at least 3 seeds per value, got {n_seeds}")
    values = sorted(by_value)
    means = [float(np.mean([final_window_mean(c, window) for c in by_value[v]])) for v in values]
    noise = np.asarray(values, dtype=np.float64) * (1.0 if more_noise == "increasing" else -1.0)
    if np.ptp(means) == 0:
        score = 0.0
    else:
        score = float(spearmanr(noise, means).statistic)
    plateaus = {(c.value, c.seed): has_plateau(c, plateau_fraction) for c in curves}
    return SmoothnessVerdict(kind, score, score >= threshold, plateaus, dict(zip(values, means)), threshold)


def curves_to_csv(curves) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "displacement", "value", "seed"])
    for c in curves:
        for s, d in zip(c.steps, c.displacements):
            w.writerow([s, repr(float(d)), repr(c.value), c.seed])
    return buf.getvalue()
