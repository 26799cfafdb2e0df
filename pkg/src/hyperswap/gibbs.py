"""Ground-truth checks of tempered sampling on analytic potentials.

Empirical histograms of each ladder slot are compared with the exact Gibbs
density exp(-beta L)/Z, and mixing is summarized by well-to-well
transitions, replica round trips and the integrated autocorrelation time of
the coldest chain's energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from .landscape import AnalyticPotential


@dataclass(frozen=True)
class DensityGrid:
    edges: np.ndarray
    density: np.ndarray  # normalized density at bin centers
    mass: np.ndarray  # analytic probability per bin, sums to 1
    counts: np.ndarray
    overflow: int = 0  # samples that fell outside the domain

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def width(self) -> np.ndarray:
        return np.diff(self.edges)

    def with_samples(self, samples) -> DensityGrid:
        s = np.asarray(samples, dtype=np.float64).ravel()
        counts, _ = np.histogram(s, self.edges)
        inside = int(counts.sum())
        return replace(self, counts=counts, overflow=len(s) - inside)


def _marginal_energy(p: AnalyticPotential, x: np.ndarray, coord: int) -> np.ndarray:
    if coord == 1:
        if p.kind != "double_well_2d":
            raise ValueError(f"{p.kind} has a single coordinate")
        return 0.5 * p.anisotropy * x * x
    return p.value_grid(x)


def analytic_gibbs(
    p: AnalyticPotential,
    beta: float,
    lo: float = -3.0,
    hi: float = 3.0,
    n_bins: int = 200,
    sub: int = 16,
    coord: int = 0,
    tail_tol: float = 1e-6,
) -> DensityGrid:
    """Gibbs density of one coordinate on a uniform grid.

    The normalization Z and the per-bin masses come from composite trapezoid
    quadrature with ``sub`` panels per bin. Both potentials are separable, so
    the marginal of a coordinate is the Gibbs density of its own term.
    """
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    if not hi > lo or n_bins < 1:
        raise ValueError("need hi > lo and n_bins >= 1")
    f = lambda x: np.exp(-beta * _marginal_energy(p, np.asarray(x, dtype=np.float64), coord))
    edges = np.linspace(lo, hi, n_bins + 1)
    fine = np.linspace(lo, hi, n_bins * sub + 1)
    fv = f(fine)
    panels = 0.5 * (fv[1:] + fv[:-1]) * np.diff(fine)
    bin_mass = panels.reshape(n_bins, sub).sum(axis=1)
    Z = bin_mass.sum()
    if not (np.isfinite(Z) and Z > 0):
        raise ValueError("density is not normalizable on the domain")
    left = integrate.quad(f, -np.inf, lo)[0]
    right = integrate.quad(f, hi, np.inf)[0]
    if (left + right) / (Z + left + right) > tail_tol:
        raise ValueError(
            f"truncated mass {(left + right) / (Z + left + right):.2e} outside [{lo}, {hi}] exceeds {tail_tol:g}; widen the domain"
        )
    centers = 0.5 * (edges[1:] + edges[:-1])
    return DensityGrid(edges, f(centers) / Z, bin_mass / Z, np.zeros(n_bins, dtype=np.int64))


def tv_distance(grid: DensityGrid) -> float:
    """Total variation between the empirical histogram and the analytic masses.

    Samples outside the grid count as mismatch (the analytic tail is negligible
    by construction of the domain).
    """
    total = int(grid.counts.sum()) + grid.overflow
    if total == 0:
        raise ValueError("no samples")
    freq = grid.counts / total
    return float(0.5 * (np.abs(freq - grid.mass).sum() + grid.overflow / total))


# --- mixing ------------------------------------------------------------------


def count_transitions(x, threshold: float = 0.0) -> int:
    """Well-to-well transitions along a 1D trajectory.

    With ``threshold`` 0 this counts sign changes (exact zeros skipped); a
    positive threshold adds hysteresis: a transition is a move from below
    -threshold to above +threshold or back.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    state = np.where(x > threshold, 1, np.where(x < -threshold, -1, 0))
    state = state[state != 0]
    if len(state) < 2:
        return 0
    return int(np.count_nonzero(state[1:] != state[:-1]))


def slot_history(events, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Replay an event log: steps, and the (n_events + 1, M) slot of every replica
    (row 0 is the starting assignment, replica i in slot i)."""
    slots = np.arange(M)
    rows = [slots.copy()]
    steps = [0]
    for ev in events:
        if ev.accepted:
            a, b = ev.replicas
            slots[a], slots[b] = slots[b], slots[a]
        rows.append(slots.copy())
        steps.append(ev.step)
    return np.asarray(steps), np.asarray(rows)


def round_trips(slot_rows: np.ndarray, coldest: int, hottest: int = 0) -> list[int]:
    """Per replica: completed journeys coldest -> hottest -> coldest."""
    out = []
    for col in np.asarray(slot_rows).T:
        n, seen_cold, seen_hot = 0, False, False
        for s in col:
            if s == coldest:
                if seen_cold and seen_hot:
                    n += 1
                seen_cold, seen_hot = True, False
            elif s == hottest and seen_cold:
                seen_hot = True
        out.append(n)
    return out


def integrated_autocorr_time(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's self-consistent window."""
    x = np.asarray(x, dtype=np.float64).ravel()
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 samples")
    x = x - x.mean()
    var = x @ x / n
    if var == 0:
        return 1.0
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(f * np.conj(f), nfft)[:n] / (n * var)
    tau = 2.0 * np.cumsum(acf) - 1.0
    for m in range(1, n):
        if m >= c * tau[m]:
            return float(tau[m])
    return float(tau[-1])


def slot_chains(result, burn_in: int = 0) -> np.ndarray:
    """(steps, M) first coordinate of whichever replica held each slot."""
    tr = result.trace[burn_in:, :, 0]
    st = result.slot_trace[burn_in:]
    out = np.empty_like(tr)
    for k in range(tr.shape[1]):
        out[:, k] = tr[st == k]
    return out


@dataclass
class MixingReport:
    slot_transitions: list[int]
    replica_transitions: list[int]
    round_trips: list[int]
    cold_energy_iat: float
    steps: int

    @property
    def cold_transitions(self) -> int:
        return self.slot_transitions[-1]


@dataclass
class MixingComparison:
    pt: MixingReport
    baseline: MixingReport
    notes: list[str] = field(default_factory=list)

    @property
    def cold_ratio(self) -> float:
        b = self.baseline.cold_transitions
        return float("inf") if b == 0 else self.pt.cold_transitions / b


def _report(result, potential, burn_in, stride, threshold) -> MixingReport:
    chains = slot_chains(result, burn_in)[::stride]
    per_replica = result.trace[burn_in:, :, 0][::stride]
    _, rows = slot_history(result.events, result.ladder.M)
    cold = chains[:, -1]
    energy = potential.value_grid(cold) if potential is not None else cold
    return MixingReport(
        [count_transitions(chains[:, k], threshold) for k in range(chains.shape[1])],
        [count_transitions(per_replica[:, i], threshold) for i in range(per_replica.shape[1])],
        round_trips(rows, result.ladder.coldest),
        integrated_autocorr_time(energy),
        int(result.trace.shape[0]),
    )


def mixing_report(pt_result, baseline_result, potential=None, burn_in: int = 0, stride: int = 1, threshold: float = 0.0) -> MixingComparison:
    """Compare a tempered run against a no-exchange run on the same budget."""
    if pt_result.trace is None or baseline_result.trace is None:
        raise ValueError("both runs must be recorded")
    if pt_result.trace.shape != baseline_result.trace.shape:
        raise ValueError(
            f"mismatched budgets: {pt_result.trace.shape[0]} vs {baseline_result.trace.shape[0]} steps"
        )
    return MixingComparison(
        _report(pt_result, potential, burn_in, stride, threshold),
        _report(baseline_result, potential, burn_in, stride, threshold),
    )


def slot_tv(result, potential: AnalyticPotential, burn_in: int, lo=-3.0, hi=3.0, n_bins=200) -> list[float]:
    """TV distance of every slot's pooled samples against its own Gibbs density."""
    out = []
    for k, beta in enumerate(result.ladder.betas):
        grid = analytic_gibbs(potential, beta, lo, hi, n_bins).with_samples(result.slot_samples(k, burn_in)[:, 0])
        out.append(tv_distance(grid))
    return out
