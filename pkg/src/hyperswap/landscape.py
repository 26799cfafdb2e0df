"""Analytic test potentials and overdamped Langevin dynamics.

The potentials have closed-form gradients and known Gibbs densities, which
makes them the ground-truth substrate for checking the exchange machinery.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

KINDS = ("quadratic", "double_well_1d", "double_well_2d")


class Objective(Protocol):
    """Anything with a value and a gradient on a flat weight vector."""

    def value(self, w: np.ndarray) -> float: ...

    def grad(self, w: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class AnalyticPotential:
    """Closed-form potential.

    ``quadratic``       L(w) = a/2 * w^2                 (1 coordinate)
    ``double_well_1d``  L(w) = h * (w^2 - 1)^2           (1 coordinate)
    ``double_well_2d``  L(x, y) = h * (x^2 - 1)^2 + anisotropy/2 * y^2
    """

    kind: str
    a: float = 1.0
    h: float = 1.0
    anisotropy: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "quadratic" and not self.a > 0:
            raise ValueError(f"quadratic curvature must be > 0, got {self.a}")
        if self.kind != "quadratic" and not self.h > 0:
            raise ValueError(f"barrier scale h must be > 0, got {self.h}")
        if self.kind == "double_well_2d" and not self.anisotropy > 0:
            raise ValueError(f"anisotropy must be > 0, got {self.anisotropy}")

    @property
    def dim(self) -> int:
        return 2 if self.kind == "double_well_2d" else 1

    def _check(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] != self.dim:
            raise ValueError(f"{self.kind} expects a weight vector of length {self.dim}, got shape {w.shape}")
        return w

    def value(self, w) -> float:
        w = self._check(w)
        if self.kind == "quadratic":
            return float(0.5 * self.a * w[0] * w[0])
        well = self.h * (w[0] * w[0] - 1.0) ** 2
        if self.kind == "double_well_1d":
            return float(well)
        return float(well + 0.5 * self.anisotropy * w[1] * w[1])

    def grad(self, w) -> np.ndarray:
        w = self._check(w)
        if self.kind == "quadratic":
            return self.a * w
        g = np.empty_like(w)
        g[0] = 4.0 * self.h * w[0] * (w[0] * w[0] - 1.0)
        if self.kind == "double_well_2d":
            g[1] = self.anisotropy * w[1]
        return g

    def value_grid(self, x: np.ndarray) -> np.ndarray:
        """Vectorized value along the first coordinate (other coordinates at 0)."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "quadratic":
            return 0.5 * self.a * x * x
        return self.h * (x * x - 1.0) ** 2


def eval_potential(p: AnalyticPotential, w) -> float:
    return p.value(w)


def grad_potential(p: AnalyticPotential, w) -> np.ndarray:
    return p.grad(w)


@dataclass(frozen=True)
class LangevinConfig:
    temperature: float
    step: float

    def __post_init__(self):
        if not self.temperature >= 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not self.step > 0:
            raise ValueError(f"step must be > 0, got {self.step}")

    @property
    def noise_scale(self) -> float:
        return float(np.sqrt(2.0 * self.temperature * self.step))


def langevin_step(w: np.ndarray, p: Objective, cfg: LangevinConfig, rng: np.random.Generator) -> np.ndarray:
    """One Euler-Maruyama step: w - step * grad + sqrt(2 T step) * N(0, 1)."""
    g = np.asarray(p.grad(w), dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite gradient at w={w!r}")
    noise = rng.standard_normal(np.shape(w))
    return w - cfg.step * g + cfg.noise_scale * noise


def langevin_run(
    w: np.ndarray,
    p: Objective,
    cfg: LangevinConfig,
    rng: np.random.Generator,
    n_steps: int,
    record: bool = False,
):
    """Advance ``n_steps`` Langevin steps.

    Bit-identical to calling :func:`langevin_step` ``n_steps`` times with the
    same generator: the noise is drawn up front in one block, which consumes
    the stream in the same order.

    Returns the final weights, plus the (n_steps, dim) trajectory if ``record``.
    """
    w = np.array(w, dtype=np.float64)
    noise = rng.standard_normal((n_steps, w.shape[0]))
    scale = cfg.noise_scale
    step = cfg.step
    traj = np.empty((n_steps, w.shape[0])) if record else None
    for k in range(n_steps):
        g = p.grad(w)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at w={w!r}")
        w = w - step * g + scale * noise[k]
        if record:
            traj[k] = w
    return (w, traj) if record else w
