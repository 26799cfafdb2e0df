"""Mini-batch SGD with classical momentum and step-indexed annealing."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

DIVERGENCE_FACTOR = 1e6


class DivergenceError(RuntimeError):
    def __init__(self, message, step=None, loss=None):
        super().__init__(message)
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.1
    batch_size: int = 128
    momentum: float = 0.0
    anneal_schedule: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        sched = tuple((int(s), float(g)) for s, g in self.anneal_schedule)
        object.__setattr__(self, "anneal_schedule", sched)
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")
        if int(self.batch_size) < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        steps = [s for s, _ in sched]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError(f"anneal schedule steps must be strictly increasing, got {steps}")
        if any(g <= 0 for _, g in sched):
            raise ValueError("annealed learning rates must be > 0")


@dataclass
class OptimizerState:
    velocity: np.ndarray
    step: int = 0
    initial_loss: float | None = None
    last_loss: float | None = None

    @classmethod
    def zeros(cls, n: int) -> OptimizerState:
        return cls(np.zeros(n))


def effective_lr(cfg: SgdConfig, t: int) -> float:
    """Rate of the last schedule entry with step <= t, else the base rate."""
    lr = cfg.learning_rate
    for step, value in cfg.anneal_schedule:
        if step <= t:
            lr = value
        else:
            break
    return lr


def _loss_and_grad(objective, w, batch, rng):
    if hasattr(objective, "loss_and_grad"):
        return objective.loss_and_grad(w, batch, rng)
    return objective.value(w), objective.grad(w)


def sgd_step(w, state: OptimizerState, objective, batch, cfg: SgdConfig, rng, lr: float | None = None):
    """One update v' = mu*v + g, w' = w - lr_t * v'.

    ``lr`` overrides the scheduled rate (used when the learning rate is the
    exchanged hyperparameter). Returns (w', state', batch_loss).
    """
    loss, g = _loss_and_grad(objective, w, batch, rng)
    if not (np.isfinite(loss) and np.all(np.isfinite(g))):
        raise DivergenceError(
            f"non-finite loss/gradient at step {state.step}: loss={loss}, "
            f"|g|={np.linalg.norm(g[np.isfinite(g)]):.3g}, non-finite entries={int(np.sum(~np.isfinite(g)))}",
            step=state.step,
            loss=loss,
        )
    initial = loss if state.initial_loss is None else state.initial_loss
    if initial > 0 and loss > DIVERGENCE_FACTOR * initial:
        raise DivergenceError(
            f"loss {loss:.6g} exceeds {DIVERGENCE_FACTOR:g} x initial loss {initial:.6g} at step {state.step}",
            step=state.step,
            loss=loss,
        )
    gamma = effective_lr(cfg, state.step) if lr is None else lr
    if cfg.momentum:
        v = cfg.momentum * state.velocity + g
        w_new = w - gamma * v
    else:
        v = state.velocity
        w_new = w - gamma * g
    return w_new, OptimizerState(v, state.step + 1, initial, loss), loss


@dataclass
class BatchIterator:
    """Epoch-wise shuffled index batches; the final short batch is kept.

    The cursor lives on the object, so the stream can be paused and resumed
    (and the batch size changed) without affecting the draw sequence.
    """

    n: int
    rng: np.random.Generator
    perm: np.ndarray | None = field(default=None, repr=False)
    pos: int = 0

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("empty dataset")

    def next(self, batch_size: int) -> np.ndarray:
        if batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {batch_size}")
        if self.perm is None or self.pos >= self.n:
            self.perm = self.rng.permutation(self.n)
            self.pos = 0
        batch = self.perm[self.pos : self.pos + batch_size]
        self.pos += len(batch)
        return batch


def batch_iterator(dataset, batch_size: int, rng: np.random.Generator):
    """Yield (features, labels) batches forever, reshuffling every epoch."""
    n = len(dataset.labels)
    if n == 0:
        raise ValueError("empty dataset")
    if batch_size > n:
        raise ValueError(f"batch size {batch_size} exceeds dataset size {n}")
    it = BatchIterator(n, rng)
    while True:
        idx = it.next(batch_size)
        yield dataset.features[idx], dataset.labels[idx]


def with_lr(cfg: SgdConfig, lr: float) -> SgdConfig:
    return replace(cfg, learning_rate=lr)
