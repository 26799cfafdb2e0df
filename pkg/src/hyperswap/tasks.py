"""Inner training loops that advance one replica at a given hyperparameter value.

A task owns the objective and the dynamics; a :class:`Replica` owns the
mutable state (weights, optimizer state, rng, batch cursor). Advancing a
replica by n steps in one call or in several consecutive calls gives
bit-identical results, which is what lets the coordinator cut the run at
exchange and evaluation points freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .landscape import AnalyticPotential, LangevinConfig, langevin_run
from .nn import MlpSpec, RegularizerConfig, error_rate, init_weights, loss_and_grad, loss_batch
from .optimizer import BatchIterator, OptimizerState, SgdConfig, effective_lr, sgd_step


@dataclass
class Replica:
    id: int
    weights: np.ndarray
    slot: int
    rng: np.random.Generator
    opt_state: OptimizerState
    initial_weights: np.ndarray = field(repr=False)
    batches: BatchIterator | None = field(default=None, repr=False)
    diverged: bool = False

    @property
    def step(self) -> int:
        return self.opt_state.step


class LangevinTask:
    """Overdamped Langevin dynamics on an analytic potential.

    The exchanged hyperparameter is the temperature; losses are energies.
    """

    kinds = ("langevin_temperature",)

    def __init__(self, potential: AnalyticPotential, step: float = 1e-3, start=None):
        self.potential = potential
        self.step = step
        if start is None:
            start = np.zeros(potential.dim)
            start[0] = 1.0
        self.start = np.asarray(start, dtype=np.float64)
        if self.start.shape != (potential.dim,):
            raise ValueError(f"start point must have length {potential.dim}")

    def make_replica(self, replica_id: int, seed: int, slot: int) -> Replica:
        rng = np.random.default_rng(seed)
        w = self.start.copy()
        return Replica(replica_id, w, slot, rng, OptimizerState.zeros(len(w)), w.copy())

    def advance(self, replica: Replica, kind: str, value: float, n_steps: int, record: bool = False):
        if kind != "langevin_temperature":
            raise ValueError(f"Langevin task cannot vary {kind!r}")
        cfg = LangevinConfig(temperature=value, step=self.step)
        out = langevin_run(replica.weights, self.potential, cfg, replica.rng, n_steps, record=record)
        w, traj = out if record else (out, None)
        replica.weights = w
        replica.opt_state.step += n_steps
        return traj

    def validation_loss(self, w) -> float:
        return self.potential.value(w)

    def train_loss(self, w) -> float:
        return self.potential.value(w)

    def validation_error(self, w):
        return None


class SgdTask:
    """Mini-batch SGD on an MLP.

    ``kind`` selects which field the exchanged value overrides. For
    ``learning_rate`` the ladder value takes over from ``ladder_start_step``
    on; before that the configured schedule applies to every replica.
    """

    kinds = ("learning_rate", "dropout_rate", "batch_size", "l2_lambda")

    def __init__(
        self,
        spec: MlpSpec,
        train: Dataset,
        validation: Dataset,
        sgd: SgdConfig = SgdConfig(),
        reg: RegularizerConfig = RegularizerConfig(),
        ladder_start_step: int = 0,
    ):
        if train.n_features != spec.layer_sizes[0] or validation.n_features != spec.layer_sizes[0]:
            raise ValueError("dataset feature count does not match the MLP input size")
        self.spec = spec
        self.train = train
        self.validation = validation
        self.sgd = sgd
        self.reg = reg
        self.ladder_start_step = ladder_start_step

    def make_replica(self, replica_id: int, seed: int, slot: int) -> Replica:
        rng = np.random.default_rng(seed)
        w = init_weights(self.spec, rng)
        return Replica(
            replica_id, w, slot, rng, OptimizerState.zeros(len(w)), w.copy(), BatchIterator(len(self.train), rng)
        )

    def _settings(self, kind, value):
        reg, bs, lr = self.reg, self.sgd.batch_size, None
        if kind == "dropout_rate":
            reg = RegularizerConfig(dropout_rate=value, l2_lambda=reg.l2_lambda)
        elif kind == "l2_lambda":
            reg = RegularizerConfig(dropout_rate=reg.dropout_rate, l2_lambda=value)
        elif kind == "batch_size":
            bs = int(value)
        elif kind == "learning_rate":
            lr = float(value)
        elif kind is not None:
            raise ValueError(f"SGD task cannot vary {kind!r}")
        return reg, bs, lr

    def advance(self, replica: Replica, kind: str | None, value, n_steps: int, record: bool = False):
        reg, bs, lr = self._settings(kind, value)
        x, y = self.train.features, self.train.labels
        spec = self.spec

        class _Obj:
            @staticmethod
            def loss_and_grad(w, batch, rng):
                return loss_and_grad(spec, w, x[batch], y[batch], reg, "train", rng)

        w, state = replica.weights, replica.opt_state
        losses = np.empty(n_steps) if record else None
        for k in range(n_steps):
            batch = replica.batches.next(bs)
            step_lr = lr if (lr is not None and state.step >= self.ladder_start_step) else effective_lr(self.sgd, state.step)
            w, state, loss = sgd_step(w, state, _Obj, batch, self.sgd, replica.rng, lr=step_lr)
            if record:
                losses[k] = loss
            replica.weights, replica.opt_state = w, state
        return losses

    def validation_loss(self, w) -> float:
        v = self.validation
        return loss_batch(self.spec, w, v.features, v.labels, RegularizerConfig(), "eval")

    def train_loss(self, w) -> float:
        t = self.train
        return loss_batch(self.spec, w, t.features, t.labels, RegularizerConfig(), "eval")

    def validation_error(self, w) -> float:
        return error_rate(self.spec, w, self.validation.features, self.validation.labels)
