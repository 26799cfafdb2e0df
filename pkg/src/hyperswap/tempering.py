"""Replica exchange of hyperparameters.

M replicas train concurrently, each holding one slot of a temperature
ladder. Between exchange points they evolve independently; at each
exchange point one adjacent pair of slots is chosen at random and the two
replicas swap slots (hence hyperparameters) under a Metropolis test on
their validation losses. Weights never move between replicas.

Slots are ordered by ascending inverse temperature: slot 0 is the hottest
(noisiest) setting, slot M-1 the coldest.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .optimizer import DivergenceError
from .tasks import Replica

log = logging.getLogger(__name__)


class HyperparameterKind(str, Enum):
    LEARNING_RATE = "learning_rate"
    DROPOUT_RATE = "dropout_rate"
    LANGEVIN_TEMPERATURE = "langevin_temperature"
    BATCH_SIZE = "batch_size"
    # diffusion experiments only: L2 is not temperature-like, so no ladder
    L2_LAMBDA = "l2_lambda"


EXCHANGEABLE = (
    HyperparameterKind.LEARNING_RATE,
    HyperparameterKind.DROPOUT_RATE,
    HyperparameterKind.LANGEVIN_TEMPERATURE,
    HyperparameterKind.BATCH_SIZE,
)

# Sign conventions for the exchange exponent. "detailed_balance" keeps the
# product of Gibbs distributions stationary; "as_printed" is the algorithm
# listing's literal C (b_m - b_n)(L_m - L_n), which does not.
DETAILED_BALANCE = "detailed_balance"
AS_PRINTED = "as_printed"


def beta_of(kind, value) -> float:
    """Inverse temperature implied by a hyperparameter value.

    More training noise maps to smaller beta: 1/lr, dropout retention 1-d,
    1/T, and the batch size itself.
    """
    kind = HyperparameterKind(kind)
    v = float(value)
    if kind is HyperparameterKind.LEARNING_RATE:
        if not v > 0:
            raise ValueError(f"learning rate must be > 0, got {value}")
        return 1.0 / v
    if kind is HyperparameterKind.DROPOUT_RATE:
        if not 0.0 <= v < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {value}")
        return 1.0 - v
    if kind is HyperparameterKind.LANGEVIN_TEMPERATURE:
        if not v > 0:
            raise ValueError(f"temperature must be > 0, got {value}")
        return 1.0 / v
    if kind is HyperparameterKind.BATCH_SIZE:
        if v < 1 or v != int(v):
            raise ValueError(f"batch size must be an integer >= 1, got {value}")
        return v
    raise ValueError(f"{kind.value} has no inverse-temperature mapping and cannot be exchanged")


@dataclass(frozen=True)
class Ladder:
    kind: HyperparameterKind
    values: tuple
    betas: tuple[float, ...]
    C: float = 1.0

    @property
    def M(self) -> int:
        return len(self.values)

    @property
    def hottest(self) -> int:
        return 0

    @property
    def coldest(self) -> int:
        return len(self.values) - 1


def build_ladder(kind, values, C: float = 1.0) -> Ladder:
    """Sort values by ascending beta; adjacency is defined on that order."""
    kind = HyperparameterKind(kind)
    if kind not in EXCHANGEABLE:
        raise ValueError(f"{kind.value} cannot form an exchange ladder")
    if not C > 0:
        raise ValueError(f"exchange normalization C must be > 0, got {C}")
    values = list(values)
    if len(values) < 2:
        raise ValueError("a ladder needs at least 2 values")
    if len(set(values)) != len(values):
        raise ValueError(f"ladder values must be distinct, got {values}")
    if kind is HyperparameterKind.BATCH_SIZE:
        values = [int(v) for v in values]
    else:
        values = [float(v) for v in values]
    pairs = sorted((beta_of(kind, v), v) for v in values)
    betas = tuple(b for b, _ in pairs)
    assert all(a < b for a, b in zip(betas, betas[1:])), "beta mapping is not injective"
    return Ladder(kind, tuple(v for _, v in pairs), betas, float(C))


def with_C(ladder: Ladder, C: float) -> Ladder:
    return build_ladder(ladder.kind, ladder.values, C)


def exchange_delta(ladder: Ladder, slot_m: int, slot_n: int, loss_m: float, loss_n: float, convention=DETAILED_BALANCE) -> float:
    """Metropolis exponent for swapping the configurations at two adjacent slots.

    Delta = C (b_m - b_n)(L_n - L_m): moving the lower loss to the colder
    slot gives Delta <= 0 and is always accepted.
    """
    if abs(slot_m - slot_n) != 1:
        raise ValueError(f"slots {slot_m} and {slot_n} are not adjacent")
    if not (math.isfinite(loss_m) and math.isfinite(loss_n)):
        raise ValueError(f"non-finite loss in exchange: {loss_m}, {loss_n}")
    db = ladder.betas[slot_m] - ladder.betas[slot_n]
    dl = (loss_m - loss_n) if convention == AS_PRINTED else (loss_n - loss_m)
    return ladder.C * db * dl


def accepts(delta: float, u: float | None) -> bool:
    return delta <= 0 or (u is not None and u < math.exp(-delta))


@dataclass(frozen=True)
class ExchangeEvent:
    step: int
    slots: tuple[int, int]
    replicas: tuple[int, int]
    loss_m: float
    loss_n: float
    beta_m: float
    beta_n: float
    C: float
    delta: float | None
    u: float | None
    accepted: bool
    note: str = ""

    def to_record(self) -> dict:
        d = asdict(self)
        d["slots"] = list(self.slots)
        d["replicas"] = list(self.replicas)
        return d

    @classmethod
    def from_record(cls, d: dict) -> ExchangeEvent:
        d = dict(d)
        d["slots"] = tuple(d["slots"])
        d["replicas"] = tuple(d["replicas"])
        return cls(**d)


@dataclass
class AcceptanceStats:
    n_pairs: int
    proposals: int = 0
    accepts: int = 0
    pair_proposals: list[int] = field(default_factory=list)
    pair_accepts: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.pair_proposals:
            self.pair_proposals = [0] * self.n_pairs
            self.pair_accepts = [0] * self.n_pairs

    @property
    def alpha(self) -> float:
        return self.accepts / self.proposals if self.proposals else float("nan")

    def record(self, event: ExchangeEvent) -> None:
        k = min(event.slots)
        self.proposals += 1
        self.pair_proposals[k] += 1
        if event.accepted:
            self.accepts += 1
            self.pair_accepts[k] += 1

    def pair_alpha(self) -> list[float]:
        return [a / p if p else float("nan") for a, p in zip(self.pair_accepts, self.pair_proposals)]


def slot_owner(replicas, slot: int) -> Replica:
    for r in replicas:
        if r.slot == slot:
            return r
    raise LookupError(f"no replica holds slot {slot}")


def propose_exchange(replicas, ladder: Ladder, validation_loss_fn, exchange_rng, step: int = 0, convention=DETAILED_BALANCE) -> ExchangeEvent:
    """Pick one adjacent slot pair uniformly and apply the Metropolis swap.

    Only ``slot`` attributes change on acceptance; weights stay put.
    """
    k = int(exchange_rng.integers(ladder.M - 1))
    m, n = slot_owner(replicas, k), slot_owner(replicas, k + 1)
    common = dict(step=step, slots=(k, k + 1), replicas=(m.id, n.id), beta_m=ladder.betas[k], beta_n=ladder.betas[k + 1], C=ladder.C)
    if m.diverged or n.diverged:
        return ExchangeEvent(loss_m=float("nan"), loss_n=float("nan"), delta=None, u=None, accepted=False, note="diverged", **common)
    loss_m, loss_n = float(validation_loss_fn(m)), float(validation_loss_fn(n))
    delta = exchange_delta(ladder, k, k + 1, loss_m, loss_n, convention)
    u = None if delta <= 0 else float(exchange_rng.random())
    ok = accepts(delta, u)
    if ok:
        m.slot, n.slot = n.slot, m.slot
    return ExchangeEvent(loss_m=loss_m, loss_n=loss_n, delta=delta, u=u, accepted=ok, **common)


def exchange_steps(init_steps: int, exchange_interval: int, total_steps: int) -> list[int]:
    """Proposal times: init + k * interval for k >= 1, strictly before the end."""
    return list(range(init_steps + exchange_interval, total_steps, exchange_interval))


# --- running -----------------------------------------------------------------

_WORKER_TASK = None


def _init_worker(task):
    global _WORKER_TASK
    _WORKER_TASK = task


def _segment(task, replica: Replica, kind, value, n_steps, want_val, want_train, record):
    traj, error = None, None
    if n_steps and not replica.diverged:
        try:
            traj = task.advance(replica, kind, value, n_steps, record=record)
        except (DivergenceError, FloatingPointError) as exc:
            replica.diverged = True
            error = str(exc)
    val = train = verr = None
    if not replica.diverged:
        if want_val:
            val = task.validation_loss(replica.weights)
        if want_train:
            train = task.train_loss(replica.weights)
            verr = task.validation_error(replica.weights)
    return replica, traj, error, val, train, verr


def _worker_segment(args):
    return _segment(_WORKER_TASK, *args)


@dataclass
class PTResult:
    replicas: list[Replica]
    events: list[ExchangeEvent]
    stats: AcceptanceStats
    metrics: list[dict]
    ladder: Ladder
    diverged: list[dict] = field(default_factory=list)
    trace: np.ndarray | None = None
    slot_trace: np.ndarray | None = None

    def slot_samples(self, slot: int, burn_in: int = 0) -> np.ndarray:
        """Pooled recorded weights that sat at ``slot``, after ``burn_in`` steps."""
        if self.trace is None:
            raise ValueError("run was not recorded")
        mask = self.slot_trace[burn_in:] == slot
        return self.trace[burn_in:][mask]


def _metric_row(step, rep: Replica, ladder: Ladder, val, train, verr) -> dict:
    row = {
        "step": step,
        "replica": rep.id,
        "slot": rep.slot,
        "value": ladder.values[rep.slot],
        "train_loss": train,
        "val_loss": val,
    }
    if verr is not None:
        row["val_error"] = verr
    row["displacement"] = float(np.linalg.norm(rep.weights - rep.initial_weights))
    if rep.diverged:
        row["diverged"] = True
    return row


def run_parallel_tempering(
    task,
    ladder: Ladder,
    init_steps: int,
    exchange_interval: int,
    total_steps: int,
    seeds,
    exchange_seed: int,
    eval_interval: int | None = None,
    workers: int = 1,
    record: bool = False,
    exchanges: bool = True,
    convention=DETAILED_BALANCE,
) -> PTResult:
    """Train M replicas for ``total_steps`` with an exchange proposal every
    ``exchange_interval`` steps after the first ``init_steps``.

    Replica i starts in slot i with seed ``seeds[i]``; the exchange decisions
    draw only from their own stream seeded by ``exchange_seed``, so results
    do not depend on ``workers``. Metric rows are taken at step 0, every
    ``eval_interval`` steps and at the end. ``record`` keeps every step's
    weights and slot assignment (for analytic-potential verification).
    """
    if init_steps < 0 or exchange_interval < 1 or total_steps <= init_steps:
        raise ValueError("need init_steps >= 0, exchange_interval >= 1 and total_steps > init_steps")
    if len(seeds) != ladder.M:
        raise ValueError(f"{len(seeds)} seeds for {ladder.M} replicas")
    eval_interval = exchange_interval if eval_interval is None else eval_interval
    kind = ladder.kind.value
    replicas = [task.make_replica(i, int(s), i) for i, s in enumerate(seeds)]
    ex_rng = np.random.default_rng(exchange_seed)
    stats = AcceptanceStats(ladder.M - 1)
    events, metrics, diverged = [], [], []

    proposal_times = set(exchange_steps(init_steps, exchange_interval, total_steps)) if exchanges else set()
    eval_times = set(range(eval_interval, total_steps, eval_interval)) | {total_steps}
    boundaries = sorted(proposal_times | eval_times)

    trace = slot_trace = None
    if record:
        dim = len(replicas[0].weights)
        trace = np.full((total_steps, ladder.M, dim), np.nan)
        slot_trace = np.empty((total_steps, ladder.M), dtype=np.int16)

    for r in replicas:
        metrics.append(_metric_row(0, r, ladder, task.validation_loss(r.weights), task.train_loss(r.weights), task.validation_error(r.weights)))

    pool = ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(task,)) if workers > 1 else None
    try:
        t = 0
        for b in boundaries:
            n = b - t
            is_eval = b in eval_times
            jobs = [(r, kind, ladder.values[r.slot], n, True, is_eval, record) for r in replicas]
            if pool is None:
                results = [_segment(task, *j) for j in jobs]
            else:
                results = list(pool.map(_worker_segment, jobs))
            if record:
                slot_trace[t:b] = [r.slot for r in replicas]
            val_losses = {}
            for i, (rep, traj, error, val, train, verr) in enumerate(results):
                replicas[i] = rep
                if record and traj is not None:
                    trace[t:b, i] = traj
                if error is not None:  # set only on the segment that diverged
                    log.warning("replica %d diverged before step %d: %s", rep.id, b, error)
                    diverged.append({"step": b, "replica": rep.id, "slot": rep.slot, "error": error})
                val_losses[rep.id] = val
                if is_eval:
                    metrics.append(_metric_row(b, rep, ladder, val, train, verr))
            t = b
            if b in proposal_times:
                ev = propose_exchange(replicas, ladder, lambda r: val_losses[r.id], ex_rng, b, convention)
                events.append(ev)
                if ev.note != "diverged":
                    stats.record(ev)
    finally:
        if pool is not None:
            pool.shutdown()
    return PTResult(replicas, events, stats, metrics, ladder, diverged, trace, slot_trace)


def run_independent(task, ladder: Ladder, total_steps: int, seeds, eval_interval: int, workers: int = 1) -> PTResult:
    """Grid search: every replica trains alone at its own slot, no coupling."""
    kind = ladder.kind.value
    eval_times = sorted(set(range(eval_interval, total_steps, eval_interval)) | {total_steps})
    jobs = [(task, kind, ladder, i, int(s), total_steps, eval_times) for i, s in enumerate(seeds)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            outs = list(pool.map(_independent_one, jobs))
    else:
        outs = [_independent_one(j) for j in jobs]
    replicas = [o[0] for o in outs]
    metrics = sorted((row for o in outs for row in o[1]), key=lambda r: (r["step"], r["replica"]))
    diverged = [d for o in outs for d in o[2]]
    return PTResult(replicas, [], AcceptanceStats(ladder.M - 1), metrics, ladder, diverged)


def _independent_one(args):
    task, kind, ladder, i, seed, total_steps, eval_times = args
    r = task.make_replica(i, seed, i)
    rows = [_metric_row(0, r, ladder, task.validation_loss(r.weights), task.train_loss(r.weights), task.validation_error(r.weights))]
    diverged = []
    t = 0
    for b in eval_times:
        r, _, error, val, train, verr = _segment(task, r, kind, ladder.values[i], b - t, True, True, False)
        if error is not None:
            diverged.append({"step": b, "replica": r.id, "slot": r.slot, "error": error})
        rows.append(_metric_row(b, r, ladder, val, train, verr))
        t = b
    return r, rows, diverged


# --- calibration of C --------------------------------------------------------


class CalibrationError(ValueError):
    def __init__(self, message, achievable):
        super().__init__(message)
        self.achievable = achievable


@dataclass(frozen=True)
class Calibration:
    C: float
    predicted_acceptance: float
    target: float
    achievable: tuple[float, float]


def _pair_exponents(loss_samples, betas, n_resample, rng, convention=DETAILED_BALANCE) -> list[np.ndarray]:
    """Per adjacent slot pair, resampled values of Delta / C."""
    out = []
    for k in range(len(betas) - 1):
        lm = np.asarray(loss_samples[k], dtype=np.float64)
        ln = np.asarray(loss_samples[k + 1], dtype=np.float64)
        if n_resample is None:
            a, b = np.meshgrid(lm, ln, indexing="ij")
            a, b = a.ravel(), b.ravel()
        else:
            a = lm[rng.integers(len(lm), size=n_resample)]
            b = ln[rng.integers(len(ln), size=n_resample)]
        dl = (a - b) if convention == AS_PRINTED else (b - a)
        out.append((betas[k] - betas[k + 1]) * dl)
    return out


def _mean_acceptance(C, exponents) -> float:
    return float(np.mean([np.mean(np.exp(-np.maximum(C * x, 0.0))) for x in exponents]))


def predicted_acceptance(C: float, loss_samples, betas, n_resample=None, rng=None, convention=DETAILED_BALANCE) -> float:
    """Mean over adjacent pairs of E[min(1, exp(-Delta))] under independent
    draws from the recorded per-slot loss samples (all pairs if ``n_resample``
    is None)."""
    rng = np.random.default_rng(0) if rng is None else rng
    return _mean_acceptance(C, _pair_exponents(loss_samples, betas, n_resample, rng, convention))


def calibrate_C(
    loss_samples,
    betas,
    band=(0.2, 0.5),
    target: float | None = None,
    n_resample: int | None = 20000,
    seed: int = 0,
    convention=DETAILED_BALANCE,
) -> Calibration:
    """Choose C so the predicted mean adjacent-pair acceptance hits ``target``
    (default: band midpoint) by bisection on log C.

    ``loss_samples[k]`` are validation losses recorded at slot k during a
    preliminary run without exchanges.
    """
    lo, hi = band
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError(f"invalid acceptance band {band}")
    if len(loss_samples) != len(betas):
        raise ValueError("need one loss sample set per ladder slot")
    rng = np.random.default_rng(seed)
    xs = _pair_exponents(loss_samples, betas, n_resample, rng, convention)
    if all(np.all(x == 0) for x in xs):
        return Calibration(1.0, 1.0, 1.0, (1.0, 1.0))
    floor = float(np.mean([np.mean(x <= 0) for x in xs]))
    if floor >= hi:
        raise CalibrationError(
            f"acceptance cannot drop below {floor:.3f} for any C; band {band} unreachable "
            "(loss histograms favour the hotter slots or coincide)",
            (floor, 1.0),
        )
    if target is None:
        target = 0.5 * (max(lo, floor) + hi)
    target = min(max(target, floor + 1e-9), 1.0 - 1e-9)
    a, b = -30.0, 30.0
    for _ in range(200):
        mid = 0.5 * (a + b)
        if _mean_acceptance(math.exp(mid), xs) > target:
            a = mid
        else:
            b = mid
        if b - a < 1e-10:
            break
    C = math.exp(0.5 * (a + b))
    return Calibration(C, _mean_acceptance(C, xs), target, (floor, 1.0))


def preliminary_loss_samples(task, ladder: Ladder, seeds, total_steps: int, sample_interval: int, tail_fraction: float = 0.5):
    """Run every slot without exchanges; collect validation losses over the
    tail of the run, one list per slot."""
    start = int(total_steps * (1.0 - tail_fraction))
    kind = ladder.kind.value
    samples = []
    for i, s in enumerate(seeds):
        r = task.make_replica(i, int(s), i)
        t, vals = 0, []
        for b in range(sample_interval, total_steps + 1, sample_interval):
            r, _, error, val, *_ = _segment(task, r, kind, ladder.values[i], b - t, True, False, False)
            t = b
            if error is not None:
                raise DivergenceError(f"replica {i} diverged during calibration: {error}")
            if b >= start:
                vals.append(val)
        samples.append(np.asarray(vals))
    return samples
