"""Config-driven orchestration and on-disk run records.

A run directory holds::

    config.yaml         the fully defaulted config that was executed
    run.json            status, config hash, summary (acceptance, best replica, ...)
    metrics.jsonl       one row per (evaluation step, replica)
    events.jsonl        one row per exchange proposal (pt, gibbs-check)
    diffusion.csv       diffusion curves (diffusion mode)
    checkpoints/replica_<i>.ckpt

Every file is written to a temp name and renamed into place. If a run
fails, run.json records ``status: failed`` and nothing half-written is left
under a final name.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import ExperimentConfig, config_from_dict, config_hash, dump_config, to_dict
from .data import SplitSpec, normalize_per_feature_mean, read_idx, split, synth_blobs, synth_two_moons
from .diffusion import DiffusionCurve, classify_smoothing, curves_to_csv, run_diffusion_experiment
from .gibbs import mixing_report, slot_history, slot_tv
from .landscape import AnalyticPotential
from .nn import MlpSpec, RegularizerConfig
from .optimizer import SgdConfig
from .records import Checkpoint, dumps_jsonl, read_jsonl, save_checkpoint, write_atomic
from .tasks import LangevinTask, SgdTask
from .tempering import (
    ExchangeEvent,
    build_ladder,
    calibrate_C,
    preliminary_loss_samples,
    run_independent,
    run_parallel_tempering,
)

log = logging.getLogger(__name__)

PLOTS = ("error_curves", "exchange_trajectory", "acceptance", "diffusion")


class RunFailed(RuntimeError):
    pass


# --- building blocks from a config -------------------------------------------


def build_datasets(cfg: ExperimentConfig):
    d = cfg.data
    if d.source == "two_moons":
        ds = synth_two_moons(d.n, d.noise_sd, d.seed)
    elif d.source == "blobs":
        ds = synth_blobs(d.n, d.k, d.spread, d.seed, d.dim, d.center_box)
    else:
        ds = read_idx(d.images, d.labels)
    train, val = split(ds, SplitSpec(d.validation_fraction, d.split_seed))
    if d.normalize:
        train, val = normalize_per_feature_mean(train, val)
    return train, val


def build_potential(cfg: ExperimentConfig) -> AnalyticPotential:
    p = cfg.objective.potential
    return AnalyticPotential(p.kind, a=p.a, h=p.h, anisotropy=p.anisotropy)


def build_task(cfg: ExperimentConfig):
    if cfg.objective.kind == "potential":
        p = cfg.objective.potential
        return LangevinTask(build_potential(cfg), p.step, p.start)
    train, val = build_datasets(cfg)
    m = cfg.objective.mlp
    spec = MlpSpec((train.n_features, *m.hidden, train.n_classes), m.activation, m.output)
    o = cfg.optimizer
    sgd = SgdConfig(o.learning_rate, o.batch_size, o.momentum, tuple(map(tuple, o.anneal_schedule)))
    reg = RegularizerConfig(o.dropout_rate, o.l2_lambda)
    return SgdTask(spec, train, val, sgd, reg, o.ladder_start_step)


def layout_sizes(task) -> tuple[int, ...]:
    if isinstance(task, SgdTask):
        return task.spec.layer_sizes
    return (task.potential.dim,)


def with_seed_override(cfg: ExperimentConfig, k: int) -> ExperimentConfig:
    """Replica seeds k..k+M-1, exchange seed k+M, diffusion seeds k.."""
    d = to_dict(cfg)
    M = cfg.M
    d["seeds"] = {"replicas": [k + i for i in range(M)], "exchange": k + M}
    d["diffusion"]["seeds"] = [k + i for i in range(len(cfg.diffusion.seeds))]
    return config_from_dict(d)


def with_mode(cfg: ExperimentConfig, mode: str) -> ExperimentConfig:
    d = to_dict(cfg)
    d["mode"] = mode
    return config_from_dict(d)


# --- run record ----------------------------------------------------------------


@dataclass
class RunRecord:
    out_dir: Path
    config: ExperimentConfig
    config_hash: str
    status: str
    summary: dict = field(default_factory=dict)
    metrics: list[dict] = field(default_factory=list)
    events: list[ExchangeEvent] = field(default_factory=list)
    curves: list[DiffusionCurve] = field(default_factory=list)

    @property
    def mode(self) -> str:
        return self.config.mode

    @property
    def ok(self) -> bool:
        return self.status == "completed"


def best_replica(metrics) -> int | None:
    """Replica with the lowest final validation loss (ties: lowest id)."""
    final = max(r["step"] for r in metrics)
    rows = [r for r in metrics if r["step"] == final and not r.get("diverged")]
    if not rows:
        return None
    return min(rows, key=lambda r: (r["val_loss"], r["replica"]))["replica"]


def _summary_of(result) -> dict:
    best = best_replica(result.metrics)
    out = {
        "acceptance": result.stats.alpha,
        "pair_acceptance": result.stats.pair_alpha(),
        "proposals": len(result.events),
        "best_replica": best,
        "diverged": result.diverged,
    }
    if best is not None:
        final = max(r["step"] for r in result.metrics)
        row = next(r for r in result.metrics if r["step"] == final and r["replica"] == best)
        out["best_val_loss"] = row["val_loss"]
        if "val_error" in row:
            out["best_val_error"] = row["val_error"]
    return out


def _write_checkpoints(out: Path, result, sizes, step: int) -> None:
    for r in result.replicas:
        save_checkpoint(out / "checkpoints" / f"replica_{r.id}.ckpt", Checkpoint(r.id, r.slot, step, sizes, r.weights))


def _write_run_json(out: Path, cfg, h, status, summary, error=None) -> None:
    doc = {"version": __version__, "mode": cfg.mode, "config_hash": h, "status": status, "summary": summary}
    if error is not None:
        doc["error"] = error
    write_atomic(out / "run.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --- modes ---------------------------------------------------------------------


def _calibrate(cfg: ExperimentConfig, task):
    cal = cfg.calibration
    ladder = build_ladder(cfg.ladder.kind, cfg.ladder.values)
    steps = cal.steps or cfg.schedule.total_steps
    samples = preliminary_loss_samples(task, ladder, cfg.seeds.replicas, steps, cal.sample_interval, cal.tail_fraction)
    c = calibrate_C(samples, ladder.betas, tuple(cal.band), cal.target, cal.resamples, cal.seed, cfg.ladder.convention)
    return c, samples


def _resolve_C(cfg, task, summary) -> float:
    if cfg.ladder.C != "auto":
        return float(cfg.ladder.C)
    c, _ = _calibrate(cfg, task)
    summary["calibration"] = {"C": c.C, "predicted_acceptance": c.predicted_acceptance, "target": c.target}
    log.info("calibrated C=%.6g (predicted acceptance %.3f)", c.C, c.predicted_acceptance)
    return c.C


def _run_train(cfg, task, out, workers):
    s = cfg.schedule
    summary = {}
    if cfg.mode == "grid":
        ladder = build_ladder(cfg.ladder.kind, cfg.ladder.values)
        result = run_independent(task, ladder, s.total_steps, cfg.seeds.replicas, s.eval_interval, workers)
    else:
        C = _resolve_C(cfg, task, summary)
        ladder = build_ladder(cfg.ladder.kind, cfg.ladder.values, C)
        result = run_parallel_tempering(
            task, ladder, s.init_steps, s.exchange_interval, s.total_steps, cfg.seeds.replicas,
            cfg.seeds.exchange, s.eval_interval, workers, convention=cfg.ladder.convention,
        )
        summary["C"] = C
    summary.update(_summary_of(result))
    write_atomic(out / "metrics.jsonl", dumps_jsonl(result.metrics))
    if cfg.mode == "pt":
        write_atomic(out / "events.jsonl", dumps_jsonl(e.to_record() for e in result.events))
    _write_checkpoints(out, result, layout_sizes(task), s.total_steps)
    return summary, result.metrics, result.events, []


def _run_diffusion(cfg, task, out, workers):
    d = cfg.diffusion
    curves = run_diffusion_experiment(
        task, cfg.ladder.kind.value, cfg.ladder.values, d.seeds, cfg.schedule.total_steps, d.interval, d.origin_step
    )
    write_atomic(out / "diffusion.csv", curves_to_csv(curves))
    summary = {"diverged": [{"value": c.value, "seed": c.seed} for c in curves if c.diverged]}
    if len(d.seeds) >= 3:
        v = classify_smoothing(curves, cfg.ladder.kind.value, d.more_noise, d.threshold, d.plateau_fraction, d.window)
        summary["verdict"] = {
            "score": v.score,
            "temperature_like": v.temperature_like,
            "threshold": v.threshold,
            "final_displacement": {repr(k): m for k, m in v.final_displacement.items()},
            "plateau_detected": [{"value": k[0], "seed": k[1], "plateau": p} for k, p in v.plateau_detected.items()],
        }
    return summary, [], [], curves


def _run_gibbs(cfg, task, out, workers):
    s, g = cfg.schedule, cfg.gibbs
    # on an analytic potential the losses are exact energies, so C=1 is the
    # detailed-balance value; "auto" means that here
    C = 1.0 if cfg.ladder.C == "auto" else float(cfg.ladder.C)
    ladder = build_ladder(cfg.ladder.kind, cfg.ladder.values, C)
    pt = run_parallel_tempering(
        task, ladder, s.init_steps, s.exchange_interval, s.total_steps, cfg.seeds.replicas, cfg.seeds.exchange,
        s.eval_interval, workers, record=True, convention=cfg.ladder.convention,
    )
    burn = int(g.burn_in * s.total_steps)
    tv = slot_tv(pt, task.potential, burn, g.lo, g.hi, g.bins)
    summary = {
        "C": C,
        "acceptance": pt.stats.alpha,
        "pair_acceptance": pt.stats.pair_alpha(),
        "tv": tv,
        "tolerance": g.tolerance,
        "tv_pass": all(t <= g.tolerance for t in tv),
        "samples_per_slot": s.total_steps - burn,
    }
    if g.baseline:
        base = run_parallel_tempering(
            task, ladder, s.init_steps, s.exchange_interval, s.total_steps, cfg.seeds.replicas, cfg.seeds.exchange,
            s.eval_interval, workers, record=True, exchanges=False,
        )
        mix = mixing_report(pt, base, task.potential, burn, g.stride)
        summary["mixing"] = {
            "pt_cold_transitions": mix.pt.cold_transitions,
            "baseline_cold_transitions": mix.baseline.cold_transitions,
            "cold_ratio": mix.cold_ratio,
            "round_trips": mix.pt.round_trips,
            "pt_cold_energy_iat": mix.pt.cold_energy_iat,
            "baseline_cold_energy_iat": mix.baseline.cold_energy_iat,
        }
    write_atomic(out / "metrics.jsonl", dumps_jsonl(pt.metrics))
    write_atomic(out / "events.jsonl", dumps_jsonl(e.to_record() for e in pt.events))
    _write_checkpoints(out, pt, layout_sizes(task), s.total_steps)
    return summary, pt.metrics, pt.events, []


def _run_calibrate(cfg, task, out, workers):
    c, samples = _calibrate(cfg, task)
    doc = {
        "C": c.C,
        "predicted_acceptance": c.predicted_acceptance,
        "target": c.target,
        "achievable": list(c.achievable),
        "slot_loss_means": [float(np.mean(x)) for x in samples],
    }
    write_atomic(out / "calibration.json", json.dumps(doc, indent=2) + "\n")
    return doc, [], [], []


_MODES = {"grid": _run_train, "pt": _run_train, "diffusion": _run_diffusion, "gibbs-check": _run_gibbs, "calibrate-c": _run_calibrate}


def execute(cfg: ExperimentConfig, out_dir, workers: int = 1) -> RunRecord:
    """Run ``cfg`` and persist everything under ``out_dir``.

    Divergent replicas do not abort the run; they are reported in the
    summary and give the record status ``diverged``. Any exception marks
    run.json as failed and is re-raised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    write_atomic(out / "config.yaml", dump_config(cfg))
    _write_run_json(out, cfg, h, "running", {})
    try:
        task = build_task(cfg)
        summary, metrics, events, curves = _MODES[cfg.mode](cfg, task, out, workers)
    except BaseException as exc:
        _write_run_json(out, cfg, h, "failed", {}, f"{type(exc).__name__}: {exc}")
        raise
    status = "diverged" if summary.get("diverged") else "completed"
    _write_run_json(out, cfg, h, status, summary)
    return RunRecord(out, cfg, h, status, summary, metrics, list(events), curves)


def _read_curves(path: Path) -> list[DiffusionCurve]:
    rows = list(csv.DictReader(io.StringIO(path.read_text())))
    curves: dict = {}
    for r in rows:
        key = (float(r["value"]), int(r["seed"]))
        curves.setdefault(key, []).append((int(r["step"]), float(r["displacement"])))
    values = list(dict.fromkeys(k[0] for k in curves))
    out = []
    for (value, seed), pts in curves.items():
        out.append(DiffusionCurve(values.index(value), value, seed, pts[0][0], [p[0] for p in pts], [p[1] for p in pts]))
    return out


def load_record(out_dir) -> RunRecord:
    """Reload a finished run; fails if the config no longer matches its hash."""
    out = Path(out_dir)
    try:
        cfg = config_from_dict(yaml.safe_load((out / "config.yaml").read_text()), str(out / "config.yaml"))
        doc = json.loads((out / "run.json").read_text())
    except FileNotFoundError as exc:
        raise RunFailed(f"{out} is not a run directory: {exc.filename} missing") from None
    h = config_hash(cfg)
    if h != doc["config_hash"]:
        raise RunFailed(f"{out}: config hash mismatch ({h[:12]} vs recorded {doc['config_hash'][:12]})")
    rec = RunRecord(out, cfg, h, doc["status"], doc.get("summary", {}))
    if (out / "metrics.jsonl").exists():
        rec.metrics = read_jsonl(out / "metrics.jsonl")
    if (out / "events.jsonl").exists():
        rec.events = [ExchangeEvent.from_record(d) for d in read_jsonl(out / "events.jsonl")]
    if (out / "diffusion.csv").exists():
        rec.curves = _read_curves(out / "diffusion.csv")
    return rec


# --- plot-ready tables ---------------------------------------------------------


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def error_curves_table(record: RunRecord) -> str:
    best = best_replica(record.metrics)
    rows = [
        (m["step"], m["replica"], m["slot"], m["value"], m["val_loss"], m.get("val_error", ""), int(m["replica"] == best))
        for m in record.metrics
    ]
    return _csv(["step", "replica", "slot", "value", "val_loss", "val_error", "best_path"], rows)


def exchange_trajectory_table(record: RunRecord) -> str:
    M = record.config.M
    steps, slots = slot_history(record.events, M)
    if len(steps) == 1:
        final = max(m["step"] for m in record.metrics)
        steps, slots = np.array([0, final]), np.vstack([slots, slots])
    values = build_ladder(record.config.ladder.kind, record.config.ladder.values).values
    rows = [(int(st), i, int(row[i]), values[int(row[i])]) for st, row in zip(steps, slots) for i in range(M)]
    return _csv(["step", "replica", "slot", "value"], rows)


def acceptance_table(record: RunRecord) -> str:
    n_acc = 0
    rows = []
    for k, ev in enumerate(record.events, 1):
        n_acc += ev.accepted
        rows.append((ev.step, ev.slots[0], int(ev.accepted), n_acc / k))
    return _csv(["step", "pair", "accepted", "cumulative_acceptance"], rows)


def emit_plots(record: RunRecord, which=PLOTS, dest=None) -> list[Path]:
    """Write the requested tables as CSV files into ``dest`` (default
    ``<run>/plots``). Asking for a table the run did not produce is an error."""
    which = [which] if isinstance(which, str) else list(which)
    unknown = [w for w in which if w not in PLOTS]
    if unknown:
        raise ValueError(f"unknown plot(s) {unknown}; choose from {list(PLOTS)}")
    if record.status not in ("completed", "diverged"):
        raise ValueError(f"run at {record.out_dir} is {record.status}, not complete")
    available = set()
    if record.metrics:
        available |= {"error_curves", "exchange_trajectory"}
    if record.events:
        available.add("acceptance")
    if record.curves:
        available.add("diffusion")
    missing = [w for w in which if w not in available]
    if missing:
        raise ValueError(f"{record.mode} run at {record.out_dir} has no data for {missing}")
    dest = Path(dest) if dest is not None else record.out_dir / "plots"
    makers = {
        "error_curves": error_curves_table,
        "exchange_trajectory": exchange_trajectory_table,
        "acceptance": acceptance_table,
        "diffusion": lambda r: curves_to_csv(r.curves),
    }
    written = []
    for w in which:
        path = dest / f"{w}.csv"
        write_atomic(path, makers[w](record))
        written.append(path)
    return written
