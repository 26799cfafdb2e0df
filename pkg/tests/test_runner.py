import json

import numpy as np
import pytest
import yaml

from conftest import small_mlp, small_potential
from hyperswap.config import config_from_dict
from hyperswap.gibbs import slot_history
from hyperswap.records import load_checkpoint
from hyperswap.runner import (
    RunFailed,
    best_replica,
    emit_plots,
    execute,
    load_record,
    with_mode,
    with_seed_override,
)


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_pt_run_layout(tmp_path, mlp_cfg):
    rec = execute(mlp_cfg(), tmp_path)
    assert rec.status == "completed"
    names = set(_files(tmp_path))
    assert {"config.yaml", "run.json", "metrics.jsonl", "events.jsonl"} <= names
    assert {f"checkpoints/replica_{i}.ckpt" for i in range(3)} <= names
    assert not [n for n in names if n.endswith(".tmp")]
    doc = json.loads((tmp_path / "run.json").read_text())
    assert doc["status"] == "completed" and doc["config_hash"] == rec.config_hash
    # proposals at 75, 100, ..., 275
    assert doc["summary"]["proposals"] == len(rec.events) == 9
    ck = load_checkpoint(tmp_path / "checkpoints" / "replica_0.ckpt")
    assert ck.step == 300 and ck.layer_sizes == (2, 8, 2)


def test_no_exchange_pt_equals_grid(tmp_path, mlp_cfg):
    cfg = mlp_cfg(schedule={"exchange_interval": 400, "eval_interval": 100})
    execute(cfg, tmp_path / "pt")
    execute(with_mode(cfg, "grid"), tmp_path / "grid")
    pt, grid = _files(tmp_path / "pt"), _files(tmp_path / "grid")
    assert pt["metrics.jsonl"] == grid["metrics.jsonl"]
    for i in range(3):
        assert pt[f"checkpoints/replica_{i}.ckpt"] == grid[f"checkpoints/replica_{i}.ckpt"]


def test_rerun_is_byte_identical(tmp_path, mlp_cfg):
    cfg = mlp_cfg()
    execute(cfg, tmp_path / "a")
    execute(cfg, tmp_path / "b")
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_workers_do_not_change_results(tmp_path, mlp_cfg):
    cfg = mlp_cfg()
    execute(cfg, tmp_path / "a", workers=1)
    execute(cfg, tmp_path / "b", workers=2)
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a["metrics.jsonl"] == b["metrics.jsonl"] and a["events.jsonl"] == b["events.jsonl"]


def test_replay_emits_identical_tables(tmp_path, mlp_cfg):
    rec = execute(mlp_cfg(), tmp_path / "run")
    first = {p.name: p.read_bytes() for p in emit_plots(rec, ("error_curves", "exchange_trajectory", "acceptance"))}
    again = load_record(tmp_path / "run")
    assert again.events == rec.events
    second = {p.name: p.read_bytes() for p in emit_plots(again, ("error_curves", "exchange_trajectory", "acceptance"), tmp_path / "p2")}
    assert first == second


def test_trajectory_invariants(tmp_path, mlp_cfg):
    rec = execute(mlp_cfg(), tmp_path)
    _, rows = slot_history(rec.events, 3)
    for prev, cur, ev in zip(rows, rows[1:], rec.events):
        changed = np.flatnonzero(prev != cur)
        if ev.accepted:
            assert sorted(changed) == sorted(ev.replicas)
        else:
            assert len(changed) == 0
    # the logged metric slots agree with the replayed assignment
    for m in rec.metrics:
        if m["step"] in (0, 300):
            row = rows[0] if m["step"] == 0 else rows[-1]
            assert m["slot"] == row[m["replica"]]


def test_zero_exchange_trajectory_constant(tmp_path, mlp_cfg):
    rec = execute(mlp_cfg(schedule={"exchange_interval": 400}), tmp_path)
    (path,) = emit_plots(rec, "exchange_trajectory")
    rows = path.read_text().splitlines()[1:]
    assert len(rows) == 6
    assert all(r.split(",")[1] == r.split(",")[2] for r in rows)


def test_plot_errors(tmp_path, mlp_cfg):
    rec = execute(with_mode(mlp_cfg(), "grid"), tmp_path)
    with pytest.raises(ValueError, match="no data"):
        emit_plots(rec, "acceptance")
    with pytest.raises(ValueError, match="unknown"):
        emit_plots(rec, "histogram")


def test_error_curve_marks_best(tmp_path, mlp_cfg):
    rec = execute(mlp_cfg(), tmp_path)
    (path,) = emit_plots(rec, "error_curves")
    lines = path.read_text().splitlines()
    best = [l for l in lines[1:] if l.endswith(",1")]
    assert {l.split(",")[1] for l in best} == {str(rec.summary["best_replica"])}


def test_best_replica_rule():
    rows = [
        {"step": 0, "replica": 0, "val_loss": 0.0},
        {"step": 5, "replica": 0, "val_loss": 0.3},
        {"step": 5, "replica": 1, "val_loss": 0.2},
        {"step": 5, "replica": 2, "val_loss": 0.2},
        {"step": 5, "replica": 3, "val_loss": 0.1, "diverged": True},
    ]
    assert best_replica(rows) == 1
    assert best_replica([dict(rows[4])]) is None


def test_seed_override(mlp_cfg):
    cfg = with_seed_override(mlp_cfg(), 10)
    assert cfg.seeds.replicas == [10, 11, 12]
    assert cfg.seeds.exchange == 13


def test_auto_C_is_calibrated(tmp_path):
    cfg = config_from_dict(small_mlp(ladder={"C": "auto"}, calibration={"steps": 300}))
    rec = execute(cfg, tmp_path)
    cal = rec.summary["calibration"]
    assert rec.summary["C"] == cal["C"] > 0


def test_calibrate_mode(tmp_path):
    rec = execute(config_from_dict(small_mlp(mode="calibrate-c", calibration={"steps": 300})), tmp_path)
    doc = json.loads((tmp_path / "calibration.json").read_text())
    assert doc["C"] == rec.summary["C"]
    assert len(doc["slot_loss_means"]) == 3


def test_failed_run_is_marked(tmp_path, monkeypatch):
    import hyperswap.runner as runner

    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setitem(runner._MODES, "pt", boom)
    with pytest.raises(RuntimeError):
        execute(config_from_dict(small_mlp()), tmp_path)
    doc = json.loads((tmp_path / "run.json").read_text())
    assert doc["status"] == "failed" and "disk on fire" in doc["error"]
    with pytest.raises(ValueError, match="failed"):
        emit_plots(load_record(tmp_path), "error_curves")


def test_divergent_replica_recorded(tmp_path):
    cfg = config_from_dict(small_mlp(
        objective={"kind": "mlp", "mlp": {"hidden": [8], "activation": "relu", "output": "mean_squared_error"}},
        optimizer={"learning_rate": 50.0},
    ))
    rec = execute(cfg, tmp_path)
    assert rec.status == "diverged"
    assert rec.summary["diverged"]


def test_load_record_checks(tmp_path, mlp_cfg):
    with pytest.raises(RunFailed, match="not a run directory"):
        load_record(tmp_path / "nope")
    execute(mlp_cfg(), tmp_path / "r")
    d = yaml.safe_load((tmp_path / "r" / "config.yaml").read_text())
    d["optimizer"]["learning_rate"] = 0.5
    (tmp_path / "r" / "config.yaml").write_text(yaml.safe_dump(d))
    with pytest.raises(RunFailed, match="hash mismatch"):
        load_record(tmp_path / "r")


def test_gibbs_mode(tmp_path):
    rec = execute(config_from_dict(small_potential(gibbs={"baseline": True})), tmp_path)
    s = rec.summary
    assert s["C"] == 1.0 and len(s["tv"]) == 2
    assert s["mixing"]["baseline_cold_transitions"] >= 0
    assert (tmp_path / "events.jsonl").exists()


def test_diffusion_mode(tmp_path):
    d = small_mlp(mode="diffusion", diffusion={"seeds": [0, 1, 2], "interval": 50})
    rec = execute(config_from_dict(d), tmp_path)
    assert "verdict" in rec.summary
    again = load_record(tmp_path)
    assert [c.displacements for c in again.curves] == [c.displacements for c in rec.curves]
    (path,) = emit_plots(again, "diffusion")
    assert path.read_text() == (tmp_path / "diffusion.csv").read_text()
