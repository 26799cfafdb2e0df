import csv
import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hyperswap.diffusion import (
    DiffusionCurve,
    classify_smoothing,
    curves_to_csv,
    final_window_mean,
    has_plateau,
    record_displacement,
    run_diffusion_experiment,
)
from hyperswap.landscape import AnalyticPotential
from hyperswap.tasks import LangevinTask


def test_displacement_examples():
    w = np.array([1.0, -2.0, 3.5])
    assert record_displacement(w, w) == 0.0
    assert record_displacement([3.0, 4.0], [0.0, 0.0]) == 5.0


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=30))
def test_displacement_matches_naive_sum(pairs):
    a = [p[0] for p in pairs]
    b = [p[1] for p in pairs]
    naive = sum((x - y) ** 2 for x, y in zip(a, b)) ** 0.5
    assert record_displacement(a, b) == pytest.approx(naive, rel=1e-12, abs=1e-12)


def test_displacement_length_mismatch():
    with pytest.raises(ValueError):
        record_displacement([1.0, 2.0], [1.0])


def test_curve_rejects_nonzero_origin():
    with pytest.raises(ValueError):
        DiffusionCurve(0, 1.0, 0, 0, [0, 10], [0.5, 1.0])
    with pytest.raises(ValueError):
        DiffusionCurve(0, 1.0, 0, 0, [0, 10, 10], [0.0, 1.0, 1.0])


def _quadratic_task():
    return LangevinTask(AnalyticPotential("quadratic", a=1.0), step=1e-2, start=[0.0])


def test_identical_values_give_identical_curves():
    curves = run_diffusion_experiment(_quadratic_task(), "langevin_temperature", [0.5, 0.5], [3], 500, 50)
    assert curves[0].displacements == curves[1].displacements


def test_hotter_langevin_diffuses_further():
    seeds = range(5)
    curves = run_diffusion_experiment(_quadratic_task(), "langevin_temperature", [0.1, 1.0], seeds, 3000, 100)
    cold = [final_window_mean(c) for c in curves if c.value == 0.1]
    hot = [final_window_mean(c) for c in curves if c.value == 1.0]
    assert np.mean(hot) > np.mean(cold)
    v = classify_smoothing(curves, "langevin_temperature", more_noise="increasing")
    assert v.score == pytest.approx(1.0) and v.temperature_like


def test_origin_invariant():
    curves = run_diffusion_experiment(_quadratic_task(), "langevin_temperature", [0.2, 0.4], [0], 1000, 100, origin_step=300)
    for c in curves:
        assert c.steps[0] == 300 and c.displacements[0] == 0.0
        assert c.steps[-1] == 1000


def test_experiment_validation():
    task = _quadratic_task()
    with pytest.raises(ValueError):
        run_diffusion_experiment(task, "langevin_temperature", [0.5], [0], 100, 10)
    with pytest.raises(ValueError):
        run_diffusion_experiment(task, "langevin_temperature", [0.5, 1.0], [0], 100, 10, origin_step=15)


def _synthetic(values, slope_of, seeds=3, n=41):
    out = []
    steps = list(range(0, 10 * n, 10))
    for i, v in enumerate(values):
        for s in range(seeds):
            d = [slope_of(v) * np.sqrt(t) for t in steps]
            out.append(DiffusionCurve(i, v, s, 0, steps, d))
    return out


def test_classify_perfect_order_and_orientation():
    curves = _synthetic([0.0, 0.25, 0.5], lambda v: 1 + v)
    assert classify_smoothing(curves, more_noise="increasing").score == pytest.approx(1.0)
    assert classify_smoothing(curves, more_noise="decreasing").score == pytest.approx(-1.0)


def test_classify_flat_is_zero():
    curves = _synthetic([1, 2, 3], lambda v: 1.0)
    v = classify_smoothing(curves)
    assert v.score == 0.0 and not v.temperature_like


def test_classify_needs_three_seeds():
    with pytest.raises(ValueError, match="3 seeds"):
        classify_smoothing(_synthetic([1, 2], lambda v: v, seeds=2))


def test_plateau_detection():
    steps = list(range(0, 1000, 10))
    sat = DiffusionCurve(0, 1.0, 0, 0, steps, [1 - np.exp(-t / 100) for t in steps])
    lin = DiffusionCurve(0, 1.0, 0, 0, steps, [t / 1000 for t in steps])
    assert has_plateau(sat)
    assert not has_plateau(lin)


def test_final_window_mean():
    c = DiffusionCurve(0, 1.0, 0, 0, list(range(0, 110, 10)), [0.0] + [1.0] * 9 + [3.0])
    # last 10% of [0, 100] is steps >= 90: values 1 and 3
    assert final_window_mean(c) == 2.0


def test_subsample_keeps_last():
    c = DiffusionCurve(0, 1.0, 0, 0, list(range(0, 110, 10)), [0.0] + list(np.arange(1.0, 11.0)))
    s = c.subsample(4)
    assert s.steps == [0, 40, 80, 100]


def test_csv_round_trip():
    curves = run_diffusion_experiment(_quadratic_task(), "langevin_temperature", [0.2, 0.4], [0, 1], 200, 50)
    rows = list(csv.DictReader(io.StringIO(curves_to_csv(curves))))
    assert len(rows) == sum(len(c.steps) for c in curves)
    assert float(rows[1]["displacement"]) == curves[0].displacements[1]
