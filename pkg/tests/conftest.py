import pytest

from hyperswap.config import config_from_dict


def small_mlp(**over):
    d = {
        "mode": "pt",
        "data": {"source": "two_moons", "n": 200, "noise_sd": 0.2},
        "objective": {"kind": "mlp", "mlp": {"hidden": [8]}},
        "ladder": {"kind": "dropout_rate", "values": [0.0, 0.2, 0.4], "C": 1.0},
        "schedule": {"init_steps": 50, "exchange_interval": 25, "total_steps": 300},
        "optimizer": {"learning_rate": 0.1, "batch_size": 16},
    }
    for k, v in over.items():
        d[k] = {**d[k], **v} if isinstance(v, dict) and isinstance(d.get(k), dict) else v
    return d


def small_potential(**over):
    d = {
        "mode": "gibbs-check",
        "objective": {"kind": "potential", "potential": {"kind": "double_well_1d", "step": 0.01}},
        "ladder": {"kind": "langevin_temperature", "values": [1.0, 0.5]},
        "schedule": {"exchange_interval": 10, "total_steps": 2000, "eval_interval": 500},
    }
    d.update(over)
    return d


@pytest.fixture
def mlp_cfg():
    return lambda **over: config_from_dict(small_mlp(**over))


_CRITERIA: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion; the lines are
    printed as they happen and again in the terminal summary."""

    def report(name: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        _CRITERIA.append(line)
        with request.config.pluginmanager.get_plugin("capturemanager").global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
