import math

import numpy as np
import pytest

from fformation.geometry import Agent, Scene
from fformation.model import ModelConfig, ModelParams
from fformation.partition import GroupPartition


def random_scene(rng, n, mode="orientation", frame_id="f0", spread=4.0):
    agents = []
    for k in range(n):
        pos = tuple(rng.uniform(-spread, spread, 2))
        if mode == "orientation":
            agents.append(Agent(f"a{k}", pos, rng.uniform(0, 2 * math.pi)))
        else:
            agents.append(Agent(f"a{k}", pos, None, tuple(rng.normal(0, 0.3, 2))))
    labels = rng.integers(0, max(1, n // 2), size=n)
    truth = GroupPartition.from_labels([a.id for a in agents], labels)
    return Scene(frame_id, tuple(agents), truth)


def random_config(rng, max_width=16, use_context=True, mode="orientation"):
    def widths(max_layers):
        return tuple(int(w) for w in rng.integers(1, max_width + 1, size=rng.integers(1, max_layers + 1)))

    return ModelConfig(widths(3), widths(3), widths(2), use_context=use_context, mode=mode)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_params():
    return ModelParams.init(ModelConfig((8, 8), (8, 12), (16,)), seed=7)


def jitter_biases(params, rng, scale=0.1):
    """Zero biases put ReLUs exactly on their kink behind dead units; move them off it."""
    for layer in params.layers():
        layer.bias[:] = rng.normal(0, scale, layer.bias.shape)
    return params


# one verdict line per acceptance criterion in the terminal summary
VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config.stash[VERDICTS] = {}


@pytest.fixture
def verdict_detail(request):
    """Tests call this with a short string describing the measured numbers."""
    details = request.config.stash[VERDICTS]
    marker = request.node.get_closest_marker("criterion")

    def note(text):
        details.setdefault(marker.args[0], {})["detail"] = text

    return note


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and not report.skipped and report.passed):
        return report
    entry = item.config.stash[VERDICTS].setdefault(marker.args[0], {})
    if report.skipped:
        entry["status"] = "SKIP"
        reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
        entry.setdefault("detail", reason.removeprefix("Skipped: "))
    elif report.failed:
        entry["status"] = "FAIL"
    elif report.when == "call":
        entry["status"] = "PASS"
    entry["title"] = item.function.__doc__.strip().splitlines()[0] if item.function.__doc__ else item.name
    return report


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash[VERDICTS]
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        v = verdicts[n]
        detail = f" ({v['detail']})" if v.get("detail") else ""
        terminalreporter.write_line(f"criterion {n}: {v.get('status', 'FAIL')} - {v.get('title', '')}{detail}")
