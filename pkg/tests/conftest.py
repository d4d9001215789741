import time

import numpy as np
import pytest

from fairgu.graph import SplitMasks, graph_from_edges
from fairgu.nn import Propagation, init_params

_ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        detail = ""
        if rep.skipped and isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2]
        _ACCEPTANCE.append((marker.args[0], status, rep.duration, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, duration, detail in _ACCEPTANCE:
        line = f"{status:4}  {name}  ({duration:.1f} s)"
        if detail:
            line += f"  {detail}"
        terminalreporter.write_line(line)


@pytest.fixture
def timer():
    start = time.perf_counter()
    return lambda: time.perf_counter() - start


def small_graph(seed=0, n=8, d=4):
    """Connected 8-node graph with both label and sensitive classes present."""
    rng = np.random.default_rng(seed)
    ring = [(i, (i + 1) % n) for i in range(n)]
    chords = [(0, 4), (1, 6), (2, 5)]
    x = rng.normal(size=(n, d))
    y = np.array([0, 1, 1, 0, 1, 0, 0, 1], dtype=np.int8)[:n]
    s = np.array([0, 0, 1, 1, 0, 1, 1, 0], dtype=np.int8)[:n]
    return graph_from_edges(ring + chords, x, y, s)


@pytest.fixture
def g8():
    return small_graph()


@pytest.fixture
def masks8():
    return SplitMasks(
        train_ids=np.array([0, 1, 2, 3, 4, 5]),
        test_ids=np.array([6, 7]),
        sensitive_known_ids=np.array([0, 2, 3, 5]),
        forget_ids=np.array([1, 4]),
    )


@pytest.fixture
def params8():
    p = init_params(4, hidden=3, est_hidden=3, seed=11)
    rng = np.random.default_rng(5)
    # nonzero biases so every bias gradient is exercised
    for grp in (p.classifier, p.estimator, p.adversary):
        for k, v in grp.items():
            if k in ("b1", "b2", "c", "e1", "e0", "a0"):
                grp[k] = np.asarray(0.1 * rng.normal(size=np.shape(v)))
    return p


@pytest.fixture
def prop8(g8):
    return Propagation.from_graph(g8)


TINY = {
    "synthetic_nodes": 120, "synthetic_features": 5, "synthetic_degree": 3.0,
    "hidden": 8, "estimator_hidden": 8, "estimator_epochs": 10, "epochs": 20,
    "shadow_epochs": 10, "lr": 0.01, "estimator_lr": 0.01, "adversary_lr": 0.01,
    "alpha": 1.0, "forget_fraction": 0.1, "repeats": 2,
}


def tiny_config(**overrides):
    """A config small enough for a full train/unlearn/evaluate cycle in well under a second."""
    from fairgu.experiments import ExperimentConfig

    return ExperimentConfig(**{**TINY, **overrides})


def write_tiny_config(path, **overrides):
    values = {**TINY, **overrides}
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return path
