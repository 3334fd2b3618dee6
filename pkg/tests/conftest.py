import numpy as np
import pytest

from survrerand.data import Dataset


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path_factory, monkeypatch):
    # share one truth cache per session so oracle runs are not repeated
    path = tmp_path_factory.getbasetemp() / "oracle.csv"
    monkeypatch.setenv("SURVRERAND_CACHE", str(path))


def make_dataset(time, event, arm=None, Z=None, **kw):
    time = np.asarray(time, dtype=float)
    n = time.size
    arm = np.ones(n, dtype=int) if arm is None else np.asarray(arm)
    if arm.min() == arm.max():
        # datasets need both arms; append an inert control unit
        time = np.append(time, time.max())
        event = np.append(event, 0)
        arm = np.append(arm, 1 - arm[0])
        if Z is not None:
            Z = np.vstack([Z, np.zeros((1, np.asarray(Z).shape[1]))])
    if Z is None:
        Z = np.zeros((time.size, 1))
    return Dataset(arm=arm, time=time, event=np.asarray(event), covariates=np.asarray(Z, dtype=float), **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
