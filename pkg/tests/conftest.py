import numpy as np
import pytest

from roughweak.experiments import joint_factor
from roughweak.kernels_cov import HurstParams, TimeGrid
from roughweak.path_sampler import sample_joint_paths


@pytest.fixture(scope="session")
def batch_factory():
    """Cached sampler: (H, T, n, M, seed) -> PathBatch."""
    cache = {}

    def make(H, T, n, M, seed=0):
        key = (H, T, n, M, seed)
        if key not in cache:
            grid, hp = TimeGrid(T, n), HurstParams(H)
            cache[key] = sample_joint_paths(joint_factor(grid, hp), grid, hp, M, seed)
        return cache[key]

    return make


def within_se(estimate, target, se, k=5.0):
    return np.all(np.abs(np.asarray(estimate) - np.asarray(target)) <= k * np.asarray(se))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Record one acceptance verdict; the line is echoed in the terminal summary."""

    def _record(criterion: int, ok: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
