import numpy as np
import pytest

from covr.embeddings import normalize, tokenize
from covr.fusion import init_params
from covr.synthetic import make_task


def unit(rng: np.random.Generator, d: int) -> np.ndarray:
    return normalize(rng.standard_normal(d))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_params():
    return init_params(d=16, layers=1, heads=2, vocab=64, seed=3, max_len=16)


@pytest.fixture
def small_tokens():
    return tokenize("make it night with lights", max_len=16, vocab=64)


@pytest.fixture(scope="session")
def task():
    return make_task(n_queries=4, n_mods=2, dim=16)


@pytest.fixture
def task_files(tmp_path, task):
    return task.write(tmp_path / "data")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
