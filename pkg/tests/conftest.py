import numpy as np
import pytest

from mbtshap.data import Dataset
from mbtshap.scenarios import ScenarioConfig, generate_scenario
from mbtshap.shapley import MBTExplainer, PipelineConfig

ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    """Store a pass/fail line for the acceptance summary."""
    prev = ACCEPTANCE.get(criterion)
    ok = bool(ok) and (prev is None or prev[0])
    detail = detail if prev is None else f"{prev[1]}; {detail}"
    ACCEPTANCE[criterion] = (ok, detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def linear0():
    return generate_scenario(ScenarioConfig("linear", 0.0, seed=0))


@pytest.fixture(scope="session")
def interaction0():
    return generate_scenario(ScenarioConfig("interaction", 0.0, seed=0))


@pytest.fixture(scope="session")
def linear0_explainer(linear0):
    return MBTExplainer(PipelineConfig(seed=0)).fit(linear0.train)


@pytest.fixture(scope="session")
def interaction0_explainer(interaction0):
    return MBTExplainer(PipelineConfig(seed=0)).fit(interaction0.train)


@pytest.fixture(scope="session")
def small_interaction():
    """Correlated interaction data small enough for unit tests."""
    sc = generate_scenario(ScenarioConfig("interaction", 0.5, n_train=3000, n_test=500, n_explain=50, seed=5))
    ex = MBTExplainer(PipelineConfig(seed=1, max_depth=3, tune=False)).fit(sc.train)
    return sc, ex


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def toy_dataset(n=400, p=3, seed=0):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, p))
    return Dataset(tuple(f"x{j}" for j in range(p)), X, X.sum(axis=1))
