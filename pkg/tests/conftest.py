import numpy as np
import pytest

from panc_risk.preprocess import FeatureMatrix


def make_matrix(X, y, names=None, categories=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    names = tuple(names or (f"f{j}" for j in range(p)))
    return FeatureMatrix(X, ~np.isnan(X), names, np.asarray(y, bool), tuple(f"r{i}" for i in range(n)),
                         categories or {})


@pytest.fixture
def matrix_factory():
    return make_matrix


@pytest.fixture(scope="session")
def table3_cohort():
    from panc_risk.cohort import apply_exclusions, generate_synthetic, table3_spec

    cohort, _ = apply_exclusions(generate_synthetic(table3_spec(), 11))
    return cohort


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, passed, detail):
        ACCEPTANCE[number] = (passed, detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
