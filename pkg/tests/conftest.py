import warnings

import numpy as np
import pytest

from transport_tmle.data import MISSING_OUTCOME, SURVIVAL, Dataset, Schema
from transport_tmle.dgp import generate, missing_outcome_dgp, survival_dgp


@pytest.fixture(autouse=True)
def _quiet():
    # truncation and separation notices are exercised explicitly where they matter
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture(scope="session")
def missing_spec():
    return missing_outcome_dgp()


@pytest.fixture(scope="session")
def missing_vw_spec():
    return missing_outcome_dgp(v_equals_w=True)


@pytest.fixture(scope="session")
def surv_spec():
    return survival_dgp()


@pytest.fixture(scope="session")
def missing_ds(missing_spec):
    return generate(missing_spec, 2000, 11)


@pytest.fixture(scope="session")
def missing_vw_ds(missing_vw_spec):
    return generate(missing_vw_spec, 2000, 12)


@pytest.fixture(scope="session")
def surv_ds(surv_spec):
    return generate(surv_spec, 2000, 13)


@pytest.fixture
def tiny_missing():
    """Six hand-written units: two target, four source (one missing outcome)."""
    schema = Schema(("v",), ("v", "w"), MISSING_OUTCOME)
    nan = np.nan
    x = [[0, nan], [1, nan], [0, 0], [1, 1], [1, 0], [0, 1]]
    return Dataset.from_arrays(schema, s=[0, 0, 1, 1, 1, 1], x=x, a=[nan, nan, 1, 0, 1, 0],
                               delta=[nan, nan, 1, 1, 0, 1], y=[nan, nan, 1.0, 0.0, nan, 1.0])


@pytest.fixture
def tiny_survival():
    schema = Schema(("w",), ("w",), SURVIVAL, t0=2, tau=3)
    nan = np.nan
    return Dataset.from_arrays(schema, s=[0, 1, 1, 1], x=[[0], [1], [0], [1]],
                               a=[nan, 1, 0, 1], t_tilde=[nan, 3, 1, 2],
                               event=[nan, 1, 0, 0])


# -- acceptance summary ------------------------------------------------------------------

ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance_note(request):
    """Record a one-line detail for the acceptance summary of the calling test."""
    def note(text):
        ACCEPTANCE.setdefault(request.node.nodeid, {})["detail"] = text
    return note


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        ACCEPTANCE.setdefault(report.nodeid, {})["outcome"] = report.outcome
    elif "test_acceptance.py" in report.nodeid and report.failed:
        ACCEPTANCE.setdefault(report.nodeid, {})["outcome"] = "failed"


def pytest_terminal_summary(terminalreporter):
    rows = {k: v for k, v in ACCEPTANCE.items() if "outcome" in v}
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, info in sorted(rows.items(), key=lambda kv: _criterion_number(kv[0])):
        name = nodeid.split("::")[-1]
        verdict = "PASS" if info["outcome"] == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}  {info.get('detail', '')}")


def _criterion_number(nodeid):
    name = nodeid.split("::")[-1]
    digits = "".join(ch for ch in name.split("_")[1] if ch.isdigit()) if "_" in name else ""
    return int(digits or 0)
