import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("quick", deadline=None, max_examples=15,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def params():
    from quadgcnet.dynamics import default_params

    return default_params()


@pytest.fixture(scope="session")
def landing_fast():
    """Time-optimal 5 m vertical landing (shared by several modules)."""
    from quadgcnet.trajopt import landing_spec, solve_ocp

    return solve_ocp(landing_spec(5.0, 0.0))


@pytest.fixture(scope="session")
def sampled_pair():
    """One random boundary-condition draw solved at epsilon 1 and 0."""
    import dataclasses

    from quadgcnet.dataset import SamplingBounds, sample_ocp
    from quadgcnet.trajopt import solve_ocp

    spec = sample_ocp(SamplingBounds(), 1.0, 3)
    smooth = solve_ocp(spec)
    fast = solve_ocp(dataclasses.replace(spec, epsilon=0.0))
    return smooth, fast


def random_state(rng, params):
    """A state well inside the sampling box (|theta| <= 40 deg)."""
    x = np.zeros(19)
    x[0:3] = rng.uniform(-5, 5, 3)
    x[3:6] = rng.uniform(-5, 5, 3)
    x[6:9] = np.deg2rad(rng.uniform(-40, 40, 3))
    x[9:12] = rng.uniform(-1, 1, 3)
    x[12:16] = rng.uniform(params.omega_min, params.omega_max, 4)
    x[16:19] = rng.uniform(-0.04, 0.04, 3)
    return x



# -- acceptance report ------------------------------------------------------------
# Each acceptance test stores a one-line summary with ``record_property("summary", ...)``;
# the lines are printed together at the end of the run, one per criterion, with
# the test outcome (so a criterion that errors out still shows up as FAIL).

_ACCEPTANCE_PREFIX = "test_acceptance.py::test_criterion_"
_acceptance = {}


def pytest_runtest_logreport(report):
    if _ACCEPTANCE_PREFIX not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number = int(report.nodeid.split(_ACCEPTANCE_PREFIX)[1].split("_")[0])
        summary = dict(report.user_properties).get("summary", "")
        verdict = {"passed": "PASS", "skipped": "SKIP"}.get(report.outcome, "FAIL")
        _acceptance[number] = (verdict, summary, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        verdict, summary, duration = _acceptance[number]
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {summary}  ({duration:.1f} s)")
