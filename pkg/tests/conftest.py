import sys

import numpy as np
import pytest

from ghostarm.arm import default_arm
from ghostarm.scripted import (pickplace_bundle, pickplace_obstacle_bundle,
                               record_trajectory, stack_bundle)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Emit one pass/fail line per acceptance criterion into the final log."""
    mod = sys.modules.get("test_acceptance")
    lines = list(getattr(mod, "CRITERION_LINES", ())) if mod else []
    for rep in terminalreporter.stats.get("failed", ()):
        if "test_acceptance.py" in rep.nodeid:
            lines.append("FAIL " + rep.nodeid.split("::")[-1])
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def model():
    return default_arm()


@pytest.fixture(scope="session")
def pickplace():
    return pickplace_bundle(seed=0)


@pytest.fixture(scope="session")
def stack():
    return stack_bundle(seed=0)


@pytest.fixture(scope="session")
def wall_bundle():
    return pickplace_obstacle_bundle(seed=0)


@pytest.fixture(scope="session")
def recorded_pickplace(pickplace, model):
    episode, state, feedbacks = record_trajectory(
        pickplace.trajectory, pickplace.scene, model)
    assert episode is not None
    return episode, state, feedbacks


@pytest.fixture(scope="session")
def recorded_stack(stack, model):
    episode, state, feedbacks = record_trajectory(
        stack.trajectory, stack.scene, model)
    assert episode is not None
    return episode, state, feedbacks


@pytest.fixture()
def rng():
    return np.random.default_rng(20260823)


def random_in_limit_configs(model, rng, n):
    lo = model.joint_limits[:, 0]
    hi = model.joint_limits[:, 1]
    return rng.uniform(lo, hi, size=(n, 6))
