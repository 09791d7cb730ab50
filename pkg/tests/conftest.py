import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dos_lab.config import SystemParams, derive

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

PS = math.exp(-1.0)

# lines collected by the acceptance tests, echoed in the terminal summary
ACCEPTANCE_LINES = []


def base_params(alpha: float = 1.0, **kw) -> SystemParams:
    args = dict(M=300, W=3000.0, tau=0.2, p_s=PS)
    args.update(kw)
    if "rho" not in args:
        args["rho"] = alpha / args["M"] if args["M"] else 1.0
    return SystemParams(**args)


@pytest.fixture
def params():
    return base_params()


@pytest.fixture
def consts():
    return derive(base_params())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
