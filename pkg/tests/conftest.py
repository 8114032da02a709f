import functools
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dsmcbf._backend import get_kernels
from dsmcbf.dynamics import CraneParams, PdGains
from dsmcbf.sim import DEFAULT_ALPHAS, run_scenario, scenario_a, scenario_b

settings.register_profile("dsmcbf", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dsmcbf")

CRANE = CraneParams(1.0, 0.5, 0.7, 9.81)
PI = PdGains(1.0, 0.1)
KAPPA = PdGains(10.0, 4.0)
THETA_MAX = math.radians(10.0)


def _available_backends():
    out = ["python"]
    try:
        get_kernels("c")
        out.append("c")
    except ImportError:
        pass
    return out


BACKENDS = _available_backends()


@pytest.fixture(params=BACKENDS, scope="module")
def kern(request):
    return get_kernels(request.param)


@functools.lru_cache(maxsize=None)
def cached_run(scenario: str, controller: str, alpha_scale: float = 1.0, eta: float | None = None):
    """Full-horizon run shared across test modules (runs are deterministic)."""
    mk = {"a": scenario_a, "b": scenario_b}[scenario]
    kw = {"controller": controller}
    if alpha_scale != 1.0:
        kw["alphas"] = {k: v * alpha_scale for k, v in DEFAULT_ALPHAS.items()}
    if eta is not None:
        kw["eta"] = eta
    cfg = mk(**kw)
    return cfg, run_scenario(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results are collected here and echoed in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
