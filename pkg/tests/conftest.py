import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_angles(rng, n, pitch_max=1.4):
    th = rng.uniform(-np.pi, np.pi, size=(n, 3))
    th[:, 1] = rng.uniform(-pitch_max, pitch_max, size=n)
    return th


def numeric_grad(f, params, h=1e-5):
    """Central differences of scalar ``f(params)`` w.r.t. every entry of every tensor."""
    out = {}
    for name, p in params.items():
        g = np.empty_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f(params)
            flat[i] = old - h
            down = f(params)
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def max_rel_error(analytic, numeric, floor=1e-6):
    """Worst elementwise relative error per tensor."""
    return {k: float(np.max(np.abs(analytic[k] - numeric[k])
                            / np.maximum(np.maximum(np.abs(analytic[k]), np.abs(numeric[k])), floor)))
            for k in numeric}


# -- acceptance summary --------------------------------------------------------

CRITERIA = {}


def record_criterion(number, passed, detail):
    """Remember one acceptance result; printed once at the end of the run."""
    CRITERIA[number] = (bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
