import sys

import numpy as np
import pytest

from tempgan.tensor_engine import Tensor, grad


def numeric_grad(f, arrays, i, eps=1e-3):
    """Central finite differences of scalar ``f(*arrays)`` w.r.t. ``arrays[i]`` (f64)."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    out = np.zeros_like(base[i])
    it = np.nditer(base[i], flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        plus = [a.copy() for a in base]
        minus = [a.copy() for a in base]
        plus[i][idx] += eps
        minus[i][idx] -= eps
        out[idx] = (float(f(*plus)) - float(f(*minus))) / (2 * eps)
    return out


def rel_error(analytic, numeric) -> float:
    """Max abs difference scaled by the largest numeric entry."""
    scale = max(float(np.abs(numeric).max()), 1e-8)
    return float(np.abs(np.asarray(analytic) - numeric).max()) / scale


def check_gradients(f, *arrays, eps=1e-3):
    """Worst relative error between engine gradients and finite differences.

    ``f`` maps Tensors to a scalar Tensor; it is re-evaluated on plain
    float64 arrays for the finite differences.
    """
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    grads = grad(f(*tensors), tensors)
    worst = 0.0
    for i in range(len(arrays)):
        num = numeric_grad(lambda *xs: f(*[Tensor(x) for x in xs]).item(), arrays, i, eps)
        worst = max(worst, rel_error(grads[i].data, num))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def corpus_with_bulk(mu, sigma, n=101, seed=0):
    """Daily means whose own 10-90 percentile bulk has exactly (mu, population sigma).

    With n = 101 the 10th and 90th percentiles fall on order statistics 10
    and 90, so the bulk is those 81 values; an affine map fixes its moments
    without moving any value across the percentile cut.
    """
    z = np.sort(np.random.default_rng(seed).standard_normal(n))
    core = z[10:91]
    return mu + sigma * (z - core.mean()) / core.std()


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, when that suite ran."""
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
