import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def unit_rows(rng, n, d):
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def naive_conv(filters, xi, x, padding="valid"):
    """Loop-by-loop cross-correlation, used as an independent oracle."""
    Co, Ci, M, N = filters.shape
    _, I, J = x.shape
    if padding == "same":
        top, left = (M - 1) // 2, (N - 1) // 2
        xp = np.zeros((Ci, I + M - 1, J + N - 1))
        xp[:, top : top + I, left : left + J] = x
        x, I, J = xp, I + M - 1, J + N - 1
    out = np.zeros((Co, I - M + 1, J - N + 1))
    for c in range(Co):
        for i in range(I - M + 1):
            for j in range(J - N + 1):
                s = xi[c]
                for k in range(Ci):
                    for a in range(M):
                        for b in range(N):
                            s += filters[c, k, a, b] * x[k, i + a, j + b]
                out[c, i, j] = s
    return out


def fd_jacobian(fn, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for d in range(x.size):
        e = np.zeros_like(x)
        e[d] = h
        cols.append((fn(x + e) - fn(x - e)) / (2 * h))
    return np.stack(cols, axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grad_check(net, batch, weights, rng, per_array=4, h=1e-5, margin=1e-3):
    """Worst relative gap between analytic and central-difference gradients.

    Returns None when some input sits within ``margin`` of a region boundary,
    where the frozen-region derivative is not what differences see.
    """
    from splinet.splinex import boundary_margin
    from splinet.trainer import combined_loss, loss_gradients

    if min(boundary_margin(net, x) for x in batch.inputs) <= margin:
        return None
    grads = loss_gradients(net, batch, weights)
    worst = 0.0
    for p, g in zip(net.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in rng.choice(flat.size, min(per_array, flat.size), replace=False):
            old = flat[k]
            flat[k] = old + h
            up = combined_loss(net, batch, weights)
            flat[k] = old - h
            down = combined_loss(net, batch, weights)
            flat[k] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - gflat[k]) / max(abs(fd), abs(gflat[k]), 1e-6))
    return worst


def guarded_inputs(net, rng, n, margin=1e-3, tries=1000):
    """Unit-norm inputs that sit at least ``margin`` away from every region boundary."""
    from splinet.splinex import boundary_margin

    out = []
    for _ in range(tries):
        x = unit_rows(rng, 1, net.in_dim)[0]
        if boundary_margin(net, x) > margin:
            out.append(x)
            if len(out) == n:
                return np.stack(out)
    raise RuntimeError(f"only {len(out)} of {n} inputs cleared the margin")


# ---------------------------------------------------------------- acceptance summary

_criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None and (rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed")):
        number, title = marker.args
        _criteria.append((number, title, rep.outcome, getattr(item, "detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, title, outcome, detail in sorted(_criteria):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}  {status}  {title}" + (f"  [{detail}]" if detail else ""))
