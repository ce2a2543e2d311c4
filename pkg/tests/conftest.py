import numpy as np
import pytest

from speedseq.dataio import Track
from speedseq.tensorcore import finite_diff_grad, relative_error

GRAD_REL_TOL = 1e-4
GRAD_ABS_FLOOR = 1e-6
SEEDS = (0, 1, 2)


def fd_wrt(loss, arr, eps=1e-4):
    """Central differences of ``loss()`` w.r.t. ``arr``, perturbed in place."""
    orig = arr.copy()

    def f(v):
        arr[...] = v
        return loss()

    try:
        return finite_diff_grad(f, orig, eps)
    finally:
        arr[...] = orig


def max_rel_err(analytic, numeric):
    return float(relative_error(analytic, numeric, GRAD_ABS_FLOOR).max())


def assert_grads_match(loss, arrays, analytic, tol=GRAD_REL_TOL):
    """Compare analytic gradients to central differences for every named array."""
    worst = {}
    for name, arr in arrays.items():
        num = fd_wrt(loss, arr)
        worst[name] = max_rel_err(analytic[name], num)
    bad = {k: v for k, v in worst.items() if not v < tol}
    assert not bad, f"gradient mismatch (max rel err): {bad}"
    return worst


def make_track(track_id="t", n=25, fps=30.0, speed=60.0, dx=4.0, start=(100.0, 100.0, 150.0, 130.0)):
    boxes = np.array(start) + np.outer(np.arange(n), [dx, 0.0, dx, 0.0])
    return Track(track_id, fps, np.arange(n), boxes, speed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion name -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        terminalreporter.write_line(f"[{status}] {name}: {detail}")
