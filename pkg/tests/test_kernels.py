"""The compiled kernels and their plain-numpy source must agree."""
import functools
import os
import subprocess
import sys

import numpy as np
import pytest

from speedseq import kernels as K

numba = pytest.importorskip("numba")


@functools.lru_cache(maxsize=None)
def _compiled(py_func):
    # compiled here regardless of SPEEDSEQ_NUMBA, so the check never goes vacuous
    return numba.njit(py_func)


def _cases(seed, T=7, B=3, E=4, H=5):
    r = np.random.default_rng(seed)
    return r, r.normal(size=(T, B, E)), r.normal(size=(B, H)), r.normal(size=(B, H))


def _both(fn, *args):
    return _compiled(fn.py_func)(*args), fn.py_func(*args)


def _close(a, b):
    if isinstance(a, tuple):
        for x, y in zip(a, b):
            _close(x, y)
        return
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_conv_paths_agree(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(3, 9, 4))
    w = r.normal(size=(3, 4, 6))
    b = r.normal(size=6)
    out, ref = _both(K.conv3_forward, x, w, b)
    _close(out, ref)
    d = r.normal(size=out.shape)
    _close(*_both(K.conv3_backward, d, x, w))


@pytest.mark.parametrize("seed", range(3))
def test_rnn_paths_agree(seed):
    r, xs, h0, _ = _cases(seed)
    wx, wh, b = r.normal(size=(4, 5)), r.normal(size=(5, 5)) * 0.5, r.normal(size=5)
    hs, ref = _both(K.rnn_forward, xs, h0, wx, wh, b)
    _close(hs, ref)
    _close(*_both(K.rnn_backward, r.normal(size=hs.shape), xs, h0, hs, wx, wh))


@pytest.mark.parametrize("seed", range(3))
def test_lstm_paths_agree(seed):
    r, xs, h0, c0 = _cases(seed)
    wx, wh, b = r.normal(size=(4, 20)), r.normal(size=(5, 20)) * 0.5, r.normal(size=20)
    fwd, ref = _both(K.lstm_forward, xs, h0, c0, wx, wh, b)
    _close(fwd, ref)
    hs, cs, gates = fwd
    d1, d2 = r.normal(size=hs.shape), r.normal(size=hs.shape)
    _close(*_both(K.lstm_backward, d1, d2, xs, h0, c0, hs, cs, gates, wx, wh))


@pytest.mark.parametrize("seed", range(3))
def test_gru_paths_agree(seed):
    r, xs, h0, _ = _cases(seed)
    wx, wh, b = r.normal(size=(4, 15)), r.normal(size=(5, 15)) * 0.5, r.normal(size=15)
    fwd, ref = _both(K.gru_forward, xs, h0, wx, wh, b)
    _close(fwd, ref)
    hs, cache = fwd
    _close(*_both(K.gru_backward, r.normal(size=hs.shape), xs, h0, hs, cache, wx, wh))


def test_sigmoid_kernel_saturates_without_overflow():
    x = np.array([-800.0, -20.0, 0.0, 20.0, 800.0])
    with np.errstate(over="raise"):
        s = K._sigmoid(x)
    assert s[0] == 0.0 and s[2] == 0.5 and s[-1] == 1.0


@pytest.mark.parametrize("flag, expected", [(None, "False"), ("0", "False"), ("1", "True")])
def test_env_flag_selects_path(flag, expected):
    code = "import speedseq.kernels as k; print(k.USE_NUMBA, hasattr(k.rnn_forward, 'signatures'))"
    env = {k: v for k, v in os.environ.items() if k != "SPEEDSEQ_NUMBA"}
    if flag is not None:
        env["SPEEDSEQ_NUMBA"] = flag
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == [expected, expected]
