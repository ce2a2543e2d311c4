"""Time the compiled kernels against their plain-numpy source.

    python benchmarks/bench_kernels.py [--repeat N]

The first section compiles each kernel's ``.py_func`` with numba and times
it against the plain-numpy source at the training batch shape (B=32, T=20,
embed 32, hidden 64). The second section times one full forward+backward of
each model variant in two subprocesses, ``SPEEDSEQ_NUMBA=1`` and
``SPEEDSEQ_NUMBA=0``, so each path is measured exactly as a user would run it.
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

B, T, E, H = 32, 20, 32, 64


def kernel_cases():
    from speedseq import kernels as K

    r = np.random.default_rng(0)
    xs = r.normal(size=(T, B, E))
    h0 = np.zeros((B, H))
    conv_x = r.normal(size=(B, T, E))
    conv_w = r.normal(size=(3, E, H)) * 0.1
    conv_b = np.zeros(H)
    conv_out = K.conv3_forward(conv_x, conv_w, conv_b)

    cases = {"conv3_forward": (K.conv3_forward, (conv_x, conv_w, conv_b)),
             "conv3_backward": (K.conv3_backward, (np.ones_like(conv_out), conv_x, conv_w))}
    for name, gates in (("rnn", 1), ("lstm", 4), ("gru", 3)):
        wx = r.normal(size=(E, gates * H)) * 0.1
        wh = r.normal(size=(H, gates * H)) * 0.1
        b = np.zeros(gates * H)
        if name == "rnn":
            hs = K.rnn_forward(xs, h0, wx, wh, b)
            cases["rnn_forward"] = (K.rnn_forward, (xs, h0, wx, wh, b))
            cases["rnn_backward"] = (K.rnn_backward, (np.ones_like(hs), xs, h0, hs, wx, wh))
        elif name == "lstm":
            hs, cs, g = K.lstm_forward(xs, h0, h0, wx, wh, b)
            cases["lstm_forward"] = (K.lstm_forward, (xs, h0, h0, wx, wh, b))
            cases["lstm_backward"] = (K.lstm_backward, (np.ones_like(hs), np.zeros_like(cs), xs, h0, h0, hs, cs, g, wx, wh))
        else:
            hs, cache = K.gru_forward(xs, h0, wx, wh, b)
            cases["gru_forward"] = (K.gru_forward, (xs, h0, wx, wh, b))
            cases["gru_backward"] = (K.gru_backward, (np.ones_like(hs), xs, h0, hs, cache, wx, wh))
    return cases


def best_of(fn, args, repeat):
    fn(*args)  # warm-up, triggers compilation
    n, _ = timeit.Timer(lambda: fn(*args)).autorange()
    return min(timeit.Timer(lambda: fn(*args)).repeat(repeat, n)) / n


def bench_kernels(repeat):
    try:
        import numba
    except ImportError:
        print("numba is not installed; only the numpy path exists")
        return
    print(f"{'kernel':<16}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, (fn, args) in kernel_cases().items():
        fast = best_of(numba.njit(fn.py_func), args, repeat)
        slow = best_of(fn.py_func, args, repeat)
        print(f"{name:<16}{fast * 1e3:>10.3f}{slow * 1e3:>10.3f}{slow / fast:>8.1f}x")


_STEP = """
import json, sys, timeit
import numpy as np
from speedseq import models as M
from speedseq.tensorcore import Rng
repeat = int(sys.argv[1])
x = Rng(0).normal(size=(32, 20, 8))
out = {}
for v in M.VARIANTS:
    m = M.build(M.ModelConfig(v), 0)
    def step():
        pred, cache = M.forward(m, x, train_mode=True, rng=Rng(1))
        M.backward(m, cache, np.ones(len(pred)))
    step()
    n, _ = timeit.Timer(step).autorange()
    out[v] = min(timeit.Timer(step).repeat(repeat, n)) / n
print(json.dumps(out))
"""


def bench_steps(repeat):
    try:
        import numba  # noqa: F401
    except ImportError:
        return
    results = {}
    for flag in ("1", "0"):
        env = dict(os.environ, SPEEDSEQ_NUMBA=flag)
        r = subprocess.run([sys.executable, "-c", _STEP, str(repeat)], env=env,
                           capture_output=True, text=True, check=True)
        results[flag] = json.loads(r.stdout)
    print(f"\n{'train step (B=32)':<18}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for v, fast in results["1"].items():
        slow = results["0"][v]
        print(f"{v:<18}{fast * 1e3:>10.2f}{slow * 1e3:>10.2f}{slow / fast:>8.1f}x")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    bench_kernels(args.repeat)
    bench_steps(args.repeat)


if __name__ == "__main__":
    main()
