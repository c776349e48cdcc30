"""Time the compiled kernels against their pure-Python twins.

Usage: ``python benchmarks/bench_kernels.py [--repeat N]``. Prints one line
per kernel with the best wall time of each backend and the speed-up, and
reports the largest difference between the two backends' results.
"""

from __future__ import annotations

import argparse
import time

import numpy as np
import scipy.sparse as sp

from frozenjch.config import SimulationConfig
from frozenjch._kernels_py import config_keys
from frozenjch.kernels import available_backends
from frozenjch.semiclassical import TABLEAU, sc_initial_state


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases():
    cfg = SimulationConfig(M=8, N0=4, g=6.0)
    y0 = sc_initial_state(cfg).to_vector()
    times = cfg.times

    def integrate(k):
        return k.sc_integrate(y0, cfg.M, cfg.g, cfg.J, 0.0, 0.0, times, cfg.rtol, cfg.atol,
                              10**8, *TABLEAU)[0]

    def enumerate_(k):
        return k.enumerate_configs(6, 7, 16)

    def triplets(k):
        local = k.enumerate_configs(6, 4, 8)
        keys = config_keys(local, 10)
        r, c, v = k.jch_triplets(local, keys, 4, 1.5, 1.0, 0.0, 0.0)
        # emission order differs between backends; compare the assembled matrix
        return sp.csr_matrix((v, (r, c)), shape=(len(keys),) * 2)

    return {"sc_integrate M=8 t=20": integrate, "enumerate_configs M=6 N=16": enumerate_,
            "jch_triplets M=6 N=8": triplets}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the Python backend only")
    print(f"{'kernel':32s} {'python [s]':>11s} {'cython [s]':>11s} {'speed-up':>9s} {'max diff':>9s}")
    for name, fn in cases().items():
        t_py, r_py = _best(lambda: fn(backends["python"]), args.repeat)
        if "cython" in backends:
            t_cy, r_cy = _best(lambda: fn(backends["cython"]), args.repeat)
            if sp.issparse(r_py):
                diff = float(abs(r_py - r_cy).max())
            else:
                diff = float(np.abs(np.asarray(r_py, float) - np.asarray(r_cy, float)).max())
            print(f"{name:32s} {t_py:11.4f} {t_cy:11.4f} {t_py / t_cy:9.1f} {diff:9.1e}")
        else:
            print(f"{name:32s} {t_py:11.4f} {'-':>11s} {'-':>9s} {'-':>9s}")


if __name__ == "__main__":
    main()
