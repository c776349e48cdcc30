import os
import subprocess
import sys

import numpy as np
import pytest

from frozenjch import kernels
from frozenjch._kernels_py import config_keys
from frozenjch.semiclassical import TABLEAU

import oracles


def test_backend_selected():
    assert kernels.BACKEND in kernels.available_backends()


@pytest.mark.parametrize("M,n_max,N", [(2, 1, 1), (3, 2, 3), (4, 2, 4), (2, 4, 0)])
def test_enumerate_configs(kernel_impl, M, n_max, N):
    got = kernel_impl.enumerate_configs(M, n_max, N)
    assert [tuple(r) for r in got] == oracles.brute_force_states(M, n_max, N)


def test_triplets_backends_agree():
    impls = kernels.available_backends()
    local = impls["python"].enumerate_configs(4, 3, 4)
    keys = config_keys(local, 8)
    ref = None
    for impl in impls.values():
        r, c, v = impl.jch_triplets(local, keys, 3, 1.3, 0.7, 0.2, -0.1)
        order = np.lexsort((c, r))
        trip = (np.asarray(r)[order], np.asarray(c)[order], np.asarray(v)[order])
        if ref is None:
            ref = trip
        else:
            for a, b in zip(ref, trip):
                np.testing.assert_allclose(a, b, atol=1e-14)


def test_sc_integrate_backends_agree_and_match_scipy():
    from scipy.integrate import solve_ivp

    M, g, J = 4, 3.0, 1.0
    y0 = np.zeros(5 * M)
    y0[:2] = 2.0
    y0[4 * M:] = -1.0
    t = np.linspace(0, 5, 51)
    outs = []
    for impl in kernels.available_backends().values():
        out, nfev, status, _ = impl.sc_integrate(y0, M, g, J, 0.0, 0.0, t, 1e-10, 1e-12,
                                                 10**7, *TABLEAU)
        assert status == 0
        outs.append(out)
    for o in outs[1:]:
        np.testing.assert_allclose(o, outs[0], atol=1e-12)

    def rhs(_, y):
        d = np.empty_like(y)
        kernels.sc_rhs(y, M, g, J, 0.0, 0.0, d)
        return d

    ref = solve_ivp(rhs, (0, 5), y0, method="DOP853", t_eval=t, rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(outs[0], ref.y.T, atol=1e-7)


def test_pure_python_switch():
    code = ("import frozenjch.kernels as k; print(k.BACKEND)")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={**os.environ, "FROZENJCH_PURE_PYTHON": "1"}, check=True)
    assert out.stdout.strip() == "python"
