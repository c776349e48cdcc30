import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from frozenjch.config import SimulationConfig
from frozenjch.observables import time_average
from frozenjch.semiclassical import (
    SCState,
    conservation_ok,
    critical_couplings,
    sc_evolve,
    sc_initial_state,
    sc_rhs,
    sc_sweep,
)

import oracles


def test_initial_state():
    s = sc_initial_state(SimulationConfig(M=2, N0=4))
    np.testing.assert_array_equal(s.alpha, [2, 0])
    np.testing.assert_array_equal(s.z, [-1, -1])
    np.testing.assert_array_equal(s.m, [0, 0])
    assert sc_initial_state(SimulationConfig(M=2, N0=1)).alpha[0] == 1
    assert sc_initial_state(SimulationConfig(M=6, N0=3)).excitation() == pytest.approx(9)


def test_rhs_pure_hopping():
    cfg = SimulationConfig(M=2, N0=1, g=0.0)
    d = sc_rhs(SCState(np.array([1, 0], complex), np.zeros(2, complex), -np.ones(2)), cfg)
    np.testing.assert_allclose(d.alpha, [0, 1j])
    np.testing.assert_allclose(d.m, 0)
    np.testing.assert_allclose(d.z, 0)


def test_rhs_no_hopping_limit():
    cfg = SimulationConfig(M=2, N0=4, g=1.5, J=1e-300)
    s = sc_initial_state(cfg)
    s.alpha[:] = 2.0
    d = sc_rhs(s, cfg)
    np.testing.assert_allclose(d.m, -1j * 1.5 * 2.0)
    np.testing.assert_allclose(d.alpha, 0, atol=1e-290)
    np.testing.assert_allclose(d.z, 0)


def _random_state(rng, M):
    theta = rng.uniform(0, np.pi, M)
    phi = rng.uniform(0, 2 * np.pi, M)
    return SCState(rng.normal(size=M) + 1j * rng.normal(size=M),
                   0.5 * np.sin(theta) * np.exp(1j * phi), np.cos(theta))


@given(st.integers(0, 10**6))
def test_rhs_invariants(seed):
    rng = np.random.default_rng(seed)
    cfg = SimulationConfig(M=4, N0=1, g=float(rng.uniform(0, 5)), frame="lab",
                           omega_r=0.0, omega_a=0.0)
    s = _random_state(rng, 4)
    d = sc_rhs(s, cfg)
    assert np.isrealobj(d.z)
    # d/dt of excitation and Bloch length vanish
    dN = np.sum(2 * (s.alpha.conj() * d.alpha).real + d.z / 2)
    assert abs(dN) < 1e-10
    dB = 2 * s.z * d.z + 8 * (s.m.conj() * d.m).real
    np.testing.assert_allclose(dB, 0, atol=1e-10)


def test_two_site_free_hopping_is_cosine():
    tr = sc_evolve(SimulationConfig(M=2, N0=1, g=0.0))
    np.testing.assert_allclose(tr.photons[:, 0], np.cos(tr.times) ** 2, atol=1e-8)
    np.testing.assert_allclose(tr.Z, np.cos(2 * tr.times), atol=1e-8)


@pytest.mark.parametrize("M", [2, 4, 6, 8])
def test_zero_coupling_matches_free_photon_oracle(M):
    cfg = SimulationConfig(M=M, N0=4, g=0.0)
    tr = sc_evolve(cfg)
    alpha = oracles.free_photon_alpha(M, 4, 1.0, tr.times)
    np.testing.assert_allclose(tr.photons, np.abs(alpha) ** 2, atol=1e-7)
    n = np.abs(alpha) ** 2
    zbar = time_average(tr.times, (n[:, : M // 2].sum(1) - n[:, M // 2:].sum(1)) / n.sum(1))
    assert tr.zbar() == pytest.approx(zbar, abs=1e-7)
    assert abs(zbar) < 0.1


def test_no_hopping_freezes():
    tr = sc_evolve(SimulationConfig(M=4, N0=2, g=2.0, J=1e-12))
    np.testing.assert_allclose(tr.Z, 1.0, atol=1e-9)


@pytest.mark.parametrize("g", [1.0, 5.0, 20.0])
def test_conservation(g):
    tr = sc_evolve(SimulationConfig(M=4, N0=4, g=g))
    assert conservation_ok(tr, 1e-6)


def test_tolerance_halving_converges():
    cfg = SimulationConfig(M=2, N0=4, g=4.0)
    a = sc_evolve(cfg).zbar()
    b = sc_evolve(cfg.replace(rtol=cfg.rtol / 2, atol=cfg.atol / 2)).zbar()
    assert abs(a - b) < 1e-4


def test_mirror_symmetry():
    cfg = SimulationConfig(M=4, N0=2, g=3.0)
    left = sc_evolve(cfg)
    right = sc_evolve(cfg, sc_initial_state(cfg, "right"))
    np.testing.assert_allclose(right.Z, -left.Z, atol=1e-12)


def test_transition_for_four_photons():
    cfg = SimulationConfig(M=2, N0=4)
    assert abs(sc_evolve(cfg.replace(g=1.0)).zbar()) < 0.1
    assert sc_evolve(cfg.replace(g=9.0)).zbar() > 0.9


def test_sweep_sorted_and_deterministic():
    cfg = SimulationConfig(M=2, N0=1, t_max=5.0)
    rows = sc_sweep(cfg, [2.0, 0.0, 2.0], [4, 2])
    assert [(r["M"], r["g"]) for r in rows] == [(2, 0.0), (2, 2.0), (2, 2.0),
                                                  (4, 0.0), (4, 2.0), (4, 2.0)]
    assert rows[1] == rows[2]
    assert all(r["converged"] for r in rows)
    assert set(critical_couplings(rows)) == {2, 4}
    with pytest.raises(ValueError):
        sc_sweep(cfg, [], [2])


def test_sweep_parallel_matches_serial():
    cfg = SimulationConfig(M=2, N0=2, t_max=3.0)
    assert sc_sweep(cfg, [0.5, 3.0], [2, 4], jobs=2) == sc_sweep(cfg, [0.5, 3.0], [2, 4])


def test_underflow_is_flagged_not_raised():
    cfg = SimulationConfig(M=2, N0=1, t_max=1.0, rtol=1e-30, atol=1e-300)
    rows = sc_sweep(cfg, [1.0], [2])
    assert rows[0]["converged"] is False and "t =" in rows[0]["error"]
