import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frozenjch.config import SimulationConfig
from frozenjch.exact import evolve_exact
from frozenjch.lindblad import (
    CapacityError,
    DensityMatrix,
    Liouvillian,
    chart_onsets,
    evolve_master,
    g2_average,
    g2_local,
    g2_value,
    jump_operators,
    space_for,
    transition_chart,
)
from frozenjch.model import build_hamiltonian, truncated_space

import oracles


def _dense_liouvillian(H, Ls):
    """Column-stacked superoperator from Kronecker products."""
    n = H.shape[0]
    I = np.eye(n)
    L = -1j * (np.kron(I, H) - np.kron(H.T, I))
    for A in Ls:
        AdA = A.conj().T @ A
        L += np.kron(A.conj(), A) - 0.5 * np.kron(I, AdA) - 0.5 * np.kron(AdA.T, I)
    return L


@settings(max_examples=10)
@given(seed=st.integers(0, 10**6), g=st.floats(0, 5), k=st.floats(0, 1), gm=st.floats(0, 1))
def test_liouvillian_matches_superoperator(seed, g, k, gm):
    b = truncated_space(2, 2, 3)
    H = build_hamiltonian(b, g=g, J=1.0).matrix
    Ls = [L for _, L in jump_operators(b, k, gm)]
    liou = Liouvillian(H, Ls)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(b.dim, b.dim)) + 1j * rng.normal(size=(b.dim, b.dim))
    rho = X @ X.conj().T
    ref = _dense_liouvillian(H.toarray(), [L.toarray() for L in Ls])
    got = liou(rho)
    np.testing.assert_allclose(got.reshape(-1, order="F"), ref @ rho.reshape(-1, order="F"),
                               atol=1e-10)


def test_jump_operators_match_oracle():
    b = truncated_space(2, 3, 4)
    a, sm = oracles.local_ops(3)
    d = a.shape[0]
    flat = b.local[:, 0] * d + b.local[:, 1]
    labels = dict(jump_operators(b, 1.0, 1.0))
    for j in range(2):
        A = oracles._embed(a, j, 2, d)[np.ix_(flat, flat)]
        S = oracles._embed(sm, j, 2, d)[np.ix_(flat, flat)]
        np.testing.assert_allclose(labels[f"a_{j + 1}"].toarray(), A, atol=1e-14)
        np.testing.assert_allclose(labels[f"sm_{j + 1}"].toarray(), S, atol=1e-14)
    assert jump_operators(b, 0.0, 0.0) == []


def test_lossless_matches_exact():
    cfg = SimulationConfig(M=2, N0=2, g=1.5, t_max=10.0)
    a = evolve_master(cfg)
    b = evolve_exact(cfg)
    assert np.abs(a.photons - b.photons).max() < 1e-8
    assert np.abs(a.tls - b.tls).max() < 1e-8


def test_free_dimer_photon_decay():
    cfg = SimulationConfig(M=2, N0=2, g=0.0, kappa=0.3, t_max=5.0, sample_dt=0.05)
    tr = evolve_master(cfg)
    expected = 2 * np.cos(tr.times) ** 2 * np.exp(-0.3 * tr.times)
    np.testing.assert_allclose(tr.photons[:, 0], expected, atol=1e-8)


def test_tls_decay_is_inert_without_coupling():
    cfg = SimulationConfig(M=2, N0=2, g=0.0, gamma=0.5, t_max=5.0, sample_dt=0.05)
    tr = evolve_master(cfg)
    np.testing.assert_allclose(tr.photons.sum(1), 2.0, atol=1e-9)
    np.testing.assert_allclose(tr.photons[:, 0], 2 * np.cos(tr.times) ** 2, atol=1e-8)


@pytest.mark.parametrize("g", [0.5, 4.0])
def test_lossy_run_keeps_trace_and_positivity(g):
    cfg = SimulationConfig(M=2, N0=3, g=g, kappa=0.2, gamma=0.1, t_max=10.0, sample_dt=0.05)
    tr = evolve_master(cfg)
    assert np.abs(tr.monitors["trace"] - 1).max() < 1e-8
    assert tr.monitors["min_eig"].min() >= -1e-7
    assert tr.monitors["hermiticity"].max() < 1e-10
    assert np.all(np.diff(tr.monitors["N_total"]) < 0)


def test_fock_and_vacuum_g2():
    b = truncated_space(2, 4, 4)
    for N in range(1, 5):
        psi = np.zeros(b.dim, complex)
        psi[b.index_of(((N, 0), (False, False)))] = 1
        assert g2_local(DensityMatrix.pure(psi, b), 1) == pytest.approx(1 - 1 / N, abs=1e-12)
    vac = np.zeros(b.dim, complex)
    vac[b.index_of(((0, 0), (False, False)))] = 1
    assert np.isnan(g2_local(DensityMatrix.pure(vac, b), 1))
    assert np.isnan(g2_value(1e-7, 0.0))


@pytest.mark.parametrize("alpha", [0.5, 1.5, 2.5])
def test_coherent_state_g2_is_one(alpha):
    n_max = 30
    b = truncated_space(2, n_max, n_max)
    single = oracles.coherent_density(n_max, alpha)
    idx = [b.index_of(((n, 0), (False, False))) for n in range(n_max + 1)]
    rho = np.zeros((b.dim, b.dim), complex)
    rho[np.ix_(idx, idx)] = single
    assert g2_local(DensityMatrix(rho, b), 1) == pytest.approx(1.0, abs=1e-8)


def test_g2_site_validation():
    b = truncated_space(2, 1, 1)
    with pytest.raises(ValueError):
        g2_local(DensityMatrix(np.eye(b.dim) / b.dim, b), 3)


def test_strong_loss_produces_undefined_g2_samples():
    cfg = SimulationConfig(M=2, N0=1, g=1.0, kappa=5.0, gamma=5.0, t_max=10.0, sample_dt=0.1,
                           window=(0.0, 10.0))
    tr = evolve_master(cfg)
    value, undefined = g2_average(tr, 1, cfg.window)
    assert 0 < undefined < 1
    assert np.isfinite(value)  # averaged over the defined samples only


def test_capacity_error():
    with pytest.raises(CapacityError, match="states"):
        space_for(SimulationConfig(M=4, N0=7, n_max=7))


def test_truncated_space_size():
    assert space_for(SimulationConfig(M=2, N0=7, n_max=7)).dim == 113


def test_chart_rows_and_onsets():
    cfg = SimulationConfig(M=2, N0=1, kappa=0.05, gamma=0.05, t_max=5.0, sample_dt=0.05,
                           window=(0.0, 5.0))
    rows = transition_chart(cfg, [3.0, 0.1], [1], loss=(False, True))
    assert [(r.loss, r.g) for r in rows] == [(False, 0.1), (False, 3.0), (True, 0.1), (True, 3.0)]
    assert all(r.ok for r in rows)
    assert set(chart_onsets(rows)) == {(1, False), (1, True)}
