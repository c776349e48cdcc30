import warnings

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given
from hypothesis import strategies as st

from frozenjch.config import SimulationConfig
from frozenjch.exact import evolve_exact
from frozenjch.model import enumerate_subspace
from frozenjch.tebd import (
    DiscardedWeightWarning,
    ExcitationDriftError,
    LocalSpace,
    build_schedule,
    evolve_tebd,
    load_checkpoint,
    make_gate,
    mps_from_product,
    save_checkpoint,
    tebd_step,
)

import oracles


def test_product_state_matches_dense_initial_vector():
    cfg = SimulationConfig(M=4, N0=2, n_max=3)
    st0 = mps_from_product(cfg)
    b = enumerate_subspace(4, 3, cfg.N_total)
    psi = st0.to_dense(b)
    assert np.count_nonzero(psi) == 1
    conf = b.local[np.argmax(np.abs(psi))]
    np.testing.assert_array_equal(conf % 4, [2, 2, 0, 0])
    assert st0.measure()["excitation"] == pytest.approx(4.0)


@given(g=st.floats(0, 20), J=st.floats(0.1, 3), tau=st.floats(-1, 1))
def test_gates_are_unitary_and_match_expm(g, J, tau):
    sp = LocalSpace(2)
    h1 = sp.onsite(g)
    h = sp.bond_hamiltonian(J, h1, h1)
    U = make_gate(h, tau, sp).dense()
    np.testing.assert_allclose(U.conj().T @ U, np.eye(U.shape[0]), atol=1e-12)
    np.testing.assert_allclose(U, la.expm(-1j * tau * h), atol=1e-10)


def test_local_operators_match_oracle():
    sp = LocalSpace(3)
    a, sm = oracles.local_ops(3)
    np.testing.assert_array_equal(sp.a, a)
    np.testing.assert_array_equal(sp.sm, sm)


def test_single_step_matches_dense_trotter_product():
    cfg = SimulationConfig(M=4, N0=1, n_max=2, g=1.3)
    sched = build_schedule(cfg, 0.02, 2)
    state = mps_from_product(cfg)
    psi0 = state.to_dense()
    tebd_step(state, sched, chi=64, cutoff=0.0)
    d = state.space.d
    U = np.eye(d**4, dtype=complex)
    for sites, gates in sched.layers:
        for j, gate in zip(sites, gates):
            U = np.kron(np.kron(np.eye(d**j), gate.dense()), np.eye(d ** (4 - j - 2))) @ U
    np.testing.assert_allclose(state.to_dense(), U @ psi0, atol=1e-12)


def test_matches_exact_small_chain():
    cfg = SimulationConfig(M=4, N0=1, g=1.0, t_max=5.0, trotter_order=4, svd_cutoff=0.0, chi=32)
    a = evolve_tebd(cfg)
    b = evolve_exact(cfg)
    assert np.abs(a.photons - b.photons).max() < 1e-6


def test_second_order_error_shrinks_with_dt():
    base = SimulationConfig(M=4, N0=1, g=2.0, t_max=2.0, sample_dt=0.1, svd_cutoff=0.0)
    ref = evolve_exact(base)
    errs = [np.abs(evolve_tebd(base, dt=dt).photons - ref.photons).max() for dt in (0.05, 0.025)]
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_bond_dimension_bound_and_conservation():
    cfg = SimulationConfig(M=6, N0=2, g=1.0, t_max=2.0, sample_dt=0.1, chi=6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DiscardedWeightWarning)
        tr = evolve_tebd(cfg)
    assert tr.monitors["max_bond"].max() <= 6
    n = tr.monitors["N_total"]
    # truncation breaks canonical form only at the level of the discarded weight
    assert np.abs(n - n[0]).max() < 10 * n[0] * tr.meta["discarded_total"]
    full = evolve_tebd(cfg.replace(chi=100, svd_cutoff=0.0))
    n = full.monitors["N_total"]
    assert np.abs(n - n[0]).max() < 1e-10


def test_truncation_raises_warning_once_plus_summary():
    cfg = SimulationConfig(M=6, N0=2, g=1.0, t_max=2.0, sample_dt=0.1, chi=2)
    with pytest.warns(DiscardedWeightWarning) as rec:
        tr = evolve_tebd(cfg)
    assert 1 <= len(rec) <= 2
    assert tr.meta["discarded_total"] > 0
    assert tr.meta["alarms"] >= 1


def test_drift_limit_raises():
    cfg = SimulationConfig(M=4, N0=1, g=1.0, t_max=0.5, sample_dt=0.1, drift_limit=1e-3)
    state = mps_from_product(cfg)
    state.B[0] = state.B[0] * 1.01  # break the norm on purpose
    with pytest.raises(ExcitationDriftError, match="drifted"):
        evolve_tebd(cfg, state=state)


def test_invalid_inputs():
    cfg = SimulationConfig(M=2, N0=1)
    with pytest.raises(ValueError):
        evolve_tebd(cfg, chi=0)
    with pytest.raises(ValueError):
        evolve_tebd(cfg, dt=0.1)
    with pytest.raises(ValueError):
        build_schedule(cfg, 0.01, 3)


def test_checkpoint_round_trip(tmp_path):
    cfg = SimulationConfig(M=4, N0=2, g=1.0, n_max=3)
    state = mps_from_product(cfg)
    sched = build_schedule(cfg, 0.01, 2)
    for _ in range(20):
        tebd_step(state, sched, 50, 1e-14)
    path = tmp_path / "state.mps"
    save_checkpoint(state, path)
    back = load_checkpoint(path)
    np.testing.assert_array_equal(back.to_dense(), state.to_dense())
    assert back.discarded_weight == state.discarded_weight
    for q0, q1 in zip(state.Q, back.Q):
        np.testing.assert_array_equal(q0, q1)
    # resuming continues identically
    for s in (state, back):
        tebd_step(s, sched, 50, 1e-14)
    np.testing.assert_array_equal(back.to_dense(), state.to_dense())


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"not an mps")
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_dimer_single_site_layer_only():
    cfg = SimulationConfig(M=2, N0=1, g=0.0, t_max=3.0, sample_dt=0.1)
    tr = evolve_tebd(cfg)
    # exact for M=2: the single even gate is the full propagator
    np.testing.assert_allclose(tr.photons[:, 0], np.cos(tr.times) ** 2, atol=1e-12)
