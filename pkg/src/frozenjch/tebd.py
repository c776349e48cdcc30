"""Matrix-product-state time evolution (TEBD) for open JCH chains.

The state is kept in right-canonical B form with Schmidt values on every
bond. Each bond also carries U(1) charge labels, the number of excitations
to its left, so two-site updates only touch charge-allowed blocks and the
SVD splits into independent sectors. Total excitation is therefore
conserved exactly apart from round-off.

One Trotter step uses the symmetric splitting ``E(dt/2) O(dt) E(dt/2)``.
The even layer carries the on-site Jaynes-Cummings terms of both sites
together with the hopping, so every gate is an exact exponential of a
two-site Hamiltonian block.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .config import SimulationConfig
from .model import initial_configuration
from .observables import Trajectory, locate_transition, transition_width

SUZUKI_P = 1.0 / (4.0 - 4.0 ** (1.0 / 3.0))


class DiscardedWeightWarning(UserWarning):
    """A single Trotter step discarded more weight than the configured alarm."""


class ExcitationDriftError(RuntimeError):
    """Total excitation drifted beyond the allowed fraction."""


@dataclass
class LocalSpace:
    """Composite site basis ``i = tls*(n_max+1) + n`` and its operators."""

    n_max: int

    def __post_init__(self):
        nb = self.n_max + 1
        self.d = 2 * nb
        a = np.diag(np.sqrt(np.arange(1, nb)), 1)
        sm = np.array([[0.0, 1.0], [0.0, 0.0]])
        self.a = np.kron(np.eye(2), a)
        self.sm = np.kron(sm, np.eye(nb))
        self.n = self.a.T @ self.a
        self.nt = self.sm.T @ self.sm
        self.photons = np.tile(np.arange(nb), 2)
        self.tls = np.repeat([0, 1], nb)
        self.charge = self.photons + self.tls
        self.q_max = int(self.charge.max())

    def onsite(self, g: float, wr: float = 0.0, wa: float = 0.0) -> np.ndarray:
        return wr * self.n + wa * self.nt + g * (self.a.T @ self.sm + self.a @ self.sm.T)

    def bond_hamiltonian(self, J: float, h1=None, h2=None) -> np.ndarray:
        eye = np.eye(self.d)
        h = -J * (np.kron(self.a.T, self.a) + np.kron(self.a, self.a.T))
        if h1 is not None:
            h = h + np.kron(h1, eye)
        if h2 is not None:
            h = h + np.kron(eye, h2)
        return h


@dataclass
class Gate:
    """Two-site propagator stored as blocks of fixed pair charge."""

    blocks: dict[int, tuple[np.ndarray, np.ndarray]]
    d: int

    def dense(self) -> np.ndarray:
        U = np.zeros((self.d * self.d,) * 2, dtype=complex)
        for idx, G in self.blocks.values():
            U[np.ix_(idx, idx)] = G
        return U


def make_gate(h: np.ndarray, tau: float, space: LocalSpace) -> Gate:
    """``exp(-i tau h)`` for a charge-conserving two-site Hamiltonian ``h``."""
    d = space.d
    pair_q = (space.charge[:, None] + space.charge[None, :]).ravel()
    blocks = {}
    for q in np.unique(pair_q):
        idx = np.flatnonzero(pair_q == q)
        w, v = la.eigh(h[np.ix_(idx, idx)])
        blocks[int(q)] = (idx, (v * np.exp(-1j * tau * w)) @ v.conj().T)
    return Gate(blocks, d)


@dataclass
class MPSState:
    """Right-canonical MPS with Schmidt values and U(1) bond charges.

    ``B[j]`` has shape (chi_left, d, chi_right); ``S[j]`` and ``Q[j]`` belong
    to the bond left of site j (``j = 0..M``).
    """

    B: list[np.ndarray]
    S: list[np.ndarray]
    Q: list[np.ndarray]
    space: LocalSpace
    discarded_weight: float = 0.0
    canonical: str = "right"
    step_discarded: float = field(default=0.0, repr=False)

    @property
    def M(self) -> int:
        return len(self.B)

    @property
    def bond_dims(self) -> list[int]:
        return [len(s) for s in self.S[1:-1]]

    def site_probabilities(self, j: int) -> np.ndarray:
        """Diagonal of the reduced density matrix of site ``j`` (0-based)."""
        B = self.B[j]
        return np.einsum("a,asb->s", self.S[j] ** 2, (B * B.conj()).real)

    def measure(self) -> dict[str, np.ndarray]:
        sp = self.space
        P = np.array([self.site_probabilities(j) for j in range(self.M)])
        n = P @ sp.photons
        return {
            "photons": n,
            "tls": P @ sp.tls,
            "nn1": P @ (sp.photons * (sp.photons - 1)),
            "excitation": float((P @ sp.charge).sum()),
            "norm": float(np.sum(self.S[1] ** 2)) if self.M > 1 else 1.0,
        }

    def to_dense(self, basis=None) -> np.ndarray:
        """Full state vector; restricted to ``basis`` rows when given."""
        psi = self.B[0][0]
        for B in self.B[1:]:
            psi = np.tensordot(psi, B, axes=(psi.ndim - 1, 0))
        psi = psi[..., 0].reshape(-1)
        if basis is None:
            return psi
        flat = np.zeros(basis.dim, dtype=np.int64)
        for j in range(self.M):
            flat = flat * self.space.d + basis.local[:, j]
        return psi[flat]

    def copy(self) -> "MPSState":
        return MPSState([b.copy() for b in self.B], [s.copy() for s in self.S],
                        [q.copy() for q in self.Q], self.space, self.discarded_weight,
                        self.canonical)


def mps_from_product(cfg: SimulationConfig) -> MPSState:
    """Bond-dimension-1 MPS of the half-filled Fock state."""
    if cfg.M % 2:
        raise ValueError(f"M must be even, got {cfg.M}")
    if cfg.n_max < cfg.N0:
        raise ValueError(f"n_max={cfg.n_max} cannot hold N0={cfg.N0} photons")
    space = LocalSpace(cfg.n_max)
    conf = initial_configuration(cfg.M, cfg.N0)
    B, S, Q = [], [np.ones(1)], [np.zeros(1, dtype=np.int64)]
    left = 0
    for n in conf.photon_occupations:
        t = np.zeros((1, space.d, 1), dtype=complex)
        t[0, n, 0] = 1.0
        B.append(t)
        left += n
        S.append(np.ones(1))
        Q.append(np.array([left], dtype=np.int64))
    return MPSState(B, S, Q, space)


def _charge_groups(q: np.ndarray) -> dict[int, np.ndarray]:
    vals, inv = np.unique(q, return_inverse=True)
    return {int(v): np.flatnonzero(inv == k) for k, v in enumerate(vals)}


def apply_two_site(state: MPSState, j: int, gate: Gate, chi: int, cutoff: float) -> float:
    """Apply ``gate`` to sites (j, j+1) in place; returns the discarded weight."""
    sp = state.space
    d = sp.d
    BL, BR = state.B[j], state.B[j + 1]
    qL, qM, qR = state.Q[j], state.Q[j + 1], state.Q[j + 2]
    chiL, chiR = BL.shape[0], BR.shape[2]

    row_q = (qL[:, None] + sp.charge[None, :]).ravel()
    col_q = (qR[None, :] - sp.charge[:, None]).ravel()
    # theta without the left Schmidt values, as a (chiL*d, d*chiR) matrix
    theta = np.zeros((chiL * d, d * chiR), dtype=complex)
    mL = BL.reshape(chiL * d, -1)
    mR = BR.reshape(-1, d * chiR)
    for Qm, mid in _charge_groups(qM).items():
        r = np.flatnonzero(row_q == Qm)
        c = np.flatnonzero(col_q == Qm)
        if r.size and c.size:
            theta[np.ix_(r, c)] = mL[np.ix_(r, mid)] @ mR[np.ix_(mid, c)]

    theta = theta.reshape(chiL, d * d, chiR)
    dq = qR[None, :] - qL[:, None]
    for q, (idx, G) in gate.blocks.items():
        a, c = np.nonzero(dq == q)
        if a.size == 0:
            continue
        blk = theta[a[:, None], idx[None, :], c[:, None]]
        theta[a[:, None], idx[None, :], c[:, None]] = blk @ G.T
    theta = theta.reshape(chiL * d, d * chiR)

    sL = np.repeat(state.S[j], d)
    sectors = []
    for Qm in np.intersect1d(row_q, col_q):
        r = np.flatnonzero(row_q == Qm)
        c = np.flatnonzero(col_q == Qm)
        X = theta[np.ix_(r, c)]
        if not np.any(X):
            continue
        _, s, vh = la.svd(sL[r, None] * X, full_matrices=False, lapack_driver="gesdd")
        sectors.append((int(Qm), r, c, X, s, vh))

    all_s = np.concatenate([sec[4] for sec in sectors])
    total = float(np.sum(all_s**2))
    order = np.argsort(-all_s, kind="stable")
    keep = min(chi, int(np.count_nonzero(all_s**2 > cutoff * total)))
    keep = max(keep, 1)
    threshold_idx = np.zeros(all_s.size, dtype=bool)
    threshold_idx[order[:keep]] = True

    newS, newQ, left_cols, right_rows = [], [], [], []
    pos = 0
    for Qm, r, c, X, s, vh in sectors:
        k = threshold_idx[pos:pos + s.size]
        pos += s.size
        if not k.any():
            continue
        vk = vh[k]
        newS.append(s[k])
        newQ.append(np.full(int(k.sum()), Qm, dtype=np.int64))
        left_cols.append((r, X @ vk.conj().T))
        right_rows.append((c, vk))

    S = np.concatenate(newS)
    kept = float(np.sum(S**2))
    norm = np.sqrt(kept)
    chiM = S.size
    newL = np.zeros((chiL * d, chiM), dtype=complex)
    newR = np.zeros((chiM, d * chiR), dtype=complex)
    off = 0
    for (r, L), (c, R) in zip(left_cols, right_rows):
        k = L.shape[1]
        newL[r, off:off + k] = L / norm
        newR[off:off + k][:, c] = R
        off += k
    state.B[j] = newL.reshape(chiL, d, chiM)
    state.B[j + 1] = newR.reshape(chiM, d, chiR)
    state.S[j + 1] = S / norm
    state.Q[j + 1] = np.concatenate(newQ)
    return max(0.0, 1.0 - kept / total)


@dataclass
class TrotterSchedule:
    """Sequence of (layer, gates) applications making up one time step."""

    layers: list[tuple[list[int], list[Gate]]]


def build_schedule(cfg: SimulationConfig, dt: float, order: int = 2) -> TrotterSchedule:
    """Gate layers for one step of length ``dt`` (second or fourth order)."""
    space = LocalSpace(cfg.n_max)
    wr, wa = cfg.frequencies
    h_site = space.onsite(cfg.g, wr, wa)
    M = cfg.M
    even = list(range(0, M - 1, 2))
    odd = list(range(1, M - 1, 2))
    h_even = space.bond_hamiltonian(cfg.J, h_site, h_site)
    h_odd = space.bond_hamiltonian(cfg.J)

    def strang(tau):
        if not odd:
            return [(even, [make_gate(h_even, tau, space)] * len(even))]
        half = (even, [make_gate(h_even, tau / 2, space)] * len(even))
        return [half, (odd, [make_gate(h_odd, tau, space)] * len(odd)), half]

    if order == 2:
        return TrotterSchedule(strang(dt))
    if order == 4:
        p = SUZUKI_P
        outer = strang(p * dt)
        inner = strang((1 - 4 * p) * dt)
        return TrotterSchedule(outer * 2 + inner + outer * 2)
    raise ValueError("order must be 2 or 4")


def tebd_step(state: MPSState, schedule: TrotterSchedule, chi: int, cutoff: float) -> float:
    """Advance by one Trotter step; returns the weight discarded in the step."""
    lost = 0.0
    for sites, gates in schedule.layers:
        for j, gate in zip(sites, gates):
            lost += apply_two_site(state, j, gate, chi, cutoff)
    state.discarded_weight += lost
    return lost


def evolve_tebd(cfg: SimulationConfig, chi: int | None = None, dt: float | None = None,
                state: MPSState | None = None, order: int | None = None) -> Trajectory:
    """TEBD evolution of the half-filled initial state.

    Samples are taken every ``cfg.sample_dt``; ``dt`` is reduced if needed so
    that an integer number of steps fits each sampling interval. A
    :class:`DiscardedWeightWarning` is issued when one step discards more
    than ``cfg.discarded_alarm``; excitation drift above ``cfg.drift_limit``
    raises :class:`ExcitationDriftError`.
    """
    chi = cfg.chi if chi is None else int(chi)
    dt = cfg.dt if dt is None else float(dt)
    order = cfg.trotter_order if order is None else order
    if chi < 1:
        raise ValueError("chi must be >= 1")
    if not 0 < dt <= 0.05 / cfg.J:
        raise ValueError("dt must lie in (0, 0.05/J]")
    state = mps_from_product(cfg) if state is None else state
    n_sub = max(1, int(np.ceil(cfg.sample_dt / dt - 1e-9)))
    step = cfg.sample_dt / n_sub
    schedule = build_schedule(cfg, step, order)
    times = cfg.times
    T, M = times.size, cfg.M
    photons = np.empty((T, M))
    tls = np.empty((T, M))
    nn1 = np.empty((T, M))
    exc = np.empty(T)
    disc = np.zeros(T)
    bond = np.zeros(T, dtype=np.int64)
    alarms = 0
    for i in range(T):
        if i:
            lost = 0.0
            for _ in range(n_sub):
                lost += tebd_step(state, schedule, chi, cfg.svd_cutoff)
            if lost > cfg.discarded_alarm:
                if not alarms:
                    warnings.warn(f"discarded weight {lost:.3e} in one sample interval at "
                                  f"t = {times[i]:.4g}/J (alarm {cfg.discarded_alarm:.1e})",
                                  DiscardedWeightWarning, stacklevel=2)
                alarms += 1
            disc[i] = lost
        m = state.measure()
        photons[i], tls[i], nn1[i], exc[i] = m["photons"], m["tls"], m["nn1"], m["excitation"]
        bond[i] = max(state.bond_dims, default=1)
        drift = abs(exc[i] - exc[0]) / exc[0]
        if drift > cfg.drift_limit:
            raise ExcitationDriftError(
                f"total excitation drifted by {100 * drift:.3g}% at t = {times[i]:.4g}/J"
            )
    if alarms > 1:
        warnings.warn(f"{alarms} sample intervals exceeded the discarded-weight alarm; "
                      f"cumulative discarded weight {state.discarded_weight:.3e}",
                      DiscardedWeightWarning, stacklevel=2)
    from .exact import g2_from_moments

    return Trajectory(
        times=times,
        photons=photons,
        tls=tls,
        g2=g2_from_moments(photons, nn1),
        monitors={"N_total": exc, "discarded_weight": disc,
                  "max_bond": bond.astype(float)},
        meta={"backend": "tebd", "chi": chi, "dt": step, "trotter_order": order,
              "window": cfg.window, "config_hash": cfg.config_hash(),
              "discarded_total": state.discarded_weight, "alarms": alarms},
    )


def zbar_surface(cfg: SimulationConfig, g_grid, M_grid=None, N0_grid=None,
                 exact_limit: int = 20_000) -> list[dict]:
    """Time-averaged imbalance over couplings and sizes or initial fillings.

    Points whose excitation sector has at most ``exact_limit`` states use the
    exact propagator; the rest use TEBD. Failures are flagged per point.
    """
    from .exact import CapacityError, evolve_exact
    from .model import enumerate_subspace

    g_grid = sorted(float(g) for g in g_grid)
    M_grid = [cfg.M] if M_grid is None else [int(m) for m in M_grid]
    N0_grid = [cfg.N0] if N0_grid is None else [int(n) for n in N0_grid]
    if not g_grid or not M_grid or not N0_grid:
        raise ValueError("grids must be non-empty")
    rows = []
    for M in M_grid:
        for N0 in N0_grid:
            for g in g_grid:
                point = cfg.replace(M=M, N0=N0, g=g, n_max=None)
                dim = enumerate_subspace(M, point.n_max, point.N_total).dim
                row = {"M": M, "N0": N0, "g": g, "backend": "", "Zbar": float("nan"),
                       "ok": True, "error": ""}
                try:
                    if dim <= exact_limit:
                        row["backend"] = "exact"
                        traj = evolve_exact(point)
                    else:
                        row["backend"] = "tebd"
                        with warnings.catch_warnings():
                            warnings.simplefilter("ignore", DiscardedWeightWarning)
                            traj = evolve_tebd(point)
                    row["Zbar"] = traj.zbar(cfg.window)
                except (ExcitationDriftError, CapacityError, ValueError) as exc:
                    row["ok"], row["error"] = False, str(exc)
                rows.append(row)
    return rows


def surface_widths(rows: list[dict], key: str = "M", lower: float = 0.1,
                   upper: float = 0.9) -> dict[int, float | None]:
    """Transition width per value of ``key`` (rows sharing the other parameter)."""
    out = {}
    for v in sorted({r[key] for r in rows}):
        sel = [r for r in rows if r[key] == v and r["ok"]]
        out[v] = transition_width([r["g"] for r in sel], [r["Zbar"] for r in sel], lower, upper)
    return out


def surface_onsets(rows: list[dict], key: str = "N0", threshold: float = 0.5):
    out = {}
    for v in sorted({r[key] for r in rows}):
        sel = [r for r in rows if r[key] == v and r["ok"]]
        out[v] = locate_transition([r["g"] for r in sel], [r["Zbar"] for r in sel], threshold)
    return out


# Checkpoint layout (little endian):
#   8s magic "FJCHMPS1", int64 M, int64 n_max, float64 discarded_weight,
#   then per site j: int64 chiL, int64 d, int64 chiR followed by the tensor
#   as row-major complex128; then per bond j = 0..M: int64 k, k float64
#   Schmidt values and k int64 charges.
_MAGIC = b"FJCHMPS1"


def save_checkpoint(state: MPSState, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqd", state.M, state.space.n_max, state.discarded_weight))
        for B in state.B:
            fh.write(struct.pack("<qqq", *B.shape))
            fh.write(np.ascontiguousarray(B, dtype="<c16").tobytes())
        for s, q in zip(state.S, state.Q):
            fh.write(struct.pack("<q", s.size))
            fh.write(np.asarray(s, dtype="<f8").tobytes())
            fh.write(np.asarray(q, dtype="<i8").tobytes())


def load_checkpoint(path: str | Path) -> MPSState:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path} is not an MPS checkpoint")
        M, n_max, disc = struct.unpack("<qqd", fh.read(24))
        B = []
        for _ in range(M):
            shape = struct.unpack("<qqq", fh.read(24))
            n = int(np.prod(shape))
            B.append(np.frombuffer(fh.read(16 * n), dtype="<c16").reshape(shape).astype(complex))
        S, Q = [], []
        for _ in range(M + 1):
            (k,) = struct.unpack("<q", fh.read(8))
            S.append(np.frombuffer(fh.read(8 * k), dtype="<f8").astype(float))
            Q.append(np.frombuffer(fh.read(8 * k), dtype="<i8").astype(np.int64))
    return MPSState(B, S, Q, LocalSpace(n_max), disc)
