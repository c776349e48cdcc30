"""Dissipative dimer dynamics under a Lindblad master equation.

The density matrix lives on the product space truncated to total
excitation at most the initial value: photon loss and TLS decay only lower
the excitation number and the Hamiltonian conserves it, so no amplitude
ever leaves this space and the truncation is exact.

Rate convention: ``kappa`` multiplies the dissipator on the photon mode
``a`` and ``gamma`` the one on the TLS lowering operator. The prose of the
source model swaps the two names while its master equation uses this
assignment; the figures use equal rates so results are unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .config import SimulationConfig
from .exact import G2_FLOOR
from .model import (
    SubspaceBasis,
    build_hamiltonian,
    truncated_space,
)
from .observables import Trajectory, locate_transition, time_average

POSITIVITY_LIMIT = -1e-5
MAX_DIM = 4000


class PositivityError(RuntimeError):
    """The density matrix acquired a clearly negative eigenvalue."""


class CapacityError(MemoryError):
    """The truncated space is too large for dense density matrices."""


def g2_value(n: float, nn1: float, floor: float = G2_FLOOR) -> float:
    """``<n(n-1)>/<n>^2``, NaN (undefined) when ``<n>`` is below ``floor``."""
    if n < floor:
        return float("nan")
    return float(nn1 / n**2)


@dataclass
class DensityMatrix:
    """Dense density matrix over a truncated product basis."""

    rho: np.ndarray
    basis: SubspaceBasis

    @property
    def dimension(self) -> int:
        return self.rho.shape[0]

    @classmethod
    def pure(cls, psi: np.ndarray, basis: SubspaceBasis) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        return cls(np.outer(psi, psi.conj()), basis)

    def trace(self) -> float:
        return float(np.trace(self.rho).real)

    def hermiticity_error(self) -> float:
        return float(np.abs(self.rho - self.rho.conj().T).max())

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.rho + self.rho.conj().T))[0])

    def populations(self) -> np.ndarray:
        return np.diag(self.rho).real

    def photons(self) -> np.ndarray:
        return self.populations() @ self.basis.photons

    def tls(self) -> np.ndarray:
        return self.populations() @ self.basis.tls

    def excitation(self) -> float:
        return float(self.populations() @ self.basis.excitations)


def g2_local(rho: DensityMatrix, site: int, floor: float = G2_FLOOR) -> float:
    """Equal-time ``g2`` of the photon mode at ``site`` (1-based)."""
    if not 1 <= site <= rho.basis.M:
        raise ValueError(f"site must lie in 1..{rho.basis.M}, got {site}")
    p = rho.populations()
    n = rho.basis.photons[:, site - 1].astype(float)
    return g2_value(float(p @ n), float(p @ (n * (n - 1))), floor)


def _lowering(basis: SubspaceBasis, site: int, kind: str) -> sp.csr_matrix:
    """Site lowering operator on a truncated space (rows and columns in ``basis``)."""
    nb = basis.n_max + 1
    local = basis.local.copy()
    col = local[:, site]
    if kind == "photon":
        n = col % nb
        ok = n > 0
        amp = np.sqrt(n[ok].astype(float))
        local[ok, site] -= 1
    elif kind == "tls":
        ok = col >= nb
        amp = np.ones(int(ok.sum()))
        local[ok, site] -= nb
    else:
        raise ValueError(kind)
    from ._kernels_py import config_keys

    keys = config_keys(local[ok], basis.local_dim)
    pos, found = basis.lookup(keys)
    src = np.flatnonzero(ok)
    return sp.csr_matrix((amp[found], (pos[found], src[found])), shape=(basis.dim, basis.dim))


def jump_operators(basis: SubspaceBasis, kappa: float, gamma: float) -> list[tuple[str, sp.csr_matrix]]:
    """``sqrt(rate) * O`` for every nonzero channel, labelled by site and kind."""
    out = []
    for j in range(basis.M):
        if kappa > 0:
            out.append((f"a_{j + 1}", np.sqrt(kappa) * _lowering(basis, j, "photon")))
        if gamma > 0:
            out.append((f"sm_{j + 1}", np.sqrt(gamma) * _lowering(basis, j, "tls")))
    return out


class Liouvillian:
    """Right-hand side of the master equation with sparse operators."""

    def __init__(self, H, jumps):
        self.H = sp.csr_matrix(H, dtype=complex)
        self.jumps = [sp.csr_matrix(L, dtype=complex) for L in jumps]
        decay = sp.csr_matrix(self.H.shape, dtype=complex)
        for L in self.jumps:
            decay = decay + L.conj().T @ L
        # non-Hermitian effective Hamiltonian
        self.Heff = (self.H - 0.5j * decay).tocsr()
        self.dim = self.H.shape[0]

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        A = -1j * (self.Heff @ rho)
        out = A + A.conj().T
        for L in self.jumps:
            # L rho L^dag = (L (L rho)^dag)^dag
            X = L @ rho
            out += (L @ X.conj().T).conj().T
        return out

    def rhs(self, t, y):
        n = self.dim
        return self(y.view(complex).reshape(n, n)).reshape(-1).view(float)


def space_for(cfg: SimulationConfig) -> SubspaceBasis:
    """Product space of the array truncated to excitation <= the initial value."""
    basis = truncated_space(cfg.M, cfg.n_max, cfg.N_total)
    if basis.dim > MAX_DIM:
        raise CapacityError(f"truncated space has {basis.dim} states, budget is {MAX_DIM}")
    return basis


def evolve_master(cfg: SimulationConfig, rho0: DensityMatrix | None = None) -> Trajectory:
    """Integrate the master equation from the half-filled Fock state.

    Samples per-site photons, TLS excitation and ``g2`` together with trace,
    Hermiticity, minimum eigenvalue and total excitation monitors. Raises
    :class:`PositivityError` if an eigenvalue drops below -1e-5.
    """
    basis = space_for(cfg)
    H = build_hamiltonian(basis, cfg).matrix
    jumps = [L for _, L in jump_operators(basis, cfg.kappa, cfg.gamma)]
    liou = Liouvillian(H, jumps)
    if rho0 is None:
        sector = build_initial_state_in(basis, cfg)
        rho0 = DensityMatrix.pure(sector, basis)
    times = cfg.times
    y0 = np.ascontiguousarray(rho0.rho, dtype=complex).reshape(-1).view(float).copy()
    sol = solve_ivp(liou.rhs, (times[0], times[-1]), y0, method="DOP853", t_eval=times,
                    rtol=cfg.lindblad_rtol, atol=cfg.lindblad_atol)
    if not sol.success:
        raise RuntimeError(f"master equation integration failed: {sol.message}")

    T, M = times.size, cfg.M
    n_ph = basis.photons.astype(float)
    photons = np.empty((T, M))
    tls = np.empty((T, M))
    g2 = np.empty((T, M))
    trace = np.empty(T)
    herm = np.empty(T)
    min_eig = np.empty(T)
    exc = np.empty(T)
    n = liou.dim
    states = np.ascontiguousarray(sol.y.T).view(complex).reshape(T, n, n)
    for i in range(T):
        rho = states[i]
        p = np.diag(rho).real
        photons[i] = p @ n_ph
        tls[i] = p @ basis.tls
        nn1 = p @ (n_ph * (n_ph - 1))
        g2[i] = [g2_value(photons[i, j], nn1[j]) for j in range(M)]
        trace[i] = np.trace(rho).real
        herm[i] = np.abs(rho - rho.conj().T).max()
        min_eig[i] = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
        exc[i] = p @ basis.excitations
        if min_eig[i] < POSITIVITY_LIMIT:
            raise PositivityError(
                f"minimum eigenvalue {min_eig[i]:.3e} at t = {times[i]:.4g}/J"
            )
    return Trajectory(
        times=times,
        photons=photons,
        tls=tls,
        g2=g2,
        monitors={"trace": trace, "hermiticity": herm, "min_eig": min_eig, "N_total": exc},
        meta={"backend": "lindblad", "kappa": cfg.kappa, "gamma": cfg.gamma,
              "dim": basis.dim, "nfev": int(sol.nfev), "window": cfg.window,
              "config_hash": cfg.config_hash(),
              "final_rho": states[-1].copy()},
    )


def build_initial_state_in(basis: SubspaceBasis, cfg: SimulationConfig) -> np.ndarray:
    """Fock initial state expressed in a (multi-sector) truncated basis."""
    from .model import initial_configuration

    conf = initial_configuration(cfg.M, cfg.N0)
    psi = np.zeros(basis.dim, dtype=complex)
    psi[basis.index_of(conf)] = 1.0
    return psi


def g2_average(traj: Trajectory, site: int = 1, window=None) -> tuple[float, float]:
    """Time average of ``g2`` at ``site`` over defined samples, and the undefined fraction."""
    window = window or tuple(traj.meta.get("window", (0.0, 20.0)))
    series = traj.g2[:, site - 1]
    inside = (traj.times >= window[0]) & (traj.times <= window[1])
    undefined = float(np.mean(~np.isfinite(series[inside]))) if inside.any() else 1.0
    try:
        value = time_average(traj.times, series, window)
    except ValueError:
        value = float("nan")
    return value, undefined


@dataclass
class ChartRow:
    N0: int
    g: float
    loss: bool
    Zbar: float
    g2bar: float
    undefined_fraction: float
    ok: bool = True
    error: str = ""
    monitors: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"N0": self.N0, "g": self.g, "loss": self.loss, "Zbar": self.Zbar,
                "g2bar": self.g2bar, "undefined_fraction": self.undefined_fraction,
                "ok": self.ok, "error": self.error}


def _chart_point(args) -> ChartRow:
    cfg, N0, g, loss = args
    point = cfg.replace(N0=N0, g=g, n_max=None)
    if not loss:
        point = point.replace(kappa=0.0, gamma=0.0)
    try:
        traj = evolve_master(point)
    except (PositivityError, CapacityError, RuntimeError) as exc:
        return ChartRow(N0, g, loss, float("nan"), float("nan"), float("nan"), False, str(exc))
    g2bar, undef = g2_average(traj, 1, cfg.window)
    return ChartRow(N0, g, loss, traj.zbar(cfg.window), g2bar, undef,
                    monitors={"max_trace_error": float(np.abs(traj.monitors["trace"] - 1).max()),
                              "min_eig": float(traj.monitors["min_eig"].min())})


def transition_chart(cfg: SimulationConfig, g_grid, N0_list, loss=(False, True),
                     jobs: int = 1) -> list[ChartRow]:
    """Time-averaged imbalance and ``g2`` of the pumped site per (N0, g, loss)."""
    g_grid = sorted(float(g) for g in g_grid)
    N0_list = [int(n) for n in N0_list]
    if isinstance(loss, bool):
        loss = (loss,)
    if not g_grid or not N0_list:
        raise ValueError("grids must be non-empty")
    tasks = [(cfg, N0, g, bool(lo)) for lo in loss for N0 in N0_list for g in g_grid]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_chart_point, tasks))
    return [_chart_point(t) for t in tasks]


def chart_onsets(rows: list[ChartRow], threshold: float = 0.5) -> dict[tuple[int, bool], float | None]:
    """Located ``Zbar`` transition per (N0, loss)."""
    out = {}
    for key in sorted({(r.N0, r.loss) for r in rows}):
        sel = [r for r in rows if (r.N0, r.loss) == key and r.ok]
        out[key] = locate_transition([r.g for r in sel], [r.Zbar for r in sel], threshold)
    return out
