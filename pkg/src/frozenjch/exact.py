"""Closed-system quantum evolution inside one excitation sector.

Small sectors are propagated through a full eigendecomposition; large ones
with restarted Lanczos (Krylov) steps. The spectral tools also provide the
eigenmode analysis of the initial state: overlaps with each eigenstate and
the central current correlator ``C = |<a^dag_{M/2} a_{M/2+1}>|`` per mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .config import SimulationConfig
from .model import (
    SubspaceBasis,
    build_hamiltonian,
    build_hopping_operator,
    build_initial_state,
    enumerate_subspace,
)
from .observables import Trajectory

DEGENERACY_TOL = 1e-9


class CapacityError(MemoryError):
    """The sector is larger than the configured dimension budget."""


@dataclass
class SpectralDecomposition:
    """Eigenpairs with ascending energies and orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    basis: SubspaceBasis | None = None
    degenerate_groups: list[list[int]] = field(default_factory=list)

    def residuals(self, H) -> np.ndarray:
        """Per-pair ``||H v - lambda v||``."""
        HV = H @ self.eigenvectors
        return np.linalg.norm(HV - self.eigenvectors * self.eigenvalues, axis=0)


def _dense(H) -> np.ndarray:
    H = getattr(H, "matrix", H)
    return H.toarray() if sp.issparse(H) else np.asarray(H)


def spectral_decomposition(H, basis: SubspaceBasis | None = None) -> SpectralDecomposition:
    """Dense Hermitian eigendecomposition with a reproducible gauge.

    Each eigenvector's first largest-magnitude component is made real
    positive. Within a degenerate group (energies within 1e-9) vectors are
    ordered lexicographically on their leading coefficients.
    """
    w, v = la.eigh(_dense(H))
    v = v.astype(complex)
    mag = np.abs(v)
    lead = np.argmax(mag >= mag.max(axis=0) * (1 - 1e-8), axis=0)
    phase = v[lead, np.arange(v.shape[1])]
    v *= (phase.conj() / np.abs(phase))[None, :]
    groups = []
    start = 0
    for k in range(1, len(w) + 1):
        if k == len(w) or w[k] - w[k - 1] > DEGENERACY_TOL:
            if k - start > 1:
                idx = list(range(start, k))
                ordered = sorted(idx, key=lambda c: tuple(-np.round(v[:, c].real, 10)))
                v[:, idx] = v[:, ordered]
                groups.append(idx)
            start = k
    return SpectralDecomposition(w, v, basis, groups)


def _lanczos(matvec, v0: np.ndarray, m_max: int):
    """Lanczos with full reorthogonalisation: (V, alpha, beta, beta_next)."""
    n = v0.size
    m_max = min(m_max, n)
    V = np.empty((m_max, n), dtype=complex)
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    V[0] = v0 / np.linalg.norm(v0)
    beta_next = 0.0
    m = m_max
    for j in range(m_max):
        w = matvec(V[j])
        alpha[j] = np.vdot(V[j], w).real
        w = w - alpha[j] * V[j]
        if j > 0:
            w = w - beta[j] * V[j - 1]
        # second pass of Gram-Schmidt against the whole basis
        w = w - (V[: j + 1] @ w.conj()).conj() @ V[: j + 1]
        b = np.linalg.norm(w)
        if j + 1 < m_max:
            if b < 1e-13:
                m = j + 1
                beta_next = 0.0
                break
            beta[j + 1] = b
            V[j + 1] = w / b
        else:
            beta_next = b
    return V[:m], alpha[:m], beta[1:m], beta_next


def krylov_propagate(H, psi0: np.ndarray, times, m_max: int = 30,
                     tol: float = 1e-12) -> Iterator[tuple[float, np.ndarray]]:
    """Yield ``(t, psi(t))`` at each requested time using Lanczos steps.

    A Krylov space built at the current state serves every sample it can
    reach within the error estimate ``beta_m |[exp(-iT tau)]_{m,1}|``; when
    even the next sample is out of reach the step is subdivided internally.
    """
    if sp.issparse(H):
        H = H.astype(complex).tocsr()
    matvec = H.__matmul__
    times = np.asarray(times, dtype=float)
    psi = np.asarray(psi0, dtype=complex).copy()
    norm0 = np.linalg.norm(psi)
    t = float(times[0])
    yield t, psi.copy()
    k = 1
    while k < times.size:
        V, a, b, b_next = _lanczos(matvec, psi, m_max)
        theta, S = la.eigh_tridiagonal(a, b) if len(a) > 1 else (a.copy(), np.ones((1, 1)))
        nrm = np.linalg.norm(psi)
        s0 = S[0].conj()

        def coeffs(tau):
            return S @ (np.exp(-1j * theta * tau) * s0)

        def error(tau):
            if b_next == 0.0:
                return 0.0
            return b_next * abs(coeffs(tau)[-1]) * nrm

        tau = times[k] - t
        if error(tau) > tol:
            # substep: bisect for a reachable fraction of the next interval
            lo, hi = 0.0, tau
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if error(mid) <= tol:
                    lo = mid
                else:
                    hi = mid
            if lo <= 0.0:
                raise RuntimeError("Krylov step collapsed; increase krylov_dim")
            psi = nrm * (V.T @ coeffs(lo))
            t += lo
            continue
        last = psi
        while k < times.size:
            tau = times[k] - t
            if error(tau) > tol:
                break
            last = nrm * (V.T @ coeffs(tau))
            yield float(times[k]), last
            k += 1
        t = float(times[k - 1])
        psi = last
    del norm0


def spectral_propagate(decomp: SpectralDecomposition, psi0: np.ndarray,
                       times) -> Iterator[tuple[float, np.ndarray]]:
    """Yield ``(t, psi(t))`` from a full eigendecomposition."""
    V = decomp.eigenvectors
    c0 = V.conj().T @ psi0
    for t in np.asarray(times, dtype=float):
        yield float(t), V @ (np.exp(-1j * decomp.eigenvalues * t) * c0)


def propagate(H, psi0, times, method: str = "auto", dense_threshold: int = 4000,
              krylov_dim: int = 30, krylov_tol: float = 1e-12):
    """Dispatch to :func:`spectral_propagate` or :func:`krylov_propagate`."""
    mat = getattr(H, "matrix", H)
    if method == "auto":
        method = "spectral" if mat.shape[0] < dense_threshold else "krylov"
    if method == "spectral":
        return spectral_propagate(spectral_decomposition(mat), psi0, times)
    if method == "krylov":
        return krylov_propagate(mat.tocsr() if sp.issparse(mat) else mat, psi0, times,
                                krylov_dim, krylov_tol)
    raise ValueError(f"unknown method {method!r}")


def sector_basis(cfg: SimulationConfig) -> SubspaceBasis:
    """Sector of the initial state, refusing sectors above ``cfg.max_dim``."""
    basis = enumerate_subspace(cfg.M, cfg.n_max, cfg.N_total)
    if basis.dim > cfg.max_dim:
        raise CapacityError(
            f"sector dimension {basis.dim} exceeds the budget of {cfg.max_dim} states"
        )
    return basis


def measure_state(psi: np.ndarray, basis: SubspaceBasis):
    """Per-site photons, TLS excitation, <n(n-1)> and total excitation of a vector."""
    p = np.abs(psi) ** 2
    n = basis.photons
    photons = p @ n
    tls = p @ basis.tls
    nn1 = p @ (n * (n - 1))
    return photons, tls, nn1, float(p @ basis.excitations), float(p.sum())


G2_FLOOR = 1e-6


def g2_from_moments(n, nn1, floor: float = G2_FLOOR):
    """``<n(n-1)>/<n>^2`` with NaN where ``<n>`` is below ``floor``."""
    n = np.asarray(n, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n >= floor, np.asarray(nn1) / np.where(n >= floor, n, 1.0) ** 2, np.nan)


def evolve_exact(cfg: SimulationConfig, psi0: np.ndarray | None = None,
                 method: str = "auto") -> Trajectory:
    """Exact unitary evolution of the half-filled initial state.

    ``method`` is ``"spectral"``, ``"krylov"`` or ``"auto"`` (spectral below
    ``cfg.dense_threshold`` states).
    """
    basis = sector_basis(cfg)
    H = build_hamiltonian(basis, cfg)
    psi0 = build_initial_state(basis, cfg) if psi0 is None else np.asarray(psi0, dtype=complex)
    times = cfg.times
    if method == "auto":
        method = "spectral" if basis.dim < cfg.dense_threshold else "krylov"
    T, M = times.size, cfg.M
    photons = np.empty((T, M))
    tls = np.empty((T, M))
    nn1 = np.empty((T, M))
    n_tot = np.empty(T)
    norm = np.empty(T)
    energy = np.empty(T)
    for i, (_, psi) in enumerate(propagate(H, psi0, times, method, cfg.dense_threshold,
                                           cfg.krylov_dim, cfg.krylov_tol)):
        photons[i], tls[i], nn1[i], n_tot[i], norm[i] = measure_state(psi, basis)
        energy[i] = np.vdot(psi, H.matrix @ psi).real
    return Trajectory(
        times=times,
        photons=photons,
        tls=tls,
        g2=g2_from_moments(photons, nn1),
        monitors={"N_total": n_tot, "norm": np.sqrt(norm), "energy": energy},
        meta={"backend": "exact", "method": method, "dim": basis.dim, "window": cfg.window,
              "config_hash": cfg.config_hash()},
    )


def mode_current(mode: np.ndarray, basis: SubspaceBasis, hop=None) -> float:
    """``|<a^dag_{M/2} a_{M/2+1}>|`` in a normalised state."""
    if hop is None:
        hop = build_hopping_operator(basis, basis.M // 2, basis.M // 2 + 1)
    mat = getattr(hop, "matrix", hop)
    return float(abs(np.vdot(mode, mat @ mode)))


@dataclass
class ModeAnalysis:
    """Per-eigenmode energy, initial-state overlap, central current and label."""

    g: float
    energy: np.ndarray
    overlap: np.ndarray
    current: np.ndarray
    label: np.ndarray
    degenerate_groups: list[list[int]] = field(default_factory=list)
    threshold: float = 1e-3

    def rows(self) -> list[dict]:
        return [
            {"mode": i, "energy": float(e), "overlap": float(o), "C": float(c), "label": str(lb)}
            for i, (e, o, c, lb) in enumerate(zip(self.energy, self.overlap, self.current, self.label))
        ]

    def weight(self, label: str) -> float:
        return float(self.overlap[self.label == label].sum())


def spectral_overlaps(cfg: SimulationConfig, decomp: SpectralDecomposition | None = None) -> ModeAnalysis:
    """Overlap of the initial state with every eigenmode, plus each mode's current.

    Modes with ``C > cfg.current_threshold`` are labelled ``P``
    (propagating), the rest ``N``.
    """
    basis = sector_basis(cfg)
    if basis.dim >= cfg.dense_threshold:
        raise CapacityError(
            f"full decomposition needs dimension < {cfg.dense_threshold}, sector has {basis.dim}"
        )
    H = build_hamiltonian(basis, cfg)
    if decomp is None:
        decomp = spectral_decomposition(H.matrix, basis)
    psi0 = build_initial_state(basis, cfg)
    V = decomp.eigenvectors
    overlap = np.abs(V.conj().T @ psi0) ** 2
    hop = build_hopping_operator(basis, cfg.M // 2, cfg.M // 2 + 1).matrix
    current = np.abs(np.einsum("ij,ij->j", V.conj(), hop @ V))
    label = np.where(current > cfg.current_threshold, "P", "N")
    return ModeAnalysis(cfg.g, decomp.eigenvalues, overlap, current, label,
                        decomp.degenerate_groups, cfg.current_threshold)


def overlap_sweep(cfg: SimulationConfig, g_grid) -> list[ModeAnalysis]:
    """Mode analysis per coupling; labels follow the modes at the largest ``g``.

    Modes are matched across couplings by their energy rank.
    """
    g_grid = sorted(float(g) for g in g_grid)
    if not g_grid:
        raise ValueError("g_grid must be non-empty")
    out = [spectral_overlaps(cfg.replace(g=g)) for g in g_grid]
    final = out[-1].label
    for ma in out:
        ma.label = final.copy()
    return out


def default_overlap_grid(num: int = 60) -> np.ndarray:
    """Geometric coupling grid g/J in [0.1, 100]."""
    return np.geomspace(0.1, 100.0, num)
