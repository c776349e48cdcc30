"""Fixed-excitation Hilbert subspaces and sparse JCH operators.

Each resonator carries a two-level system, so the local space is TLS (x) Fock
with composite index ``i = tls * (n_max + 1) + n``. Basis states are stored as
rows of local indices and ordered lexicographically (site 1 most significant),
which is also the order of their mixed-radix integer keys.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
import scipy.sparse as sp

from . import kernels
from ._kernels_py import config_keys
from .config import SimulationConfig

OPERATOR_KINDS = ("annihilate_photon", "lower_tls", "number_photon", "number_tls")


class EmptySubspaceError(ValueError):
    """No configuration carries the requested excitation number."""


class BasisMismatchError(ValueError):
    """Basis and configuration disagree on M or n_max."""


class SiteConfiguration(NamedTuple):
    photon_occupations: tuple[int, ...]
    tls_excited: tuple[bool, ...]

    @property
    def total_excitation(self) -> int:
        return sum(self.photon_occupations) + sum(self.tls_excited)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """Enumerated many-body basis over one or more excitation sectors.

    ``local`` has shape (dim, M) and holds composite local indices; ``keys``
    are the sorted mixed-radix codes used for index lookup.
    """

    M: int
    n_max: int
    sectors: tuple[int, ...]
    local: np.ndarray
    keys: np.ndarray

    @property
    def dim(self) -> int:
        return self.local.shape[0]

    def __len__(self):
        return self.dim

    @property
    def N_total(self) -> int:
        if len(self.sectors) != 1:
            raise ValueError(f"basis spans several sectors {self.sectors}")
        return self.sectors[0]

    @property
    def local_dim(self) -> int:
        return 2 * (self.n_max + 1)

    @cached_property
    def photons(self) -> np.ndarray:
        return _frozen(self.local % (self.n_max + 1))

    @cached_property
    def tls(self) -> np.ndarray:
        return _frozen(self.local // (self.n_max + 1))

    @cached_property
    def excitations(self) -> np.ndarray:
        return _frozen(self.photons.sum(axis=1) + self.tls.sum(axis=1))

    @property
    def states(self) -> list[SiteConfiguration]:
        return [self.configuration(i) for i in range(self.dim)]

    def configuration(self, index: int) -> SiteConfiguration:
        n = self.photons[index]
        t = self.tls[index]
        return SiteConfiguration(tuple(int(x) for x in n), tuple(bool(x) for x in t))

    def key_of(self, photons: Iterable[int], tls: Iterable[bool] | None = None) -> int:
        photons = np.asarray(list(photons), dtype=np.int64)
        tls = np.zeros_like(photons) if tls is None else np.asarray(list(tls), dtype=np.int64)
        if photons.shape != (self.M,) or tls.shape != (self.M,):
            raise ValueError("configuration length does not match M")
        if photons.min() < 0 or photons.max() > self.n_max:
            return -1
        local = tls * (self.n_max + 1) + photons
        return int(config_keys(local[None, :], self.local_dim)[0])

    def index_of(self, config: SiteConfiguration | tuple) -> int:
        """Position of a configuration; raises ``KeyError`` if absent."""
        photons, tls = config
        key = self.key_of(photons, tls)
        pos = int(np.searchsorted(self.keys, key))
        if key < 0 or pos >= self.dim or self.keys[pos] != key:
            raise KeyError(f"configuration {tuple(config)} not in basis")
        return pos

    def lookup(self, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised key lookup: (positions, found mask)."""
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, max(self.dim - 1, 0))
        return pos, self.keys[pos] == keys

    def site_weights(self) -> np.ndarray:
        return self.local_dim ** np.arange(self.M - 1, -1, -1, dtype=np.int64)


def _check_key_range(M: int, n_max: int) -> None:
    if (2 * (n_max + 1)) ** M >= 2**62:
        raise ValueError(f"M={M}, n_max={n_max} exceeds the 64-bit key range")


def enumerate_subspace(M: int, n_max: int, N_total: int) -> SubspaceBasis:
    """Basis of all configurations with exactly ``N_total`` excitations."""
    if M < 1 or n_max < 0 or N_total < 0:
        raise ValueError("need M >= 1, n_max >= 0, N_total >= 0")
    _check_key_range(M, n_max)
    local = np.asarray(kernels.enumerate_configs(M, n_max, N_total), dtype=np.int64)
    if local.shape[0] == 0:
        raise EmptySubspaceError(
            f"no states with {N_total} excitations for M={M}, n_max={n_max} "
            f"(maximum {M * (n_max + 1)})"
        )
    keys = config_keys(local, 2 * (n_max + 1))
    return SubspaceBasis(M, n_max, (N_total,), local, keys)


def truncated_space(M: int, n_max: int, max_excitation: int) -> SubspaceBasis:
    """Union of all sectors with at most ``max_excitation`` excitations.

    This is the product space truncated at ``n_max`` photons per site and
    restricted to excitation numbers that losses can reach from a sector.
    """
    _check_key_range(M, n_max)
    reachable = min(max_excitation, M * (n_max + 1))
    blocks = [kernels.enumerate_configs(M, n_max, k) for k in range(reachable + 1)]
    local = np.concatenate([np.asarray(b, dtype=np.int64) for b in blocks if len(b)])
    keys = config_keys(local, 2 * (n_max + 1))
    order = np.argsort(keys, kind="stable")
    return SubspaceBasis(M, n_max, tuple(range(reachable + 1)), local[order], keys[order])


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Sparse matrix between two bases (``source`` -> ``target``)."""

    matrix: sp.csr_matrix
    source: SubspaceBasis
    target: SubspaceBasis
    name: str = ""

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self.matrix @ other.matrix, other.source, self.target)
        return self.matrix @ other

    @property
    def H(self) -> "SparseOperator":
        return SparseOperator(self.matrix.conj().T.tocsr(), self.target, self.source, self.name + "^dag")

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order]

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        diff = self.matrix - self.matrix.conj().T
        return diff.nnz == 0 or float(np.abs(diff.data).max()) <= atol

    def dump(self, path: str | Path, **params) -> None:
        write_triplets(path, self, **params)


def _resolve_params(basis: SubspaceBasis, cfg: SimulationConfig | None, kwargs) -> tuple:
    if cfg is not None:
        if cfg.M != basis.M or cfg.n_max != basis.n_max:
            raise BasisMismatchError(
                f"basis (M={basis.M}, n_max={basis.n_max}) does not match "
                f"config (M={cfg.M}, n_max={cfg.n_max})"
            )
        wr, wa = cfg.frequencies
        return cfg.g, cfg.J, wr, wa
    frame = kwargs.get("frame", "rotating")
    wr = kwargs.get("omega_r", 0.0) if frame == "lab" else 0.0
    wa = kwargs.get("omega_a", 0.0) if frame == "lab" else 0.0
    return kwargs.get("g", 0.0), kwargs.get("J", 1.0), wr, wa


def build_hamiltonian(basis: SubspaceBasis, cfg: SimulationConfig | None = None, **params) -> SparseOperator:
    """JCH Hamiltonian on ``basis`` with open boundaries.

    Parameters come from ``cfg`` or, for bare bases such as a single site,
    from keywords ``g``, ``J``, ``omega_r``, ``omega_a`` and ``frame``.
    """
    g, J, wr, wa = _resolve_params(basis, cfg, params)
    rows, cols, vals = kernels.jch_triplets(basis.local, basis.keys, basis.n_max, g, J, wr, wa)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim))
    mat.eliminate_zeros()
    mat.sort_indices()
    return SparseOperator(mat, basis, basis, "H")


def build_number_operator(basis: SubspaceBasis) -> SparseOperator:
    """Total excitation operator (photons plus excited TLS)."""
    mat = sp.diags(basis.excitations.astype(float), format="csr")
    return SparseOperator(mat, basis, basis, "N")


def lowered_basis(basis: SubspaceBasis) -> SubspaceBasis:
    """Sector basis with one excitation fewer (the target of a lowering operator)."""
    if len(basis.sectors) != 1:
        return basis
    return enumerate_subspace(basis.M, basis.n_max, basis.N_total - 1)


def build_site_operator(basis: SubspaceBasis, site: int, kind: str,
                        target: SubspaceBasis | None = None) -> SparseOperator:
    """Single-site operator; ``site`` counts from 1.

    Lowering operators map a sector to the sector below, so they return a
    rectangular matrix onto ``target`` (by default the lowered sector, or the
    basis itself when it spans several sectors).
    """
    if kind not in OPERATOR_KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    if not 1 <= site <= basis.M:
        raise IndexError(f"site {site} outside 1..{basis.M}")
    j = site - 1
    n = basis.photons[:, j]
    t = basis.tls[:, j]
    if kind == "number_photon":
        return SparseOperator(sp.diags(n.astype(float), format="csr"), basis, basis, f"n_{site}")
    if kind == "number_tls":
        return SparseOperator(sp.diags(t.astype(float), format="csr"), basis, basis, f"s+s-_{site}")

    if target is None:
        if len(basis.sectors) == 1 and basis.N_total == 0:
            raise EmptySubspaceError("cannot lower the vacuum sector")
        target = lowered_basis(basis)
    w = basis.site_weights()[j]
    if kind == "annihilate_photon":
        mask = n > 0
        shift = -w
        amp = np.sqrt(n[mask].astype(float))
        name = f"a_{site}"
    else:
        mask = t == 1
        shift = -(basis.n_max + 1) * w
        amp = np.ones(int(mask.sum()))
        name = f"s-_{site}"
    src = np.flatnonzero(mask)
    pos, found = target.lookup(basis.keys[mask] + shift)
    mat = sp.csr_matrix((amp[found], (pos[found], src[found])), shape=(target.dim, basis.dim))
    return SparseOperator(mat, basis, target, name)


def build_hopping_operator(basis: SubspaceBasis, site_to: int, site_from: int) -> SparseOperator:
    """``a^dag_{site_to} a_{site_from}`` within a sector (sites count from 1)."""
    a_from = build_site_operator(basis, site_from, "annihilate_photon")
    a_to = build_site_operator(basis, site_to, "annihilate_photon")
    return SparseOperator((a_to.matrix.T @ a_from.matrix).tocsr(), basis, basis,
                          f"a+_{site_to} a_{site_from}")


def initial_configuration(M: int, N0: int) -> SiteConfiguration:
    """Left half pumped with ``N0`` photons, right half empty, all TLS ground."""
    if M % 2:
        raise ValueError(f"M must be even, got {M}")
    photons = tuple([N0] * (M // 2) + [0] * (M // 2))
    return SiteConfiguration(photons, tuple([False] * M))


def build_initial_state(basis: SubspaceBasis, cfg: SimulationConfig) -> np.ndarray:
    """Unit vector on the half-filled Fock configuration."""
    if cfg.n_max < cfg.N0:
        raise ValueError(f"n_max={cfg.n_max} cannot hold N0={cfg.N0} photons")
    if basis.M != cfg.M:
        raise BasisMismatchError("basis and config disagree on M")
    config = initial_configuration(cfg.M, cfg.N0)
    try:
        idx = basis.index_of(config)
    except KeyError as exc:
        raise ValueError(f"initial configuration absent from basis: {exc}") from None
    psi = np.zeros(basis.dim, dtype=complex)
    psi[idx] = 1.0
    return psi


def write_triplets(path: str | Path, op: SparseOperator, **params) -> None:
    """Plain-text dump: ``#`` header lines, then one ``row col re im`` per entry."""
    rows, cols, vals = op.triplets()
    vals = np.asarray(vals, dtype=complex)
    lines = [
        "# frozenjch sparse-triplet v1",
        f"# name {op.name or 'operator'}",
        f"# shape {op.shape[0]} {op.shape[1]}",
        f"# basis M={op.source.M} n_max={op.source.n_max} sectors={','.join(map(str, op.source.sectors))}",
    ]
    for key in sorted(params):
        lines.append(f"# param {key}={params[key]!r}")
    lines.append(f"# nnz {len(rows)}")
    body = [f"{r} {c} {v.real!r} {v.imag!r}" for r, c, v in zip(rows.tolist(), cols.tolist(), vals.tolist())]
    Path(path).write_text("\n".join(lines + body) + "\n")


def read_triplets(path: str | Path) -> sp.csr_matrix:
    """Read a triplet dump back into a CSR matrix."""
    shape = None
    rows, cols, vals = [], [], []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# shape"):
            shape = tuple(int(x) for x in line.split()[2:4])
        elif line and not line.startswith("#"):
            r, c, re, im = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(complex(float(re), float(im)))
    if shape is None:
        raise ValueError(f"{path}: missing shape header")
    return sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=shape)


def write_basis(path: str | Path, basis: SubspaceBasis) -> None:
    """Basis listing, one configuration per line: index, photons, TLS flags."""
    lines = [
        "# frozenjch basis v1",
        f"# M={basis.M} n_max={basis.n_max} sectors={','.join(map(str, basis.sectors))} dim={basis.dim}",
    ]
    for i, (n, t) in enumerate(zip(basis.photons.tolist(), basis.tls.tolist())):
        lines.append(f"{i} {' '.join(map(str, n))} | {' '.join(map(str, t))}")
    Path(path).write_text("\n".join(lines) + "\n")
