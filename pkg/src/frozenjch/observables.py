"""Backend-agnostic summary observables: photon imbalance and time averages."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class WindowClippedWarning(UserWarning):
    """The averaging window extended past the sampled time range."""


class NoDefinedSamplesError(ValueError):
    """Every sample in the averaging window is undefined."""


def imbalance(n, M: int | None = None):
    """Left-right photon imbalance ``(N_L - N_R) / (N_L + N_R)``.

    ``n`` holds per-site photon numbers, either one row of length M or an
    array of shape (T, M). Rows with no photons give NaN (undefined).
    """
    arr = np.asarray(n, dtype=float)
    M = arr.shape[-1] if M is None else M
    if M % 2 or arr.shape[-1] != M:
        raise ValueError(f"need an even number of sites matching M={M}")
    left = arr[..., : M // 2].sum(axis=-1)
    right = arr[..., M // 2 :].sum(axis=-1)
    total = left + right
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(total > 0, (left - right) / np.where(total > 0, total, 1.0), np.nan)
    if np.ndim(z) == 0:
        return float(z)
    return z


def time_average(t, values, window: tuple[float, float] = (0.0, 20.0)) -> float:
    """Trapezoidal time average of a sampled series over ``window``.

    NaN samples are undefined: segments touching them are dropped and the
    average is taken over the remaining length. A window reaching past the
    sampled range is clipped with a :class:`WindowClippedWarning`.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.ndim != 1 or t.shape != v.shape or t.size < 2:
        raise ValueError("need matching 1-d time and value arrays with >= 2 samples")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    t0, t1 = window
    lo, hi = max(t0, t[0]), min(t1, t[-1])
    if lo != t0 or hi != t1:
        warnings.warn(
            f"averaging window [{t0}, {t1}] clipped to sampled range [{lo}, {hi}]",
            WindowClippedWarning,
            stacklevel=2,
        )
    if not hi > lo:
        raise NoDefinedSamplesError(f"window [{t0}, {t1}] does not overlap the series")

    inside = (t > lo) & (t < hi)
    tt = np.concatenate([[lo], t[inside], [hi]])
    vv = np.concatenate([[_interp_edge(t, v, lo)], v[inside], [_interp_edge(t, v, hi)]])
    dt = np.diff(tt)
    ok = np.isfinite(vv[:-1]) & np.isfinite(vv[1:])
    length = dt[ok].sum()
    if length <= 0:
        raise NoDefinedSamplesError("no defined samples inside the averaging window")
    area = (0.5 * dt[ok] * (vv[:-1][ok] + vv[1:][ok])).sum()
    return float(area / length)


def _interp_edge(t, v, x):
    i = int(np.searchsorted(t, x))
    if i < t.size and t[i] == x:
        return v[i]
    a, b = i - 1, i
    w = (x - t[a]) / (t[b] - t[a])
    return (1 - w) * v[a] + w * v[b]


def locate_transition(g, zbar, threshold: float = 0.5) -> float | None:
    """First ``g`` (ascending grid) where ``zbar`` exceeds ``threshold``.

    Linearly interpolated between the bracketing grid points; None if the
    threshold is never crossed.
    """
    g = np.asarray(g, dtype=float)
    z = np.asarray(zbar, dtype=float)
    order = np.argsort(g, kind="stable")
    g, z = g[order], z[order]
    above = np.flatnonzero(np.nan_to_num(z, nan=-np.inf) > threshold)
    if above.size == 0:
        return None
    k = int(above[0])
    if k == 0 or not np.isfinite(z[k - 1]):
        return float(g[k])
    return float(g[k - 1] + (threshold - z[k - 1]) * (g[k] - g[k - 1]) / (z[k] - z[k - 1]))


def transition_width(g, zbar, lower: float = 0.1, upper: float = 0.9) -> float | None:
    """Width of the g-interval between the first crossings of ``lower`` and ``upper``."""
    a = locate_transition(g, zbar, lower)
    b = locate_transition(g, zbar, upper)
    if a is None or b is None:
        return None
    return b - a


@dataclass
class Trajectory:
    """Sampled time series of one run.

    ``photons`` and ``tls`` have shape (T, M); ``g2`` likewise with NaN where
    undefined. ``monitors`` holds per-time scalars such as the total
    excitation; ``site_data`` holds extra per-site series.
    """

    times: np.ndarray
    photons: np.ndarray
    tls: np.ndarray | None = None
    g2: np.ndarray | None = None
    monitors: dict[str, np.ndarray] = field(default_factory=dict)
    site_data: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.photons = np.asarray(self.photons, dtype=float)
        if self.photons.shape[0] != self.times.size:
            raise ValueError("photons must have one row per sample time")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def M(self) -> int:
        return self.photons.shape[1]

    @property
    def Z(self) -> np.ndarray:
        return imbalance(self.photons, self.M)

    def zbar(self, window: tuple[float, float] | None = None) -> float:
        window = window or tuple(self.meta.get("window", (0.0, 20.0)))
        return time_average(self.times, self.Z, window)

    def site_average(self, values: np.ndarray, site: int, window=None) -> float:
        """Time average of a per-site series (``site`` counts from 1)."""
        window = window or tuple(self.meta.get("window", (0.0, 20.0)))
        return time_average(self.times, values[:, site - 1], window)

    def left_fraction(self) -> np.ndarray:
        """Fraction of the photon population in the left half at each time."""
        tot = self.photons.sum(axis=1)
        return self.photons[:, : self.M // 2].sum(axis=1) / tot

    @property
    def total_photons(self) -> np.ndarray:
        return self.photons.sum(axis=1)
