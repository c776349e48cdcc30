"""CSV and JSON persistence plus trajectory comparison.

Every CSV starts with one ``# key=value ...`` comment line carrying the
config hash; floats are written with ``repr`` so identical runs give
byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .observables import Trajectory


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _header_line(meta: dict[str, Any]) -> str:
    return "# " + " ".join(f"{k}={_fmt(v)}" for k, v in meta.items()) + "\n"


def write_table(path: str | Path, columns: list[str], rows: Iterable[Iterable[Any]],
                meta: dict[str, Any]) -> Path:
    """Write a CSV table preceded by a metadata comment line."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(_header_line(meta))
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_table(path: str | Path) -> tuple[dict[str, str], list[str], list[list[str]]]:
    """Inverse of :func:`write_table`: (meta, columns, rows as strings)."""
    with open(path, newline="") as fh:
        first = fh.readline()
        meta = {}
        if first.startswith("#"):
            for item in first[1:].split():
                k, _, v = item.partition("=")
                meta[k] = v
        else:
            fh.seek(0)
        reader = csv.reader(fh)
        columns = next(reader)
        rows = [r for r in reader if r]
    return meta, columns, rows


def trajectory_columns(traj: Trajectory) -> list[str]:
    backend = traj.meta.get("backend", "")
    if backend == "semiclassical":
        return ["t_perJ", "site", "n", "re_m", "im_m", "z", "Z", "N_sc"]
    cols = ["t_perJ", "site", "n", "tls", "g2", "g2_defined", "Z"]
    if backend == "lindblad":
        return cols + ["N_total", "trace", "min_eig"]
    if backend == "tebd":
        return cols + ["N_total", "discarded_weight"]
    return cols + ["N_total"]


def write_trajectory(path: str | Path, traj: Trajectory, meta: dict[str, Any] | None = None) -> Path:
    """Long-format trajectory CSV, one row per (time, site)."""
    cols = trajectory_columns(traj)
    Z = traj.Z
    meta = {"config_hash": traj.meta.get("config_hash", ""),
            "backend": traj.meta.get("backend", "")} | (meta or {})
    series = {
        "n": traj.photons,
        "tls": traj.tls,
        "g2": traj.g2,
        "re_m": traj.site_data.get("re_m"),
        "im_m": traj.site_data.get("im_m"),
        "z": traj.site_data.get("z"),
    }

    def rows():
        for i, t in enumerate(traj.times):
            for j in range(traj.M):
                row = []
                for c in cols:
                    if c == "t_perJ":
                        row.append(float(t))
                    elif c == "site":
                        row.append(j + 1)
                    elif c == "Z":
                        row.append(float(Z[i]))
                    elif c == "g2_defined":
                        row.append(bool(np.isfinite(traj.g2[i, j])))
                    elif c in series:
                        row.append(float(series[c][i, j]))
                    else:
                        row.append(float(traj.monitors[c][i]))
                yield row

    return write_table(path, cols, rows(), meta)


def read_trajectory(path: str | Path) -> Trajectory:
    """Rebuild a :class:`Trajectory` from a CSV written by :func:`write_trajectory`."""
    meta, cols, rows = read_table(path)
    data = np.array([[float(x) for x in r] for r in rows])
    col = {c: k for k, c in enumerate(cols)}
    sites = data[:, col["site"]].astype(int)
    M = int(sites.max())
    T = data.shape[0] // M
    if T * M != data.shape[0]:
        raise ValueError(f"{path}: ragged trajectory table")

    def grid(name):
        return data[:, col[name]].reshape(T, M)

    times = grid("t_perJ")[:, 0]
    monitors = {c: grid(c)[:, 0] for c in ("N_sc", "N_total", "trace", "min_eig",
                                          "discarded_weight") if c in col}
    site_data = {c: grid(c) for c in ("re_m", "im_m", "z") if c in col}
    return Trajectory(
        times=times,
        photons=grid("n"),
        tls=grid("tls") if "tls" in col else None,
        g2=grid("g2") if "g2" in col else None,
        monitors=monitors,
        site_data=site_data,
        meta=dict(meta),
    )


def write_manifest(path: str | Path, manifest: dict[str, Any]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def compare(a: Trajectory, b: Trajectory, tol: float) -> dict[str, Any]:
    """Max and RMS deviation per observable on the common time grid.

    ``b`` is linearly interpolated onto the samples of ``a`` inside the
    overlap of both supports. Observables present in only one trajectory
    are skipped; ``g2`` is compared where both are defined.
    """
    if a.M != b.M:
        raise ValueError(f"site counts differ: {a.M} vs {b.M}")
    lo, hi = max(a.times[0], b.times[0]), min(a.times[-1], b.times[-1])
    if not hi >= lo:
        raise ValueError("time supports do not overlap")
    sel = (a.times >= lo - 1e-12) & (a.times <= hi + 1e-12)
    t = a.times[sel]

    def on_grid(traj, values):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            return np.interp(t, traj.times, values)
        return np.column_stack([np.interp(t, traj.times, values[:, j]) for j in range(values.shape[1])])

    pairs = {"n": (a.photons, b.photons), "Z": (a.Z, b.Z)}
    if a.tls is not None and b.tls is not None:
        pairs["tls"] = (a.tls, b.tls)
    if a.g2 is not None and b.g2 is not None:
        pairs["g2"] = (a.g2, b.g2)
    report: dict[str, Any] = {"tolerance": tol, "samples": int(t.size), "observables": {}}
    ok = True
    for name, (va, vb) in pairs.items():
        x = np.asarray(va, dtype=float)[sel]
        y = on_grid(b, vb)
        diff = np.abs(x - y)
        diff = diff[np.isfinite(diff)]
        if diff.size == 0:
            continue
        mx, rms = float(diff.max()), float(np.sqrt(np.mean(diff**2)))
        report["observables"][name] = {"max": mx, "rms": rms, "pass": mx <= tol}
        ok = ok and mx <= tol
    report["pass"] = ok
    return report
