"""Command-line entry point.

``frozenjch run <backend> <config.toml>`` runs one simulation or sweep and
writes CSV tables plus a ``manifest.json`` into the output directory;
``frozenjch compare A.csv B.csv --tol X`` checks two trajectories against
each other. Failures print a JSON error record on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from . import io as fio
from .config import ConfigError, RunSpec, SimulationConfig, apply_overrides, build_spec, load_config

BACKENDS = ("semiclassical", "exact", "tebd", "lindblad", "overlaps", "sweep")
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_FAILED = 1


def g_grid(spec: Any, default=None) -> list[float]:
    """Coupling grid from a list or a ``{start, stop, num, spacing}`` table."""
    if spec is None:
        if default is None:
            raise ConfigError("sweep needs a g grid", "g")
        return [float(g) for g in default]
    if isinstance(spec, (int, float)):
        return [float(spec)]
    if isinstance(spec, list):
        return [float(g) for g in spec]
    if isinstance(spec, dict):
        try:
            start, stop, num = float(spec["start"]), float(spec["stop"]), int(spec["num"])
        except KeyError as exc:
            raise ConfigError(f"g grid is missing {exc.args[0]!r}", "g") from exc
        spacing = spec.get("spacing", "linear")
        if spacing == "linear":
            return np.linspace(start, stop, num).tolist()
        if spacing == "geometric":
            return np.geomspace(start, stop, num).tolist()
        raise ConfigError(f"unknown grid spacing {spacing!r}", "g")
    raise ConfigError("g grid must be a number, a list or a table", "g")


def _int_list(value, fallback: int) -> list[int]:
    if value is None:
        return [fallback]
    if isinstance(value, int):
        return [value]
    return [int(v) for v in value]


class Runner:
    """Executes one CLI run and collects the manifest."""

    def __init__(self, spec: RunSpec, out: Path, jobs: int = 1):
        self.spec = spec
        self.cfg: SimulationConfig = spec.config
        self.out = out
        self.jobs = jobs
        self.files: list[str] = []
        self.notes: dict[str, Any] = {}
        self.meta = {"config_hash": self.cfg.config_hash()}

    def _path(self, name: str) -> Path:
        prefix = self.spec.output.get("prefix", "")
        return self.out / f"{prefix}{name}"

    def _trajectory(self, name: str, traj) -> None:
        path = fio.write_trajectory(self._path(name), traj,
                                    {"kappa": self.cfg.kappa, "gamma": self.cfg.gamma})
        self.files.append(path.name)

    def _table(self, name: str, columns: list[str], rows, extra=None) -> None:
        path = fio.write_table(self._path(name), columns, rows, self.meta | (extra or {}))
        self.files.append(path.name)

    def semiclassical(self):
        from .semiclassical import conservation_ok, sc_evolve

        traj = sc_evolve(self.cfg)
        self.notes["Zbar"] = traj.zbar()
        self.notes["conserved"] = conservation_ok(traj)
        self._trajectory("trajectory.csv", traj)
        return "semiclassical"

    def exact(self):
        from .exact import evolve_exact

        traj = evolve_exact(self.cfg)
        self.notes.update(Zbar=traj.zbar(), method=traj.meta["method"], dim=traj.meta["dim"],
                          excitation_drift=float(np.ptp(traj.monitors["N_total"])))
        self._trajectory("trajectory.csv", traj)
        return "exact"

    def tebd(self):
        from .tebd import evolve_tebd

        traj = evolve_tebd(self.cfg)
        n = traj.monitors["N_total"]
        self.notes.update(Zbar=traj.zbar(), discarded_total=traj.meta["discarded_total"],
                          alarms=traj.meta["alarms"],
                          excitation_drift=float(np.abs(n - n[0]).max() / n[0]))
        self._trajectory("trajectory.csv", traj)
        return "tebd"

    def lindblad(self):
        from .lindblad import g2_average, evolve_master

        traj = evolve_master(self.cfg)
        g2bar, undefined = g2_average(traj, 1)
        self.notes.update(Zbar=traj.zbar(), g2bar=g2bar, undefined_fraction=undefined,
                          max_trace_error=float(np.abs(traj.monitors["trace"] - 1).max()),
                          min_eig=float(traj.monitors["min_eig"].min()))
        self._trajectory("trajectory.csv", traj)
        return "lindblad"

    def overlaps(self):
        from .exact import default_overlap_grid, overlap_sweep

        sw = self.spec.sweep
        fallback = default_overlap_grid() if sw.get("default_grid") else [self.cfg.g]
        grid = g_grid(sw.get("g"), default=fallback)
        results = overlap_sweep(self.cfg, grid)
        for k, ma in enumerate(results):
            rows = [(r["mode"], r["energy"], r["overlap"], r["C"], r["label"]) for r in ma.rows()]
            self._table(f"modes_g{k:03d}.csv", ["mode", "energy_perJ", "overlap", "C", "label"],
                        rows, {"g_perJ": ma.g, "degenerate_groups": len(ma.degenerate_groups)})
        self.notes["g_grid"] = grid
        self.notes["weight_N_at_largest_g"] = results[-1].weight("N")
        return "exact"

    def sweep(self):
        sw = self.spec.sweep
        kind = sw.get("backend", "semiclassical")
        cfg = self.cfg
        if kind == "semiclassical":
            from .semiclassical import critical_couplings, sc_sweep

            rows = sc_sweep(cfg, g_grid(sw.get("g")), _int_list(sw.get("M"), cfg.M), self.jobs)
            self._table("sweep.csv", ["M", "g_perJ", "Zbar", "converged"],
                        [(r["M"], r["g"], r["Zbar"], r["converged"]) for r in rows])
            self.notes["critical_g"] = {str(k): v for k, v in critical_couplings(rows).items()}
            self.notes["failed_points"] = sum(not r["converged"] for r in rows)
            return "semiclassical"
        if kind == "tebd":
            from .tebd import surface_onsets, surface_widths, zbar_surface

            rows = zbar_surface(cfg, g_grid(sw.get("g")), _int_list(sw.get("M"), cfg.M),
                                _int_list(sw.get("N0"), cfg.N0))
            self._table("surface.csv", ["M", "N0", "g_perJ", "backend", "Zbar", "ok"],
                        [(r["M"], r["N0"], r["g"], r["backend"], r["Zbar"], r["ok"]) for r in rows])
            self.notes["widths_by_M"] = {str(k): v for k, v in surface_widths(rows, "M").items()}
            self.notes["onsets_by_N0"] = {str(k): v for k, v in surface_onsets(rows, "N0").items()}
            self.notes["failed_points"] = sum(not r["ok"] for r in rows)
            return "tebd"
        if kind == "lindblad":
            from .lindblad import transition_chart

            loss = sw.get("loss", [False, True])
            rows = transition_chart(cfg, g_grid(sw.get("g")), _int_list(sw.get("N0"), cfg.N0),
                                    tuple(bool(x) for x in (loss if isinstance(loss, list) else [loss])),
                                    self.jobs)
            self._table("chart.csv", ["N0", "g_perJ", "loss", "Zbar", "g2bar", "undefined_fraction", "ok"],
                        [(r.N0, r.g, r.loss, r.Zbar, r.g2bar, r.undefined_fraction, r.ok) for r in rows],
                        {"kappa_perJ": cfg.kappa, "gamma_perJ": cfg.gamma})
            self.notes["failed_points"] = sum(not r.ok for r in rows)
            return "lindblad"
        if kind == "overlaps":
            return self.overlaps()
        raise ConfigError(f"unknown sweep backend {kind!r}", "sweep.backend")


def run(backend: str, spec: RunSpec, out: Path, jobs: int = 1, seedless: bool = False) -> dict:
    """Run ``backend`` and write outputs plus a manifest; returns the manifest."""
    if backend not in BACKENDS:
        raise ConfigError(f"unknown backend {backend!r}")
    out.mkdir(parents=True, exist_ok=True)
    runner = Runner(spec, out, jobs)
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        backend_id = getattr(runner, backend)()
    wall = time.perf_counter() - t0
    manifest = {
        "backend": backend,
        "backend_id": backend_id,
        "code_version": __version__,
        "config": spec.config.to_dict(),
        "config_hash": spec.config.config_hash(),
        "sweep": spec.sweep,
        "rates": {"kappa_photon_loss": spec.config.kappa, "gamma_tls_decay": spec.config.gamma},
        "wall_seconds": wall,
        "outputs": runner.files,
        "summary": runner.notes,
        "warnings": sorted({f"{w.category.__name__}: {w.message}" for w in caught}),
        "seedless": True,
    }
    if seedless:
        # every backend is deterministic; record the assertion
        manifest["seedless_asserted"] = True
    fio.write_manifest(out / "manifest.json", manifest)
    return manifest


def _error(kind: str, message: str, code: int, **extra) -> int:
    record = {"error": kind, "message": message} | extra
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def _load(args) -> RunSpec:
    path = args.config_opt or args.config
    if path is None:
        doc = apply_overrides({}, args.set)
        return build_spec(doc)
    return load_config(path, args.set)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frozenjch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"frozenjch {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a backend or a sweep")
    r.add_argument("backend", choices=BACKENDS)
    r.add_argument("config", nargs="?", help="TOML config file")
    r.add_argument("--config", dest="config_opt", help="TOML config file")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value (repeatable)")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    r.add_argument("--seedless", action="store_true",
                   help="assert that no stochastic component is used")
    c = sub.add_parser("compare", help="compare two trajectory CSV files")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--tol", type=float, default=1e-6)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "compare":
        try:
            report = fio.compare(fio.read_trajectory(args.a), fio.read_trajectory(args.b), args.tol)
        except (OSError, ValueError, KeyError) as exc:
            return _error(type(exc).__name__, str(exc), EXIT_FAILED)
        print(json.dumps(report, indent=2, sort_keys=True))
        return 0 if report["pass"] else EXIT_FAILED
    if args.jobs < 1:
        return _error("ConfigError", "--jobs must be >= 1", EXIT_CONFIG, field="jobs")
    try:
        spec = _load(args)
    except ConfigError as exc:
        return _error("ConfigError", str(exc), EXIT_CONFIG, field=exc.field)
    except OSError as exc:
        return _error("ConfigError", str(exc), EXIT_CONFIG, field=None)
    out = Path(args.out or spec.output.get("dir", f"results/{args.backend}"))
    try:
        manifest = run(args.backend, spec, out, args.jobs, args.seedless)
    except ConfigError as exc:
        return _error("ConfigError", str(exc), EXIT_CONFIG, field=exc.field)
    except MemoryError as exc:
        return _error(type(exc).__name__, str(exc), EXIT_CAPACITY)
    except (RuntimeError, ValueError) as exc:
        return _error(type(exc).__name__, str(exc), EXIT_FAILED)
    print(json.dumps({"manifest": str(out / "manifest.json"), "outputs": manifest["outputs"],
                      "wall_seconds": round(manifest["wall_seconds"], 3)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
