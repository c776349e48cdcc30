"""Run configuration: physical parameters plus integrator and truncation settings."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FRAMES = ("rotating", "lab")
# default photon cutoff cap used by the array simulations
N_MAX_CAP = 7


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


def default_n_max(M: int, N0: int, cap: int = N_MAX_CAP) -> int:
    """Photon cutoff ``min(N0*M/2, cap)``, never below ``N0``."""
    return max(N0, min(N0 * M // 2, cap))


@dataclass(frozen=True)
class SimulationConfig:
    """All parameters of one run. Energies and rates in units of J, times in 1/J.

    ``n_max=None`` resolves to :func:`default_n_max`. ``frame="rotating"``
    drops the bare frequencies (valid on resonance); ``"lab"`` keeps them.
    """

    M: int
    N0: int
    g: float = 0.0
    J: float = 1.0
    omega_r: float = 0.0
    omega_a: float = 0.0
    n_max: int | None = None
    t_max: float = 20.0
    sample_dt: float = 0.01
    frame: str = "rotating"
    kappa: float = 0.0
    gamma: float = 0.0
    # averaging window for Zbar and g2bar
    window: tuple[float, float] = (0.0, 20.0)
    # semiclassical integrator
    rtol: float = 1e-9
    atol: float = 1e-11
    # exact propagation
    dense_threshold: int = 4000
    max_dim: int = 200_000
    krylov_dim: int = 30
    krylov_tol: float = 1e-12
    # tebd
    chi: int = 100
    dt: float = 0.01
    trotter_order: int = 2
    svd_cutoff: float = 1e-12
    discarded_alarm: float = 1e-6
    drift_limit: float = 0.01
    # lindblad
    lindblad_rtol: float = 1e-10
    lindblad_atol: float = 1e-12
    # P/N mode classification threshold on C
    current_threshold: float = 1e-3

    def __post_init__(self):
        if not isinstance(self.M, int) or self.M < 2 or self.M % 2:
            raise ConfigError(f"M must be an even integer >= 2, got {self.M!r}", "M")
        if not isinstance(self.N0, int) or self.N0 < 1:
            raise ConfigError(f"N0 must be an integer >= 1, got {self.N0!r}", "N0")
        if self.n_max is None:
            object.__setattr__(self, "n_max", default_n_max(self.M, self.N0))
        if not isinstance(self.n_max, int) or self.n_max < max(1, self.N0):
            raise ConfigError(f"n_max must be >= max(1, N0), got {self.n_max!r}", "n_max")
        if self.g < 0:
            raise ConfigError("g must be >= 0", "g")
        if not self.J > 0:
            raise ConfigError("J must be > 0", "J")
        if not self.t_max > 0:
            raise ConfigError("t_max must be > 0", "t_max")
        if not 0 < self.sample_dt <= self.t_max:
            raise ConfigError("sample_dt must lie in (0, t_max]", "sample_dt")
        if self.frame not in FRAMES:
            raise ConfigError(f"frame must be one of {FRAMES}", "frame")
        if self.kappa < 0 or self.gamma < 0:
            raise ConfigError("loss rates must be >= 0", "kappa" if self.kappa < 0 else "gamma")
        if self.chi < 1:
            raise ConfigError("chi must be >= 1", "chi")
        if not 0 < self.dt <= 0.05 / self.J:
            raise ConfigError("dt must lie in (0, 0.05/J]", "dt")
        if self.trotter_order not in (2, 4):
            raise ConfigError("trotter_order must be 2 or 4", "trotter_order")
        w0, w1 = self.window
        object.__setattr__(self, "window", (float(w0), float(w1)))
        if not w1 > w0:
            raise ConfigError("window must satisfy t0 < t1", "window")

    @property
    def N_total(self) -> int:
        """Excitation number of the half-filled initial state."""
        return self.N0 * self.M // 2

    @property
    def frequencies(self) -> tuple[float, float]:
        """(omega_r, omega_a) actually entering the dynamics."""
        if self.frame == "rotating":
            return 0.0, 0.0
        return self.omega_r, self.omega_a

    @property
    def times(self):
        import numpy as np

        n = int(math.floor(self.t_max / self.sample_dt + 1e-9))
        return np.arange(n + 1) * self.sample_dt

    def replace(self, **changes) -> "SimulationConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["window"] = list(self.window)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(SimulationConfig)}
REQUIRED_FIELDS = ("M", "N0")
SECTIONS = ("physics", "numerics", "output", "sweep")


@dataclass
class RunSpec:
    """A parsed config file: the base config plus sweep grids and output settings."""

    config: SimulationConfig
    sweep: dict[str, Any] = field(default_factory=dict)
    output: dict[str, Any] = field(default_factory=dict)


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _coerce(name: str, value: Any) -> Any:
    f = CONFIG_FIELDS[name]
    typ = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if "int" in typ and "float" not in typ and isinstance(value, float) and value.is_integer():
        return int(value)
    if typ == "float" and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if name == "window":
        return tuple(value)
    return value


def apply_overrides(doc: dict[str, Any], overrides: list[str] | None) -> dict[str, Any]:
    """Apply ``key=value`` or ``section.key=value`` overrides to a config document."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        key = key.strip()
        value = _parse_value(text.strip())
        if "." in key:
            section, name = key.split(".", 1)
        elif key in CONFIG_FIELDS:
            section = "physics" if key in _PHYSICS_KEYS else "numerics"
            name = key
        else:
            raise ConfigError(f"unknown override key {key!r}", key)
        doc.setdefault(section, {})[name] = value
    return doc


_PHYSICS_KEYS = {"M", "N0", "g", "J", "omega_r", "omega_a", "frame", "kappa", "gamma"}


def build_spec(doc: dict[str, Any]) -> RunSpec:
    """Validate a config document (as parsed from TOML) into a :class:`RunSpec`."""
    for section in doc:
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", section)
    params: dict[str, Any] = {}
    for section in ("physics", "numerics"):
        for name, value in doc.get(section, {}).items():
            if name not in CONFIG_FIELDS:
                raise ConfigError(f"unknown field {section}.{name}", name)
            params[name] = _coerce(name, value)
    for name in REQUIRED_FIELDS:
        if name not in params:
            raise ConfigError(f"missing required field {name!r}", name)
    try:
        cfg = SimulationConfig(**params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return RunSpec(cfg, dict(doc.get("sweep", {})), dict(doc.get("output", {})))


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunSpec:
    """Read a TOML config file, apply overrides and validate."""
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return build_spec(apply_overrides(doc, overrides))
