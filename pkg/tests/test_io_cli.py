import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from frozenjch import io as fio
from frozenjch.cli import g_grid, main
from frozenjch.config import ConfigError, SimulationConfig, load_config
from frozenjch.exact import evolve_exact
from frozenjch.semiclassical import sc_evolve

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


SMALL = """
[physics]
M = 2
N0 = 1
g = 0.5

[numerics]
t_max = 2.0
sample_dt = 0.1
"""


def test_trajectory_round_trip(tmp_path):
    tr = evolve_exact(SimulationConfig(M=2, N0=2, g=1.0, t_max=1.0, sample_dt=0.1))
    p = fio.write_trajectory(tmp_path / "a.csv", tr)
    back = fio.read_trajectory(p)
    np.testing.assert_array_equal(back.photons, tr.photons)
    np.testing.assert_array_equal(back.times, tr.times)
    assert back.meta["config_hash"] == tr.meta["config_hash"]
    raw = p.read_bytes()
    assert raw.startswith(b"# ") and b"\r\n" in raw


def test_semiclassical_columns(tmp_path):
    tr = sc_evolve(SimulationConfig(M=2, N0=1, g=1.0, t_max=1.0, sample_dt=0.1))
    p = fio.write_trajectory(tmp_path / "s.csv", tr)
    _, cols, _ = fio.read_table(p)
    assert cols == ["t_perJ", "site", "n", "re_m", "im_m", "z", "Z", "N_sc"]
    back = fio.read_trajectory(p)
    np.testing.assert_array_equal(back.site_data["z"], tr.site_data["z"])


def test_compare_self_and_shifted(tmp_path):
    tr = evolve_exact(SimulationConfig(M=2, N0=1, g=0.0, t_max=1.0, sample_dt=0.1))
    rep = fio.compare(tr, tr, 0.0)
    assert rep["pass"] and rep["observables"]["n"]["max"] == 0.0
    other = evolve_exact(SimulationConfig(M=2, N0=1, g=3.0, t_max=1.0, sample_dt=0.1))
    assert not fio.compare(tr, other, 1e-3)["pass"]
    with pytest.raises(ValueError):
        fio.compare(tr, evolve_exact(SimulationConfig(M=4, N0=1, t_max=1.0)), 1e-3)


def test_g_grid_forms():
    assert g_grid([1, 2]) == [1.0, 2.0]
    assert g_grid(3) == [3.0]
    assert g_grid({"start": 0, "stop": 1, "num": 3}) == [0.0, 0.5, 1.0]
    np.testing.assert_allclose(g_grid({"start": 1, "stop": 100, "num": 3, "spacing": "geometric"}),
                               [1, 10, 100])
    with pytest.raises(ConfigError):
        g_grid({"start": 0, "stop": 1})
    with pytest.raises(ConfigError):
        g_grid(None)


def test_shipped_configs_parse():
    names = sorted(p.name for p in CONFIGS.glob("*.toml"))
    assert {"fig2.toml", "fig3.toml", "fig4.toml", "fig5.toml"} <= set(names)
    for p in CONFIGS.glob("*.toml"):
        load_config(p)


def test_run_is_byte_deterministic(tmp_path):
    cfg = _write(tmp_path, SMALL)
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert main(["run", "exact", str(cfg), "--out", str(out)]) == 0
        outs.append((out / "trajectory.csv").read_bytes())
    assert outs[0] == outs[1]
    man = json.loads((tmp_path / "o0" / "manifest.json").read_text())
    assert man["backend"] == "exact"
    assert man["config"]["M"] == 2
    assert man["config_hash"] == SimulationConfig(M=2, N0=1, g=0.5, t_max=2.0,
                                                  sample_dt=0.1).config_hash()
    assert man["outputs"] == ["trajectory.csv"]
    assert set(man["rates"]) == {"kappa_photon_loss", "gamma_tls_decay"}
    header = (tmp_path / "o0" / "trajectory.csv").read_text().splitlines()[0]
    assert man["config_hash"] in header


def test_overrides_and_compare_cli(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert main(["run", "semiclassical", str(cfg), "--out", str(tmp_path / "a"),
                 "--set", "g=0.0"]) == 0
    assert main(["run", "exact", str(cfg), "--out", str(tmp_path / "b"), "--set", "g=0.0"]) == 0
    a = tmp_path / "a" / "trajectory.csv"
    b = tmp_path / "b" / "trajectory.csv"
    capsys.readouterr()
    assert main(["compare", str(b), str(b), "--tol", "0"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["pass"] and report["observables"]["n"]["max"] == 0.0
    # N0 = 1 at g = 0: mean-field and quantum photon densities coincide
    assert main(["compare", str(a), str(b), "--tol", "1e-6"]) == 0
    assert main(["run", "exact", str(cfg), "--out", str(tmp_path / "c"), "--set", "g=3.0"]) == 0
    assert main(["compare", str(a), str(tmp_path / "c" / "trajectory.csv"), "--tol", "1e-6"]) == 1


def test_missing_field_reports_name(tmp_path, capsys):
    cfg = _write(tmp_path, "[physics]\nN0 = 2\n")
    code = main(["run", "exact", str(cfg), "--out", str(tmp_path / "x")])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["field"] == "M"
    assert not (tmp_path / "x" / "manifest.json").exists()


def test_bad_values_are_config_errors(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert main(["run", "exact", str(cfg), "--set", "M=3"]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "M"
    assert main(["run", "exact", str(cfg), "--set", "bogus=1"]) == 2
    assert main(["run", "exact", str(cfg), "--jobs", "0"]) == 2
    assert main(["run", "exact", str(tmp_path / "nope.toml")]) == 2


def test_capacity_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    code = main(["run", "exact", str(cfg), "--out", str(tmp_path / "c"),
                 "--set", "M=4", "--set", "N0=4", "--set", "n_max=4", "--set", "max_dim=1000"])
    assert code == 3
    assert "1056" in json.loads(capsys.readouterr().err)["message"]


def test_overlaps_and_sweep(tmp_path):
    text = SMALL + "\n[sweep]\nbackend = \"semiclassical\"\nM = [2, 4]\ng = [0.5, 8.0]\n"
    cfg = _write(tmp_path, text)
    assert main(["run", "sweep", str(cfg), "--out", str(tmp_path / "s")]) == 0
    _, cols, rows = fio.read_table(tmp_path / "s" / "sweep.csv")
    assert cols == ["M", "g_perJ", "Zbar", "converged"] and len(rows) == 4
    text = SMALL + "\n[sweep]\ng = [1.0, 50.0]\n"
    cfg = _write(tmp_path, text, "ov.toml")
    assert main(["run", "overlaps", str(cfg), "--out", str(tmp_path / "ov")]) == 0
    man = json.loads((tmp_path / "ov" / "manifest.json").read_text())
    assert man["outputs"] == ["modes_g000.csv", "modes_g001.csv"]


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, SMALL)
    res = subprocess.run([sys.executable, "-m", "frozenjch.cli", "run", "exact", str(cfg),
                          "--out", str(tmp_path / "e"), "--seedless"],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    man = json.loads((tmp_path / "e" / "manifest.json").read_text())
    assert man["seedless_asserted"] is True
