import csv
import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from affdens import cli
from affdens.cli import ConfigError, main, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "gallery" / "configs"

BAJD = """\
[model]
kind = "bajd"

[params]
kth = 0.04
kappa = 1.0
sigma = 0.2
l = 3.0
nu = 0.01

[state]
y0 = 0.07
dt = 0.0833333333333333
"""


def write(tmp_path, text, name="m.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


# parsing ------------------------------------------------------------------

def test_parse_and_roundtrip_integrated():
    cfg = parse_config(CONFIGS / "integrated_bajd.toml")
    assert cfg.kind == "integrated_bajd"
    assert cfg.params["kappa"] == 0.4648 and cfg.state["horizon"] == 5.0
    assert len(cfg.sha256) == 64
    doc = cfg.to_dict()
    assert doc["params"] == cfg.params and doc["model"]["kind"] == "integrated_bajd"


def test_json_config_equivalent(tmp_path):
    toml = parse_config(write(tmp_path, BAJD))
    js = parse_config(write(tmp_path, json.dumps(toml.to_dict(), indent=1), "m.json"))
    assert js.params == toml.params and js.state == toml.state


def test_negative_sigma_names_field(tmp_path):
    path = write(tmp_path, BAJD.replace("sigma = 0.2", "sigma = -0.2"))
    with pytest.raises(ConfigError) as e:
        parse_config(path)
    assert "params.sigma" in str(e.value)
    assert e.value.line == 7


def test_unknown_and_missing_keys(tmp_path):
    with pytest.raises(ConfigError) as e:
        parse_config(write(tmp_path, BAJD.replace("nu = 0.01", "nu = 0.01\nmu = 2")))
    assert "unknown key params.mu" in str(e.value) and e.value.line == 10
    with pytest.raises(ConfigError) as e:
        parse_config(write(tmp_path, BAJD.replace("kappa = 1.0\n", "")))
    assert "missing required field params.kappa" in str(e.value)
    with pytest.raises(ConfigError) as e:
        parse_config(write(tmp_path, BAJD + "\n[extras]\nx = 1\n"))
    assert "unknown section" in str(e.value) and e.value.line == 15
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, BAJD.replace('"bajd"', '"vasicek"')))
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, BAJD.replace("kappa = 1.0", 'kappa = "one"')))


def test_duplicate_keys(tmp_path):
    with pytest.raises(ConfigError) as e:
        parse_config(write(tmp_path, BAJD.replace("nu = 0.01", "nu = 0.01\nnu = 0.02")))
    assert e.value.line == 10
    text = '{"model": {"kind": "bajd"},\n "params": {"kth": 0.04, "kth": 0.05}, "state": {}}'
    with pytest.raises(ConfigError) as e:
        parse_config(write(tmp_path, text, "d.json"))
    assert "duplicate" in str(e.value)


def test_generic_affine_config(tmp_path):
    doc = {"model": {"kind": "generic_affine"},
           "params": {"m": 1, "n": 0, "alpha": [[[0.02]]], "b": [0.04], "beta": [[-1.0]]},
           "state": {"x0": [0.05], "dt": 0.5}}
    cfg = parse_config(write(tmp_path, json.dumps(doc), "g.json"))
    assert cfg.model().d == 1
    doc["params"]["alpha"] = [[[-0.02]]]
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, json.dumps(doc), "g.json"))


def test_portfolio_loadings_checked(tmp_path):
    text = (CONFIGS / "portfolio.toml").read_text().replace("loading = 0.5", "loading = 0.4", 1)
    with pytest.raises(ConfigError) as e:
        parse_config(write(tmp_path, text))
    assert "sum to 1" in str(e.value)


# commands -----------------------------------------------------------------

def test_config_error_exit_code(tmp_path, capsys):
    path = write(tmp_path, BAJD.replace("sigma = 0.2", "sigma = -0.2"))
    code, io = run(capsys, "moments", "--config", path, "--out", tmp_path / "o")
    assert code == cli.EXIT_CONFIG
    assert f"{path}:7" in io.err


def test_gate_exit_code(tmp_path, capsys):
    path = write(tmp_path, BAJD.replace("kth = 0.04", "kth = 0.01"))
    code, io = run(capsys, "expand", "--config", path, "--out", tmp_path / "o")
    assert code == cli.EXIT_GATE
    assert "2κθ>σ² violated" in io.err
    code, io = run(capsys, "expand", "--config", CONFIGS / "bajd.toml", "--out", tmp_path / "o")
    assert code == cli.EXIT_GATE and "ceil(D/2)" in io.err


def test_expand_emits_coefficients(tmp_path, capsys):
    out = tmp_path / "o"
    code, _ = run(capsys, "expand", "--config", CONFIGS / "integrated_bajd.toml", "--J", 4, "--emit-coeffs",
                  "--out", out)
    assert code == 0
    doc = json.loads((out / "expansion.json").read_text())
    c = {tuple(e["alpha"]): e["c"] for e in doc["coefficients"]}
    assert c[(0,)] == 1.0
    assert abs(c[(1,)]) < 1e-10 and abs(c[(2,)]) < 1e-10
    man = json.loads((out / "manifest.json").read_text())
    assert man["outputs"] == ["expansion.json"] and man["seed"] == 0
    assert man["config"]["params"]["kth"] == 0.000699998096
    assert set(man["versions"]) >= {"affdens", "numpy", "scipy", "python"}


def test_density_table(tmp_path, capsys):
    out = tmp_path / "o"
    code, _ = run(capsys, "density", "--config", CONFIGS / "integrated_bajd.toml", "--J", 4,
                  "--grid", "0.004:0.016:200", "--out", out)
    assert code == 0
    header, data = read_csv(out / "density.csv")
    assert header == ["xi", "g_4", "g_oracle", "log_diff"]
    assert data.shape == (200, 4)
    np.testing.assert_allclose(data[:, 0], np.linspace(0.004, 0.016, 200))
    ok = (data[:, 1] > 0) & (data[:, 2] > 0)
    np.testing.assert_allclose(data[ok, 3], np.log(data[ok, 1] / data[ok, 2]), atol=1e-12)
    assert (out / "density.csv").read_bytes().count(b"\r\n") == 201


def test_price_table(tmp_path, capsys):
    out = tmp_path / "o"
    code, _ = run(capsys, "price", "--config", CONFIGS / "heston.toml", "--strikes", "5.09:5.17:40", "--J", 4,
                  "--out", out)
    assert code == 0
    header, data = read_csv(out / "price.csv")
    assert header == ["logK", "C_4", "C_oracle", "IV_4", "IV_oracle"]
    assert data.shape == (40, 5)
    assert np.max(np.abs(data[:, 1] - data[:, 2])) < 0.05
    assert np.nanmax(np.abs(data[:, 3] - data[:, 4])) < 0.005


def test_price_needs_heston(tmp_path, capsys):
    code, io = run(capsys, "price", "--config", CONFIGS / "bajd.toml", "--strikes", "1:2:3", "--out", tmp_path)
    assert code == cli.EXIT_CONFIG and "heston" in io.err


def test_moments_and_loss(tmp_path, capsys):
    out = tmp_path / "o"
    assert run(capsys, "moments", "--config", CONFIGS / "heston.toml", "--J", 3, "--out", out)[0] == 0
    header, data = read_csv(out / "moments.csv")
    assert header == ["power_v", "power_x", "moment"]
    assert data.shape[0] == 10
    assert run(capsys, "loss", "--config", CONFIGS / "portfolio.toml", "--out", out)[0] == 0
    header, data = read_csv(out / "loss.csv")
    assert data.shape == (3, 2)
    assert data[:, 1].sum() == pytest.approx(1.0, abs=1e-10)


def test_validate_integrated(tmp_path, capsys):
    out = tmp_path / "o"
    code, _ = run(capsys, "validate", "--config", CONFIGS / "integrated_bajd.toml", "--orders", "2,4",
                  "--grid", "0.004:0.016:25", "--out", out)
    assert code == 0
    header, _ = read_csv(out / "validate_density.csv")
    assert header == ["xi", "g_oracle", "log_diff_2", "log_diff_4"]
    header, data = read_csv(out / "validate_mgf.csv")
    assert data.shape == (41, 3)
    man = json.loads((out / "manifest.json").read_text())
    assert man["summary"]["mgf_J4"] < man["summary"]["mgf_J2"]


def test_simulate_and_fit_reproducible(tmp_path, capsys):
    cfg = write(tmp_path, BAJD + "\n[simulation]\nN = 60\n")
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(capsys, "simulate", "--config", cfg, "--seed", 5, "--datasets", 2, "--out", out)[0] == 0
        assert run(capsys, "fit", "--config", cfg, "--seed", 5, "--method", "qml", "--out", out)[0] == 0
    for name in ("series_000.csv", "series_001.csv", "fit.csv", "fit.json", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "series_000.csv").read_bytes() != (a / "series_001.csv").read_bytes()
    run(capsys, "simulate", "--config", cfg, "--seed", 6, "--out", tmp_path / "c")
    assert (tmp_path / "c" / "series.csv").read_bytes() != (a / "series_000.csv").read_bytes()


def test_fit_from_data_file(tmp_path, capsys):
    cfg = write(tmp_path, BAJD + "\n[simulation]\nN = 60\n")
    run(capsys, "simulate", "--config", cfg, "--seed", 1, "--out", tmp_path)
    cfg2 = write(tmp_path, BAJD + '\n[estimation]\ndata = "series.csv"\n', "f.toml")
    assert run(capsys, "fit", "--config", cfg2, "--method", "qml", "--out", tmp_path / "f")[0] == 0
    missing = write(tmp_path, BAJD + '\n[estimation]\ndata = "nope.csv"\n', "g.toml")
    code, io = run(capsys, "fit", "--config", missing, "--out", tmp_path / "g")
    assert code == cli.EXIT_CONFIG and "nope.csv" in io.err


def test_posterior_reproducible(tmp_path, capsys):
    cfg = write(tmp_path, BAJD + "\n[simulation]\nN = 40\n\n[estimation]\nn_iter = 60\nburn = 20\n")
    for out in ("a", "b"):
        assert run(capsys, "posterior", "--config", cfg, "--method", "qml", "--seed", 2,
                   "--out", tmp_path / out)[0] == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    header, data = read_csv(tmp_path / "a" / "trace.csv")
    assert header[:6] == ["draw", "kth", "kappa", "sigma", "l", "nu"] and data.shape[0] == 40


def test_bad_flags(tmp_path, capsys):
    with pytest.raises(SystemExit):
        main(["density", "--config", str(CONFIGS / "bajd.toml"), "--grid", "1:2"])
    with pytest.raises(SystemExit):
        main(["frobnicate", "--config", "x"])
    assert main(["simulate", "--config", str(CONFIGS / "bajd.toml"), "--datasets", "0"]) == cli.EXIT_CONFIG
