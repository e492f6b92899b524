import json

import numpy as np
import pytest

from conftest import A0
from qwscatter import __version__
from qwscatter.cli import DEFAULTS, RunConfig, main, read_csv, validate_report
from qwscatter.coin import load_coin_profile, single_defect
from qwscatter.errors import ConfigurationError


def write_profile(tmp_path, doc, name="p.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


@pytest.fixture
def defect_profile(tmp_path):
    return write_profile(tmp_path, {"alpha0": {"re": A0}, "preset": "single-defect", "params": {"strength": 0.2}})


@pytest.fixture
def free_profile(tmp_path):
    return write_profile(tmp_path, {"alpha0": {"re": A0}, "preset": "free"}, "free.json")


def run(tmp_path, *argv):
    return main(["--cache-dir", str(tmp_path / "cache"), *argv])


def header_line(path):
    with open(path) as fh:
        return fh.readline()


def test_simulate(tmp_path, defect_profile):
    out = tmp_path / "sim.csv"
    assert run(tmp_path, "simulate", "--profile", defect_profile, "--t", "20", "--out", str(out)) == 0
    rows = read_csv(out)
    assert len(rows) == 20 * 2 + 3
    vals = np.array([[float(r[k]) for k in ("up_re", "up_im", "down_re", "down_im")] for r in rows])
    assert abs(np.sum(vals**2) - 1) < 1e-12
    first = header_line(out)
    assert first.startswith(f"# qwscatter {__version__} config=")


def test_simulate_from_file(tmp_path, defect_profile):
    from qwscatter.lattice import SpinorField

    init = tmp_path / "u0.json"
    init.write_text(SpinorField(-1, np.array([[0.6, 0], [0, 0.8j], [0, 0]])).to_json())
    out = tmp_path / "sim.csv"
    argv = ["simulate", "--profile", defect_profile, "--t", "5", "--initial", "file", "--initial-file", str(init)]
    assert run(tmp_path, *argv, "--out", str(out)) == 0
    assert run(tmp_path, "simulate", "--profile", defect_profile, "--initial", "file", "--out", str(out)) == 2


def test_dispersion(tmp_path):
    out = tmp_path / "d.csv"
    assert run(tmp_path, "dispersion", "--grid", "64", "--out", str(out)) == 0
    rows = read_csv(out)
    assert len(rows) == 64
    assert abs(float(rows[0]["xi"]) - np.pi / 64) < 1e-15
    assert run(tmp_path, "dispersion", "--grid", "60", "--out", str(out)) == 2
    assert run(tmp_path, "dispersion", "--rho0", "1.5", "--out", str(out)) == 2


def test_jost_and_cache(tmp_path, defect_profile):
    out = tmp_path / "j.csv"
    argv = ["jost", "--profile", defect_profile, "--grid", "16", "--out", str(out)]
    assert run(tmp_path, *argv) == 0
    cached = list((tmp_path / "cache").glob("*.npz"))
    assert len(cached) == 1
    first = out.read_bytes()
    mtime = cached[0].stat().st_mtime_ns
    assert run(tmp_path, *argv) == 0
    assert out.read_bytes() == first
    assert cached[0].stat().st_mtime_ns == mtime  # cache hit, no rewrite
    rows = read_csv(out)
    assert float(rows[0]["residual"]) < 1e-12
    # different grid is a miss
    assert run(tmp_path, "jost", "--profile", defect_profile, "--grid", "32", "--out", str(out)) == 0
    assert len(list((tmp_path / "cache").glob("*.npz"))) == 2


def test_stale_cache_recomputed(tmp_path, defect_profile):
    out = tmp_path / "j.csv"
    argv = ["jost", "--profile", defect_profile, "--grid", "16", "--out", str(out)]
    assert run(tmp_path, *argv) == 0
    good = out.read_bytes()
    (f,) = (tmp_path / "cache").glob("*.npz")
    data = dict(np.load(f))
    data["key"] = np.array("stale")
    np.savez(f, **data)
    assert run(tmp_path, *argv) == 0
    assert out.read_bytes() == good


def test_jost_outside_strip(tmp_path, defect_profile):
    out = tmp_path / "j.csv"
    assert run(tmp_path, "jost", "--profile", defect_profile, "--grid", "16", "--delta", "5", "--out", str(out)) == 3


def test_scattering(tmp_path, defect_profile):
    stem = tmp_path / "s"
    assert run(tmp_path, "scattering", "--profile", defect_profile, "--grid", "64", "--out", str(stem)) == 0
    rep = json.loads((tmp_path / "s.json").read_text())
    assert rep["generic"] is True
    assert rep["unitarity_defect"] < 1e-8
    assert len(rep["resonance_flags"]) == 4
    assert rep["bound_states"] == []
    assert rep["meta"]["version"] == __version__
    assert len(read_csv(tmp_path / "s.csv")) == 128


def test_dispersive_and_fit(tmp_path, free_profile):
    out = tmp_path / "decay.csv"
    argv = ["dispersive", "--profile", free_profile, "--tmax", "2000", "--projection", "upper", "--out", str(out)]
    assert run(tmp_path, *argv) == 0
    rows = read_csv(out)
    assert [int(r["t"]) for r in rows][0] == 100
    fit_out = tmp_path / "fit.json"
    assert run(tmp_path, "fit", "--in", str(out), "--out", str(fit_out)) == 0
    fit = json.loads(fit_out.read_text())
    assert -0.5 < fit["exponent"] < -0.2
    assert fit["n_points"] >= 8


def test_fit_errors(tmp_path, capsys):
    bad = tmp_path / "short.csv"
    bad.write_text("t,supnorm\n1,1\n2,0.5\n")
    assert run(tmp_path, "fit", "--in", str(bad)) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "FitError"
    empty = tmp_path / "empty.csv"
    empty.write_text("t,supnorm\n")
    assert run(tmp_path, "fit", "--in", str(empty)) == 2
    garbled = tmp_path / "g.csv"
    garbled.write_text("t,supnorm\n" + "x,1\n" * 10)
    assert run(tmp_path, "fit", "--in", str(garbled)) == 2
    assert run(tmp_path, "fit", "--in", str(bad), "--column", "nope") == 2


def test_fit_missing_file(tmp_path, capsys):
    assert run(tmp_path, "fit", "--in", str(tmp_path / "absent.csv")) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "FitError"


def test_output_never_overwrites_profile(tmp_path, defect_profile):
    before = open(defect_profile).read()
    stem = defect_profile[: -len(".json")]
    assert run(tmp_path, "scattering", "--profile", defect_profile, "--grid", "16", "--out", stem) == 2
    assert run(tmp_path, "validate", "--profile", defect_profile, "--out", defect_profile) == 2
    assert open(defect_profile).read() == before


def test_fit_to_stdout(tmp_path, capsys):
    data = tmp_path / "d.csv"
    ts = np.geomspace(100, 3000, 10)
    data.write_text("t,supnorm\n" + "".join(f"{float(t)!r},{float(t) ** (-1 / 3)!r}\n" for t in ts))
    assert run(tmp_path, "fit", "--in", str(data)) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["exponent"] + 1 / 3) < 1e-12


def test_byte_identical_runs(tmp_path, defect_profile):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert run(tmp_path, "--seed", "3", "simulate", "--profile", defect_profile, "--t", "30", "--out", str(p)) == 0
    assert a.read_bytes() == b.read_bytes()
    assert "seed=3" in header_line(a)


def test_config_hash_changes(tmp_path, defect_profile):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(tmp_path, "simulate", "--profile", defect_profile, "--t", "10", "--out", str(a))
    run(tmp_path, "simulate", "--profile", defect_profile, "--t", "11", "--out", str(b))
    assert header_line(a) != header_line(b)
    cfg = RunConfig("simulate", None, {"t": 10})
    coin = single_defect(A0, 0.2)
    assert cfg.config_hash(coin) == RunConfig("simulate", None, {"t": 10}).config_hash(coin)
    assert cfg.config_hash(coin) != cfg.config_hash(single_defect(A0, 0.1))
    with pytest.raises(ConfigurationError):
        RunConfig("x", None, {"edge_tol": 0.0})


def test_invalid_profile_exit_code(tmp_path, capsys):
    bad = write_profile(tmp_path, {"alpha0": {"re": A0}, "entries": [{"x": 4, "alpha": {"re": 1.2}}]})
    assert run(tmp_path, "validate", "--profile", bad) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["site"] == 4 and "alpha" in err["assumption"]


def test_validate_free_and_defect(tmp_path, free_profile, defect_profile, capsys):
    assert run(tmp_path, "validate", "--profile", free_profile) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["generic"] is False and rep["required_k"] == 2
    assert rep["status"] == "generic-case ready, exceptional-case ready"
    out = tmp_path / "v.json"
    assert run(tmp_path, "validate", "--profile", defect_profile, "--out", str(out)) == 0
    rep = json.loads(out.read_text())
    assert rep["generic"] is True and rep["hypotheses"]["dispersive_estimate"] is True


def test_validate_power_tail():
    coin = load_coin_profile({"alpha0": {"re": A0}, "preset": "power-tail", "params": {"radius": 60}})
    rep = validate_report(coin)
    assert rep["status"] == "generic-case ready, exceptional-case not"
    assert rep["norm_finite"] == {"sigma0": True, "sigma1": True, "sigma2": False}
    assert rep["hypotheses"]["finite_discrete_spectrum_generic"] is True
    assert rep["hypotheses"]["finite_discrete_spectrum_exceptional"] is False


def test_threads_flag(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["--threads", "1", "--cache-dir", "", "dispersion", "--grid", "16", "--out", str(out)]) == 0


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert __version__ in capsys.readouterr().out


def test_defaults_documented():
    assert DEFAULTS["grid"] == 256 and DEFAULTS["tmax"] == 3000
