import json
import math

import numpy as np
import pytest

from zlpflow.cli import main
from zlpflow.io import read_samples, write_samples
from zlpflow.sphere import uniform_sample


def _spec(tmp_path, preset, dim=3, name="spec.json"):
    path = tmp_path / name
    if preset is None:
        doc = {"dimension": dim, "order": "applies_first", "layers": []}
    else:
        doc = {"dimension": dim, "preset": preset}
    path.write_text(json.dumps(doc))
    return str(path)


def test_sample_is_deterministic(tmp_path):
    spec = _spec(tmp_path, {"family": "kent", "kappa": 50.0, "u": 1.3})
    a, b, c = (str(tmp_path / f"{k}.csv") for k in "abc")
    assert main(["sample", "--spec", spec, "--n", "200", "--seed", "7", "--out", a]) == 0
    assert main(["sample", "--spec", spec, "--n", "200", "--seed", "7", "--out", b]) == 0
    assert main(["sample", "--spec", spec, "--n", "200", "--seed", "8", "--out", c]) == 0
    assert open(a, "rb").read() == open(b, "rb").read() != open(c, "rb").read()
    pts, logp = read_samples(a, dim=3)
    assert pts.shape == (200, 3) and logp.shape == (200,)


def test_sample_then_logprob_agree(tmp_path):
    spec = _spec(tmp_path, {"family": "fb6", "kappa": 20.0, "u": 1.2, "scales": [1.5, 0.8, 1.0]})
    s, o = str(tmp_path / "s.csv"), str(tmp_path / "o.csv")
    assert main(["sample", "--spec", spec, "--n", "300", "--out", s]) == 0
    assert main(["logprob", "--spec", spec, "--points", s, "--out", o]) == 0
    _, lp_s = read_samples(s)
    _, lp_o = read_samples(o)
    np.testing.assert_allclose(lp_o, lp_s, atol=1e-9)


def test_uniform_logprob_is_constant(tmp_path, rng):
    spec = _spec(tmp_path, None)
    pts = str(tmp_path / "p.csv")
    write_samples(pts, uniform_sample(rng, 3, 50))
    out = str(tmp_path / "o.csv")
    assert main(["logprob", "--spec", spec, "--points", pts, "--out", out]) == 0
    _, lp = read_samples(out)
    np.testing.assert_allclose(lp, -math.log(4 * math.pi), atol=1e-12)


def test_bingham_samples_are_symmetric(tmp_path):
    spec = _spec(tmp_path, {"family": "bingham", "scales": [2.0, 0.7, 1.0]})
    out = str(tmp_path / "s.csv")
    assert main(["sample", "--spec", spec, "--n", "10000", "--seed", "3", "--out", out]) == 0
    pts, _ = read_samples(out)
    assert np.linalg.norm(pts.mean(axis=0)) < 0.05


def test_bingham_logprob_matches_angular_gaussian(tmp_path, rng):
    a = np.diag([2.0, 0.7, 1.0])
    spec = _spec(tmp_path, {"family": "bingham", "matrix": a.tolist()})
    x = uniform_sample(rng, 3, 200)
    pts, out = str(tmp_path / "p.csv"), str(tmp_path / "o.csv")
    write_samples(pts, x)
    assert main(["logprob", "--spec", spec, "--points", pts, "--out", out]) == 0
    _, lp = read_samples(out)
    m = a @ a.T
    quad = np.einsum("ni,ij,nj->n", x, np.linalg.inv(m), x)
    ref = -math.log(4 * math.pi) - 0.5 * math.log(np.linalg.det(m)) - 1.5 * np.log(quad)
    np.testing.assert_allclose(lp, ref, atol=1e-12)


def test_off_sphere_points_exit_2(tmp_path, capsys):
    spec = _spec(tmp_path, None)
    pts = tmp_path / "p.csv"
    pts.write_text("x1,x2,x3\n1,0,0\n0.5,0.5,0.5\n")
    assert main(["logprob", "--spec", spec, "--points", str(pts), "--out", str(tmp_path / "o.csv")]) == 2
    assert "unit sphere" in capsys.readouterr().err


@pytest.mark.parametrize(
    "content",
    ['{"dimension": 3}', "not json", '{"dimension": 3, "preset": {"family": "kent", "kappa": 10, "u": 3.0}}'],
)
def test_bad_spec_exit_2(tmp_path, content, capsys):
    spec = tmp_path / "bad.json"
    spec.write_text(content)
    assert main(["sample", "--spec", str(spec), "--n", "5", "--out", str(tmp_path / "s.csv")]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_missing_file_exit_2(tmp_path):
    assert main(["sample", "--spec", str(tmp_path / "nope.json"), "--n", "5", "--out", str(tmp_path / "s.csv")]) == 2


def test_grid_equirect_and_raster(tmp_path):
    spec = _spec(tmp_path, {"family": "vmf", "kappa": 10.0})
    out, img = str(tmp_path / "g.csv"), str(tmp_path / "g.ppm")
    assert main(["grid", "--spec", spec, "--res", "180", "--out", out, "--png", img, "--threads", "2"]) == 0
    vals = np.loadtxt(out, delimiter=",", comments="#")
    assert vals.shape == (90, 180)
    theta = (np.arange(90) + 0.5) * np.pi / 90
    total = np.sum(np.exp(vals) * np.sin(theta)[:, None]) * (np.pi / 90) * (2 * np.pi / 180)
    assert total == pytest.approx(1.0, abs=1e-3)
    assert open(img, "rb").read().startswith(b"P6\n180 90\n255\n")


def test_grid_ortho_zoom(tmp_path, monkeypatch):
    monkeypatch.setenv("ZLP_THREADS", "2")
    spec = _spec(tmp_path, {"family": "kent", "kappa": 1e4, "u": 1.5})
    out = str(tmp_path / "g.csv")
    args = ["grid", "--spec", spec, "--projection", "ortho", "--center", "0,90", "--fov", "2", "--res", "51", "--out", out]
    assert main(args) == 0
    vals = np.loadtxt(out, delimiter=",", comments="#")
    assert np.unravel_index(np.argmax(vals), vals.shape) == (25, 25)


def test_grid_rejects_other_dimensions(tmp_path):
    spec = _spec(tmp_path, {"family": "vmf", "kappa": 1.0}, dim=4)
    assert main(["grid", "--spec", spec, "--res", "20", "--out", str(tmp_path / "g.csv")]) == 2


def test_grid_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("ZLP_THREADS", "many")
    spec = _spec(tmp_path, None)
    assert main(["grid", "--spec", spec, "--res", "20", "--out", str(tmp_path / "g.csv")]) == 2


def _vmf_data(tmp_path, kappa, n, seed=1):
    spec = _spec(tmp_path, {"family": "vmf", "kappa": kappa, "mu": [0.0, 0.6, 0.8]}, name="truth.json")
    data = str(tmp_path / "data.csv")
    assert main(["sample", "--spec", spec, "--n", str(n), "--seed", str(seed), "--out", data]) == 0
    return data


def test_fit_vmf(tmp_path):
    data = _vmf_data(tmp_path, 25.0, 2000)
    out = str(tmp_path / "fit.json")
    assert main(["fit", "--family", "vmf", "--data", data, "--out", out, "--dim", "3"]) == 0
    doc = json.loads(open(out).read())
    assert doc["preset"]["family"] == "vmf"
    assert doc["preset"]["kappa"] == pytest.approx(25.0, rel=0.1)
    trace = np.loadtxt(out + ".trace.csv", delimiter=",", skiprows=1, ndmin=2)
    assert np.all(np.diff(trace[:, 2]) <= 0)
    # the fitted spec loads back as a layer list too
    out2 = str(tmp_path / "fit_layers.json")
    assert main(["fit", "--family", "vmf", "--data", data, "--out", out2, "--format", "layers"]) == 0
    assert json.loads(open(out2).read())["order"] == "applies_first"


def test_fit_single_point_warns(tmp_path, capsys):
    data = tmp_path / "one.csv"
    data.write_text("x1,x2,x3\n0,0,1\n")
    out = str(tmp_path / "fit.json")
    assert main(["fit", "--family", "vmf", "--data", str(data), "--out", out]) == 0
    assert "warning" in capsys.readouterr().err
    doc = json.loads(open(out).read())
    # the fitted rotation carries the pole onto the data point
    np.testing.assert_allclose(np.asarray(doc["preset"]["rotation"])[:, -1], [0, 0, 1], atol=1e-12)


def test_fit_wrong_dimension_exit_2(tmp_path):
    data = _vmf_data(tmp_path, 5.0, 50)
    assert main(["fit", "--family", "vmf", "--data", data, "--dim", "4", "--out", str(tmp_path / "f.json")]) == 2


def test_fit_divergence_exit_3(tmp_path, capsys):
    data = _vmf_data(tmp_path, 5.0, 50)
    cfg = tmp_path / "cfg.json"
    # any NLL above the uniform baseline minus 1e6 nats counts as divergence
    cfg.write_text(json.dumps({"iterations": 20, "divergence_margin": -1e6}))
    out = str(tmp_path / "f.json")
    assert main(["fit", "--family", "vmf", "--data", data, "--config", str(cfg), "--out", out]) == 3
    assert "diverged" in capsys.readouterr().err


def test_fit_bad_config_exit_2(tmp_path):
    data = _vmf_data(tmp_path, 5.0, 50)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"iterations": 20, "momentum": 0.9}))
    assert main(["fit", "--family", "vmf", "--data", data, "--config", str(cfg), "--out", str(tmp_path / "f.json")]) == 2


def test_check_uniform_fast(tmp_path, capsys):
    import time

    spec = _spec(tmp_path, None)
    t0 = time.perf_counter()
    assert main(["check", "--spec", spec, "--level", "fast"]) == 0
    assert time.perf_counter() - t0 < 1.0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


@pytest.mark.slow
def test_check_kent_full_runs_tangent_check(tmp_path, capsys):
    spec = _spec(tmp_path, {"family": "kent", "kappa": 1e4, "u": 1.5})
    assert main(["check", "--spec", spec, "--level", "full"]) == 0
    out = capsys.readouterr().out
    assert "tangent" in out and "unimodality" in out and "FAIL" not in out
    # kappa above 1e3 is too sharp for the grid normalization check
    assert "normalization (grid)" not in out


def test_check_full_includes_grid_normalization(tmp_path, capsys):
    spec = _spec(tmp_path, {"family": "kent", "kappa": 50.0, "u": 1.2})
    assert main(["check", "--spec", spec, "--level", "full"]) == 0
    assert "normalization (grid)" in capsys.readouterr().out


def test_check_bad_constraint_exit_4(tmp_path, capsys):
    spec = _spec(tmp_path, {"family": "kent", "kappa": 10.0, "u": 3.0})
    assert main(["check", "--spec", spec]) == 4
    assert "FAIL" in capsys.readouterr().out


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "zlpflow", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "zlpflow" in res.stdout
