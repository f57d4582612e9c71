from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from geomex.cli import main
from geomex.files import ModelFile, read_data_csv


def invoke(*args, ok=True, env=None):
    res = CliRunner().invoke(main, [str(a) for a in args], env=env, catch_exceptions=False)
    if ok:
        assert res.exit_code == 0, res.output
    return res


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "x.csv"
    invoke("simulate", "--family", "laplace", "--rho", 0.5, "--n", 1000, "--seed", 1, "--out", data)
    invoke("fit-q", "--data", data, "--q", 0.8, "--n-draws", 2, "--out", root / "qfit.json")
    invoke("fit-exc", "--data", data, "--qfit", root / "qfit.json", "--variant", "M2", "--xi", "zero",
           "--angles", "exceedances", "--draws", 5, "--out", root / "excfit.json")
    return root


def test_simulate_writes_rows(chain):
    pts = read_data_csv(chain / "x.csv")
    assert pts.shape == (1000, 2)


def test_simulate_is_deterministic(tmp_path):
    for name in ("a.csv", "b.csv"):
        invoke("simulate", "--family", "logistic", "--theta", 0.3, "--d", 3, "--n", 50, "--seed", 4, "--out", tmp_path / name)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_simulate_invalid(tmp_path):
    res = invoke("simulate", "--family", "gaussian", "--rho", 1.5, "--n", 5, "--seed", 1, "--out", tmp_path / "z.csv", ok=False)
    assert res.exit_code != 0


def test_standardize(chain, tmp_path):
    raw = np.random.default_rng(0).gamma(2.0, size=(800, 2))
    np.savetxt(tmp_path / "raw.csv", raw, delimiter=",", header="a,b", comments="")
    invoke("standardize", "--data", tmp_path / "raw.csv", "--out", tmp_path / "lap.csv", "--model", tmp_path / "m.json", "--seed", 1)
    lap = read_data_csv(tmp_path / "lap.csv")
    assert lap.shape == raw.shape and abs(np.median(lap)) < 0.1
    assert json.loads((tmp_path / "m.json").read_text())["schema_version"] == 1


def test_fit_outputs(chain):
    model = ModelFile.load(chain / "excfit.json")
    assert len(model.exceedance_fits) == 2
    assert len(model.model_draws()) == 10
    assert model.settings["spec"]["variant"] == "M2"
    assert json.loads((chain / "qfit.json").read_text())["n_q"] == 2


def test_fit_exc_jobs_env_is_identical(chain, tmp_path):
    invoke("fit-exc", "--data", chain / "x.csv", "--qfit", chain / "qfit.json", "--variant", "M2", "--draws", 5,
           "--out", tmp_path / "e.json", env={"GEOMEX_JOBS": "2"})
    assert (tmp_path / "e.json").read_bytes() == (chain / "excfit.json").read_bytes()


def test_return_and_iso_sets(chain, tmp_path):
    invoke("return-set", "--excfit", chain / "excfit.json", "--T", 1000, "--kind", "isotropic",
           "--out", tmp_path / "b.csv", "--svg", tmp_path / "b.svg")
    rows = np.loadtxt(tmp_path / "b.csv", delimiter=",", skiprows=1)
    assert rows.shape == (512, 4) and np.all(rows[:, 3] > 0)
    assert len(tmp_path.joinpath("b.svg").read_text().split('points="')[1].split('"')[0].split()) == 512
    invoke("iso-set", "--excfit", chain / "excfit.json", "--q", 0.95, "--out", tmp_path / "i.csv")
    iso = np.loadtxt(tmp_path / "i.csv", delimiter=",", skiprows=1)
    assert np.all(iso[:, 3] < rows[:, 3])
    res = invoke("return-set", "--excfit", chain / "excfit.json", "--T", 1000, "--out", tmp_path / "c.csv",
                 "--band", tmp_path / "band.csv", ok=False)
    assert res.exit_code != 0 and "200 draws" in res.output


def test_prob(chain, tmp_path):
    few = invoke("prob", "--excfit", chain / "excfit.json", "--box", "5,5:inf,inf", "--seed", 7, ok=False)
    assert "at least 100 draws" in few.output
    invoke("fit-exc", "--data", chain / "x.csv", "--qfit", chain / "qfit.json", "--variant", "M2", "--draws", 50,
           "--out", tmp_path / "e50.json")
    res = invoke("prob", "--excfit", tmp_path / "e50.json", "--box", "5,5:inf,inf", "--nw", 500, "--seed", 7,
                 "--out", tmp_path / "p.json")
    est = json.loads((tmp_path / "p.json").read_text())
    assert json.loads(res.output) == est
    assert 0 < est["lower"] <= est["mean"] <= est["upper"] < 1
    bad = invoke("prob", "--excfit", chain / "excfit.json", "--box", "oops", "--seed", 1, ok=False)
    assert bad.exit_code != 0


def test_diagnose(chain, tmp_path):
    out = tmp_path / "diag"
    res = invoke("diagnose", "--data", chain / "x.csv", "--excfit", chain / "excfit.json", "--m", 200,
                 "--n-draws", 2, "--out", out)
    assert "K_B pass" in res.output
    for name in ("k_ball_envelope.csv", "k_sector_curves.csv", "envelope_pass.csv", "k_ball.svg", "k_sector.png"):
        assert (out / name).exists(), name
    again = tmp_path / "diag2"
    invoke("diagnose", "--data", chain / "x.csv", "--excfit", chain / "excfit.json", "--m", 200, "--n-draws", 2, "--out", again)
    for p in sorted(out.iterdir()):
        if p.suffix in (".csv", ".svg"):
            assert p.read_bytes() == (again / p.name).read_bytes(), p.name


def test_resample(chain, tmp_path):
    src = chain / "x.csv"
    before = src.read_bytes()
    invoke("resample", "--data", src, "--excfit", chain / "excfit.json", "--n", 2894, "--reps", 3, "--seed", 3,
           "--out", tmp_path / "rs")
    files = sorted((tmp_path / "rs").glob("resample_*.csv"))
    assert len(files) == 3
    assert read_data_csv(files[0]).shape == (2894, 2)
    assert src.read_bytes() == before
    res = invoke("resample", "--data", src, "--excfit", chain / "excfit.json", "--n", 10, "--reps", 1, "--seed", 3,
                 "--original-margins", "--out", tmp_path / "rs2", ok=False)
    assert "margin" in res.output


def test_report(chain, tmp_path):
    res = invoke("report", "--model", chain / "excfit.json", "--data", chain / "x.csv", "--m", 200, "--out", tmp_path / "rep")
    pngs = sorted(Path(tmp_path / "rep" / "figures").glob("*.png"))
    assert {p.name for p in pngs} >= {"boundaries.png", "qq_excess.png", "k_ball.png"}
    assert (tmp_path / "rep" / "quantile_set.csv").exists()
    assert "boundaries.png" in res.output


def test_missing_file_is_clean_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3,x\n")
    res = invoke("fit-q", "--data", bad, "--q", 0.8, "--out", tmp_path / "q.json", ok=False)
    assert res.exit_code != 0 and "line 2" in res.output


def _write_config(dirpath: Path, data: Path, out: str) -> Path:
    cfg = dirpath / f"{out}.cfg"
    cfg.write_text(
        f"data = {data}\nout = {out}\nq = 0.8\nvariant = M3\nn_q = 2\nn_gl = 4\ndiag_draws = 2\ndiag.m = 200\n"
        "seed.qfit = 2\nseed.exc = 3\n"
    )
    return cfg


def test_run_pipeline_byte_identical(chain, tmp_path):
    a = _write_config(tmp_path, chain / "x.csv", "a")
    b = _write_config(tmp_path, chain / "x.csv", "b")
    res = invoke("run", "--config", a, "--no-figures")
    assert "expected_exceedances: 200" in res.output
    summary = dict(line.split(": ", 1) for line in res.output.strip().splitlines())
    assert 150 <= float(summary["mean_exceedances"]) <= 250
    invoke("run", "--config", b, "--no-figures", "--jobs", 2)
    csvs = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    assert len(csvs) > 5
    for rel in csvs:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_run_rejects_bad_config(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("data = x.csv\nout = o\nshape = round\n")
    res = invoke("run", "--config", cfg, ok=False)
    assert res.exit_code != 0 and "unknown key" in res.output
