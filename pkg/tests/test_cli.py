import json
import subprocess
import sys

import numpy as np
import pytest

from nvesr import io as nio
from nvesr.cli import main
from nvesr.fitting import synthetic_observations
from nvesr.spin import ES_PARAMS, FieldPoint


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def obs_csv(tmp_path):
    fields = [FieldPoint(float(b)) for b in np.linspace(10, 900, 20)]
    p = tmp_path / "obs.csv"
    nio.save_observations(synthetic_observations(ES_PARAMS, fields, sigma=5.0, seed=0), p)
    return p


def test_version(capsys):
    code, out, _ = run(["--version", "--verbose"], capsys)
    assert code == 0 and "1.3996245" in out and "backend" in out


def test_levels_rows(capsys):
    code, out, _ = run(
        ["levels", "--manifold", "es", "--d", 1425, "--g", 2.01, "--a", 61, "--e", 70,
         "--b-start", 0, "--b-stop", 900, "--b-step", 1], capsys)
    lines = out.splitlines()
    assert code == 0 and len(lines) == 902
    assert len(lines[0].split(",")) == 3 + 6 + 6


def test_transitions_json(capsys):
    code, out, _ = run(["transitions", "--b", 57, "--format", "json"], capsys)
    lines = json.loads(out)["transitions"]
    assert code == 0
    np.testing.assert_allclose([t["frequency_mhz"] for t in lines], [1223.198, 1280.0, 1573.745, 1630.832], atol=1e-3)


def test_crossings(capsys):
    code, out, _ = run(["crossings", "--manifold", "es", "--e", 0, "--a", 0], capsys)
    (c,) = json.loads(out)["crossings"]
    assert code == 0 and c["b_gauss"] == pytest.approx(506.5, abs=0.1) and c["min_gap_mhz"] == 0


def test_crossing_pair_option(capsys):
    code, out, _ = run(["crossings", "--b-start", 400, "--b-stop", 600, "--pair=-1,-1/2:0,+1/2"], capsys)
    (c,) = json.loads(out)["crossings"]
    assert c["level_pair"] == [[-1, -0.5], [0, 0.5]] and c["min_gap_mhz"] > 0


def test_synth_then_fitpeaks(tmp_path, capsys):
    spec = tmp_path / "s.csv"
    code, _, _ = run(["synth", "--b", 57, "--f-start", 1100, "--f-stop", 1750, "--f-step", 2,
                      "--noise-sigma", 0.001, "--out", spec], capsys)
    assert code == 0
    code, out, _ = run(["fitpeaks", "--spectrum", spec, "--n-peaks", 4], capsys)
    rep = json.loads(out)["report"]
    assert code == 0 and rep["converged"]
    np.testing.assert_allclose([p["center_mhz"] for p in rep["peaks"]], [1223.2, 1280.0, 1573.7, 1630.8], atol=3)


def test_synth_both_manifolds(capsys):
    code, out, _ = run(["synth", "--manifold", "both", "--b", 57, "--f-start", 2700, "--f-stop", 2720,
                        "--f-step", 0.1], capsys)
    vals = np.array([list(map(float, r.split(","))) for r in out.splitlines()[1:]])
    assert code == 0 and vals[:, 1].min() < 0.99


def test_fitham(obs_csv, capsys):
    code, out, _ = run(["fitham", "--obs", obs_csv, "--init-d", 1400, "--init-g", 2.0,
                        "--init-a", 55, "--init-e", 60], capsys)
    env = json.loads(out)
    p = env["report"]["params"]
    assert code == 0 and env["report"]["converged"]
    assert abs(p["D"] - 1425) < 1 and abs(p["g"] - 2.01) < 0.005
    assert abs(p["A"] - 61) < 3 and abs(p["E"] - 70) < 15
    assert env["input_sha256"] == nio.digest([obs_csv])


def test_fitham_free_and_exclusion(obs_csv, capsys):
    code, out, _ = run(["fitham", "--obs", obs_csv, "--free", "D,g", "--exclude-crossing"], capsys)
    rep = json.loads(out)["report"]
    assert code == 0 and rep["free"] == ["D", "g"] and rep["excluded"] == 4


def test_fitham_nonconvergence_exit_3(obs_csv, tmp_path, capsys):
    out = tmp_path / "r.json"
    code, _, _ = run(["fitham", "--obs", obs_csv, "--max-iter", 1, "--out", out], capsys)
    assert code == 3
    assert json.loads(out.read_text())["report"]["converged"] is False


def test_assign(obs_csv, tmp_path, capsys):
    centers = tmp_path / "c.csv"
    rows = ["b_gauss,theta_deg,phi_deg,frequency_mhz"]
    for o in nio.load_observations(obs_csv):
        rows.append(f"{o.field.magnitude!r},0,0,{o.frequency!r}")
    centers.write_text("\n".join(rows) + "\n")
    back = tmp_path / "back.csv"
    code, out, _ = run(["assign", "--centers", centers, "--obs-out", back], capsys)
    res = json.loads(out)
    assert code == 0 and len(res["observations"]) == 80 and res["warnings"] == []
    labels = [o.transition_label for o in nio.load_observations(back)]
    assert labels == [o.transition_label for o in nio.load_observations(obs_csv)]


@pytest.mark.parametrize(
    "argv",
    [[], ["nope"], ["levels", "--b-step", "0"], ["fitpeaks"], ["crossings", "--pair", "0,+1/2:7,1"], ["crossings", "--pair", "0,+1/2"],
     ["fitpeaks", "--spectrum", "x", "--n-peaks", "2", "--init", "1:2"]],
)
def test_usage_errors(argv, capsys):
    code, out, err = run(argv, capsys)
    assert code == 1 and out == ""
    assert err.count("\n") == 1 and err.startswith("nvesr: usage error:")


def test_data_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("frequency_mhz,intensity\n1,2\n1,3\n")
    code, _, err = run(["fitpeaks", "--spectrum", bad, "--n-peaks", 1], capsys)
    assert code == 2 and err.count("\n") == 1 and ":3:" in err
    code, _, err = run(["fitham", "--obs", tmp_path / "missing.csv"], capsys)
    assert code == 2 and err.startswith("nvesr: error:")
    flat = tmp_path / "flat.csv"
    flat.write_text("frequency_mhz,intensity\n" + "".join(f"{k},1\n" for k in range(50)))
    code, _, err = run(["fitpeaks", "--spectrum", flat, "--n-peaks", 1], capsys)
    assert code == 2 and "flat" in err


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "nvesr.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("nvesr ")
