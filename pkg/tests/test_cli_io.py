import json
from pathlib import Path

import numpy as np
import pytest

from bbbtraj import cli, config, io

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_cfg(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def spin_doc(**over):
    doc = {"model": {"kind": "spin-half", "mu": 1.0, "B": 1.0}, "formulation": "wavefree",
           "initial": {"kind": "spin-delta", "delta": 0.3}, "dt": 1e-3, "horizon": 2.0,
           "output": {"record_every": 50}}
    doc.update(over)
    return doc


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    assert cli.main(["validate", "--config", str(path), "--quiet"]) == 0


def test_run_writes_outputs_and_is_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, spin_doc(M=2000, seed=4))
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "a"), "--quiet"]) == 0
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--quiet"]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    for name in (io.SERIES_FILE, io.SUMMARY_FILE):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma = json.loads((a / io.MANIFEST_FILE).read_text())
    mb = json.loads((b / io.MANIFEST_FILE).read_text())
    ma.pop("wall_time"), mb.pop("wall_time")
    ma["config"]["output"].pop("dir"), mb["config"]["output"].pop("dir")
    assert ma == mb
    lines = (a / io.SERIES_FILE).read_text().splitlines()
    assert lines[0] == f"# config-hash {ma['hash']}"
    assert lines[1] == "t,quantity,index,value"
    assert (a / "run.log").exists()


def test_seed_override_changes_hash(tmp_path):
    cfg = config.parse(spin_doc())
    assert io.config_hash(cfg) != io.config_hash(config.parse(spin_doc(), seed=9))
    assert io.config_hash(cfg) == io.config_hash(config.parse(spin_doc(), out="elsewhere"))


def test_git_blob_hash_known_value():
    # `git hash-object` of a file containing "hello\n"
    assert io.git_blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_compare_against_reference_and_cos2(tmp_path, capsys):
    wf_cfg = write_cfg(tmp_path, spin_doc(horizon=4.0), "wf.json")
    ref_cfg = write_cfg(tmp_path, spin_doc(horizon=4.0, formulation="reference",
                                           options={"scheme": "exact-exponential"}), "ref.json")
    assert cli.main(["run", "--config", wf_cfg, "--out", str(tmp_path / "wf"), "--quiet"]) == 0
    assert cli.main(["run", "--config", ref_cfg, "--out", str(tmp_path / "ref"), "--quiet"]) == 0
    assert cli.main(["compare", str(tmp_path / "wf"), str(tmp_path / "ref"), "--tol", "1e-9",
                     "--json", str(tmp_path / "cmp.json")]) == 0
    rep = json.loads((tmp_path / "cmp.json").read_text())
    assert rep["passed"] and rep["error"] < 1e-9 and rep["worst"]
    assert cli.main(["compare", str(tmp_path / "wf"), "--analytic", "spin-cos2", "--tol", "1e-9"]) == 0
    # a tolerance no run can meet gives the comparison exit code
    assert cli.main(["compare", str(tmp_path / "wf"), str(tmp_path / "ref"), "--tol", "0",
                     "--quiet"]) == cli.EXIT_TOLERANCE
    capsys.readouterr()


def test_cos2_needs_oscillation(tmp_path, capsys):
    cfg = write_cfg(tmp_path, spin_doc(horizon=1.0))
    cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"])
    assert cli.main(["compare", str(tmp_path / "o"), "--analytic", "spin-cos2"]) == cli.EXIT_INVALID
    assert "oscillate" in capsys.readouterr().err


def test_compare_rejects_mismatched_grids(tmp_path, capsys):
    a = write_cfg(tmp_path, spin_doc(), "a.json")
    b = write_cfg(tmp_path, spin_doc(horizon=1.0), "b.json")
    cli.main(["run", "--config", a, "--out", str(tmp_path / "a"), "--quiet"])
    cli.main(["run", "--config", b, "--out", str(tmp_path / "b"), "--quiet"])
    assert cli.main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == cli.EXIT_INVALID
    assert "time grid" in capsys.readouterr().err


@pytest.mark.parametrize("patch,needle", [
    ({"dt": -1.0}, "dt:"),
    ({"formulation": "f3-hydro"}, "needs a circle"),
    ({"tolerances": {"bogus": 1.0}}, "unknown tolerance"),
    ({"options": {"scheme": "exact-exponential"}}, "options.scheme"),
    ({"extra_field": 1}, "extra_field"),
])
def test_invalid_configs_exit_one(tmp_path, capsys, patch, needle):
    cfg = write_cfg(tmp_path, spin_doc(**patch))
    assert cli.main(["validate", "--config", cfg]) == cli.EXIT_INVALID
    assert needle in capsys.readouterr().err


def test_not_json(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    assert cli.main(["validate", "--config", str(p)]) == cli.EXIT_INVALID
    assert "not valid JSON" in capsys.readouterr().err


def test_integration_failure_exit_two(tmp_path, capsys):
    cfg = write_cfg(tmp_path, spin_doc(options={"scheme": "euler"}))
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == cli.EXIT_INTEGRATION
    assert "radicand" in capsys.readouterr().err


def test_step_size_failure_reports_bound(tmp_path, capsys):
    doc = {"model": {"kind": "circle", "N": 64, "L": 4.0}, "formulation": "reference",
           "initial": {"kind": "plane-wave", "q": 1}, "dt": 1.0, "horizon": 2.0}
    cfg = write_cfg(tmp_path, doc)
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == cli.EXIT_INTEGRATION
    assert "required dt <=" in capsys.readouterr().err


def test_sweep_dt_first_order(tmp_path, capsys):
    cfg = str(CONFIGS / "spin_euler_sweep.json")
    assert cli.main(["sweep", "--config", cfg, "--axis", "dt", "--values", "4e-3,2e-3,1e-3",
                     "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "sweep.json").read_text())
    assert rep["fitted_order"] == pytest.approx(1.0, abs=0.05)
    assert "fitted order" in capsys.readouterr().out


def test_series_writer_checks_shape_and_quantity(tmp_path):
    w = io.SeriesWriter()
    with pytest.raises(ValueError):
        w.add("nope", [0.0], [[1.0]], ["0"])
    with pytest.raises(ValueError):
        w.add("P", [0.0, 1.0], [[1.0]], ["0"])
    w.add("P", [1.0, 0.0], [[0.25, 0.75], [0.5, 0.5]], ["0", "1"])
    w.write(tmp_path / "s.csv", "abc")
    s = io.read_series(tmp_path / "s.csv")
    t, labels, v = s.select("P")
    assert t.tolist() == [0.0, 1.0] and labels == ["0", "1"]
    assert v.tolist() == [[0.5, 0.5], [0.25, 0.75]]
    assert s.config_hash == "abc"
    with pytest.raises(KeyError):
        s.select("Q")


def test_read_series_requires_hash_line(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("t,quantity,index,value\n")
    with pytest.raises(ValueError):
        io.read_series(p)


def test_float_round_trip(tmp_path):
    w = io.SeriesWriter()
    vals = np.array([[np.pi, 1 / 3, 1e-300, -2.5e17]])
    w.add("P", [0.1], vals, list("abcd"))
    w.write(tmp_path / "s.csv", "h")
    assert np.array_equal(io.read_series(tmp_path / "s.csv").select("P")[2], vals)
