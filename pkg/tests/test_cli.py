import json

import numpy as np
import pytest

from hingeprox.cli import main
from hingeprox.problems import load_instance, make_synthetic_qp, save_instance

from test_harness import TINY


def _config(tmp_path, **patch):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**TINY, **patch}))
    return str(path)


def test_run_writes_metric_csvs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", _config(tmp_path), "--output-dir", str(out)]) == 0
    for name in ("obj_gap.csv", "violation.csv", "dist_sq.csv", "summary.json"):
        assert (out / name).is_file()
    header = (out / "dist_sq.csv").read_text().splitlines()[0]
    assert header == "sfo,HPS"
    assert "median final" in capsys.readouterr().out


def test_slope_subcommand(tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", _config(tmp_path, seeds=[0]), "--output-dir", str(out)])
    trace = str(out / "traces" / "HPS_seed0.csv")
    assert main(["slope", trace, "--range", "300", "3000"]) == 0
    assert "slope" in capsys.readouterr().out
    assert main(["slope", trace, "--range", "300", "3000", "--expect", "5", "6"]) == 3


def test_bad_config_exits_one(tmp_path, capsys):
    assert main(["run", _config(tmp_path, version=7), "--output-dir", str(tmp_path)]) == 1
    assert "version" in capsys.readouterr().err
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert main(["run", str(bad)]) == 1
    assert main(["run", "no_such_config"]) == 1


def test_divergence_exits_two(tmp_path):
    cfg = _config(tmp_path, solvers=[{"algorithm": "HPS", "t_max": 5000, "step_rule": 40.0}])
    assert main(["run", cfg, "--output-dir", str(tmp_path / "o")]) == 2


def test_solve_exact_pins_reference(tmp_path):
    inst = make_synthetic_qp(3, 4, 5, 1.0, 3.0, seed=5, solve=False)
    path = tmp_path / "p.json"
    save_instance(inst, path)
    assert load_instance(path).reference is None
    assert main(["solve-exact", str(path), "--out", str(tmp_path / "q.json")]) == 0
    ref = load_instance(tmp_path / "q.json").reference
    again = make_synthetic_qp(3, 4, 5, 1.0, 3.0, seed=5).reference
    assert np.allclose(ref.x_star, again.x_star, atol=1e-10)


def test_prox_check_small(capsys):
    assert main(["prox-check", "--cases", "200", "--grid", "100000"]) == 0
    out = capsys.readouterr().out
    assert "failures=0" in out


def test_rmse_table_ordering(capsys):
    assert main(["rmse-table", "--config", "synth1"]) == 0
    out = capsys.readouterr().out
    assert "OLS" in out and "VR-HPS" in out and "reference" in out
