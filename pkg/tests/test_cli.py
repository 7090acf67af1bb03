import json

import pytest

from otql.cli import main


@pytest.fixture
def write_json(tmp_path):
    def _write(name, data):
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return str(path)

    return _write


def test_ot_check_identity(write_json, capsys):
    src = write_json("s.json", [0.25, 0.25, 0.5])
    code = main(["ot-check", "--source", src, "--target", src, "--coords", write_json("c.json", [[0, 0], [1, 0], [2, 0]])])
    out = capsys.readouterr().out
    assert code == 0
    assert "wasserstein (p=1): 0" in out


def test_ot_check_point_masses(write_json, capsys):
    args = [
        "ot-check",
        "--source", write_json("s.json", [1, 0]),
        "--target", write_json("t.json", {"mass": [0, 1]}),
        "--coords", write_json("c.json", {"coords": [[0, 0], [3, 4]]}),
    ]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert "objective: 25" in out
    assert "wasserstein (p=1): 25" in out


def test_ot_check_sinkhorn(write_json, capsys):
    args = [
        "ot-check", "--method", "sinkhorn", "--sinkhorn-reg", "0.5", "--p", "2",
        "--source", write_json("s.json", [0.5, 0.5]),
        "--target", write_json("t.json", [0.5, 0.5]),
        "--coords", write_json("c.json", [[0, 0], [1, 0]]),
    ]
    assert main(args) == 0
    assert "plan valid: yes" in capsys.readouterr().out


def test_ot_check_infeasible(write_json, capsys):
    args = [
        "ot-check",
        "--source", write_json("s.json", [0.4, 0.5]),
        "--target", write_json("t.json", [0.5, 0.5]),
        "--coords", write_json("c.json", [[0, 0], [1, 0]]),
    ]
    assert main(args) == 1
    assert "sums to" in capsys.readouterr().err


def test_ot_check_dimension_mismatch(write_json, capsys):
    args = [
        "ot-check",
        "--source", write_json("s.json", [1.0]),
        "--target", write_json("t.json", [0.5, 0.5]),
        "--coords", write_json("c.json", [[0, 0], [1, 0]]),
    ]
    assert main(args) == 1
    assert "dimension mismatch" in capsys.readouterr().err


def test_ot_check_bad_file(tmp_path, write_json):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    c = write_json("c.json", [[0, 0]])
    assert main(["ot-check", "--source", str(bad), "--target", str(bad), "--coords", c]) == 1


@pytest.fixture
def tiny_config(write_json):
    return write_json(
        "cfg.json",
        {
            "env": {"width": 4, "height": 3, "obstacles": [[1, 1]], "start": [0, 0], "goal": [3, 2], "max_steps": 60},
            "train": {"episodes": 4, "seeds": [0, 1]},
        },
    )


def test_compare_writes_outputs(tiny_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["compare", "--config", tiny_config, "--out", str(out), "--episodes", "3", "--seeds", "5"]) == 0
    rows = (out / "episodes.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 3
    assert all(",5," in row for row in rows[1:])
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["train"] == {"episodes": 3, "seeds": [5], "wasserstein_p": 1.0}
    assert (out / "episodes_smoothed.csv").exists()
    assert "collision ratio" in capsys.readouterr().out


def test_run_single_mode(tiny_config, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--mode", "baseline", "--config", tiny_config, "--out", str(out)]) == 0
    rows = (out / "episodes.csv").read_text().splitlines()[1:]
    assert len(rows) == 2 * 4
    assert all(row.split(",")[2] == "baseline" for row in rows)


def test_invalid_config_exit_code(write_json, tmp_path, capsys):
    cfg = write_json("cfg.json", {"env": {"width": 3, "height": 3, "obstacles": [[2, 2]], "start": [0, 0], "goal": [2, 2]}})
    assert main(["compare", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "obstacle" in capsys.readouterr().err


def test_solver_failure_exit_code(write_json, tmp_path):
    cfg = write_json(
        "cfg.json",
        {
            "env": {"width": 3, "height": 1, "obstacles": [], "start": [0, 0], "goal": [2, 0]},
            "ot": {"method": "sinkhorn", "sinkhorn_reg": 1e-4, "sinkhorn_max_iter": 1, "sinkhorn_tol": 1e-15},
            "train": {"episodes": 2, "seeds": [0]},
        },
    )
    assert main(["run", "--mode", "ot", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_bad_seeds_flag():
    with pytest.raises(SystemExit):
        main(["compare", "--seeds", "a,b"])


def test_run_mode_defaults_to_config(write_json, tmp_path):
    cfg = write_json(
        "cfg.json",
        {
            "env": {"width": 3, "height": 1, "obstacles": [], "start": [0, 0], "goal": [2, 0]},
            "agent": {"mode": "baseline"},
            "train": {"episodes": 2, "seeds": [0]},
        },
    )
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    rows = (out / "episodes.csv").read_text().splitlines()[1:]
    assert {row.split(",")[2] for row in rows} == {"baseline"}
