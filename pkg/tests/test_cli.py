import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from cihj.cli import EXIT_CAP, EXIT_CHECK, EXIT_CONFIG, EXIT_OK, run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

NINE = {
    "h": 0.0, "T": 1.0, "n": 1, "m_past": 0, "m_fut": 2,
    "slope_bound": 1.0, "velocity_alphabet": [[-1.0], [0.0], [1.0]], "start_values": [[0.0]],
}
CI = dict(NINE, h=0.03125, T=0.03125, m_past=2, m_fut=3)


def write_config(tmp_path, **extra):
    shutil.copy(CONFIGS / "problem_closed_form.json", tmp_path / "problem.json")
    doc = {
        "family": NINE,
        "schedule": [[1.0, 1.0], [0.25, 0.25]],
        "problem": "problem.json",
        "seeds": {"ci": 0, "assumptions": 0},
        "ci_check": {"family": CI, "samples": 20},
        "output": "out",
    }
    doc.update(extra)
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(doc))
    return path


def test_penalty_suite(tmp_path):
    cfg = write_config(tmp_path)
    assert run(["penalty-suite", "--config", str(cfg)]) == EXIT_OK
    doc = json.loads((tmp_path / "out" / "penalty_suite.json").read_text())
    assert doc["passed"] and doc["command"] == "penalty-suite"
    assert (tmp_path / "out" / "penalty_suite.csv").exists()


def test_all(tmp_path):
    cfg = write_config(tmp_path)
    assert run(["all", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    names = {p.name for p in (tmp_path / "o").iterdir()}
    assert {"summary.json", "solve.json", "value_table.csv", "compare.json", "ci_check.json"} <= names


def test_malformed_json(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["solve", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_missing_section(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"schedule": [[1.0, 1.0]]}))
    assert run(["solve", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_bad_schedule(tmp_path):
    cfg = write_config(tmp_path, schedule=[[0.5, 0.5], [1.0, 1.0]])
    assert run(["compare", "--config", str(cfg)]) == EXIT_CONFIG


def test_boundary_violation(tmp_path):
    cfg = write_config(tmp_path, compare={"phi1": {"builtin": "value", "shift": 1.0}, "phi2": {"builtin": "value"}})
    assert run(["compare", "--config", str(cfg)]) == EXIT_CHECK
    doc = json.loads((tmp_path / "out" / "compare.json").read_text())
    assert doc["result"]["boundary_violation"]["worst"] == pytest.approx(1.0)


def test_cap(tmp_path):
    cfg = write_config(tmp_path)
    assert run(["penalty-suite", "--config", str(cfg), "--cap", "5", "--out", str(tmp_path / "o")]) == EXIT_CAP
    assert not (tmp_path / "o").exists()


def test_env_override(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    monkeypatch.setenv("CIHJ_CONFIG", str(cfg))
    monkeypatch.setenv("CIHJ_OUT", str(tmp_path / "env"))
    assert run(["solve"]) == EXIT_OK
    assert (tmp_path / "env" / "solve.json").exists()
    monkeypatch.setenv("CIHJ_CAP", "5")
    assert run(["solve"]) == EXIT_CAP


def test_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    outs = []
    for i, threads in enumerate(("1", "3")):
        out = tmp_path / f"run{i}"
        assert run(["all", "--config", str(cfg), "--out", str(out), "--threads", threads, "--normalize-timestamps"]) == EXIT_OK
        outs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outs[0] == outs[1]


def test_no_config(monkeypatch):
    monkeypatch.delenv("CIHJ_CONFIG", raising=False)
    assert run(["solve"]) == EXIT_CONFIG
    assert run(["bogus"]) == EXIT_CONFIG


def test_array_perturb_matches_table(desk_family, desk_value):
    from cihj.cli import tabulated_perturb

    p = desk_family.paths[100]
    a = tabulated_perturb(desk_value.as_array(), desk_family, 1, p, 0.5)
    assert np.array_equal(a, desk_value.perturbed(1, p, 0.5).as_array())


def test_global_family_mode(tmp_path):
    other = dict(NINE, m_fut=1)
    cfg = write_config(tmp_path, families=[NINE, other])
    out = tmp_path / "o"
    assert run(["all", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["result"]["commands"]) == {f"family_{i}/{c}" for i in (0, 1) for c in ("penalty-suite", "ci-check", "solve", "compare")}
    for i in (0, 1):
        doc = json.loads((out / f"family_{i}" / "penalty_suite.json").read_text())
        assert doc["passed"]
        assert len((out / f"family_{i}" / "value_table.csv").read_text().splitlines()) > 1


def test_perturb_out_of_range(tmp_path):
    cfg = write_config(tmp_path, compare={"phi1": {"builtin": "value", "perturb": {"t_idx": 1, "member": 999, "amount": 0.5}}})
    assert run(["compare", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert not (tmp_path / "o").exists()
