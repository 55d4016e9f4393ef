from __future__ import annotations

import csv
import json
from fractions import Fraction as F
from pathlib import Path

import pytest

from dhtkit.cli import main


def write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


def dendro_file(tmp_path: Path, text: str, name: str) -> Path:
    return write(tmp_path / name, json.dumps(text))


CAT4 = "(((000,001),01),1)"
BAL4 = "((00,01),(10,11))"
THREE = "((00,01),1)"


# -- cluster ---------------------------------------------------------------------


def test_cluster_two_rows(tmp_path, capsys):
    src = write(tmp_path / "ev.csv", "1.0\n2.0\n")
    assert main(["cluster", str(src)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["canonical_form"] == "(o,o)"
    assert out["leaves"] == ["0", "1"]
    assert out["manifest"]["inputs"][0]["name"] == "ev.csv"
    assert len(out["manifest"]["inputs"][0]["sha256"]) == 64


def test_cluster_is_byte_identical(tmp_path):
    src = write(tmp_path / "ev.csv", "0,0\n1,0\n5,5\n6,5\n2,9\n")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["cluster", str(src), "-o", str(a)]) == 0
    assert main(["cluster", str(src), "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_cluster_malformed_exits_2_without_output(tmp_path, capsys):
    src = write(tmp_path / "bad.csv", "1,2\n3\n")
    out = tmp_path / "out.json"
    assert main(["cluster", str(src), "-o", str(out)]) == 2
    assert "row 2" in capsys.readouterr().err
    assert not out.exists()
    assert list(tmp_path.iterdir()) == [src]
    assert main(["cluster", str(tmp_path / "missing.csv")]) == 2


def test_cluster_duplicates(tmp_path, capsys):
    src = write(tmp_path / "dup.csv", "1\n2\n1\n")
    assert main(["cluster", str(src)]) == 2
    capsys.readouterr()
    assert main(["cluster", str(src), "--on-duplicate", "jitter"]) == 0
    assert json.loads(capsys.readouterr().out)["manifest"]["config"]["on_duplicate"] == "jitter"


# -- emerge ---------------------------------------------------------------------


def test_emerge_three_leaf_summary(tmp_path):
    src = dendro_file(tmp_path, THREE, "d.json")
    out = tmp_path / "run"
    assert main(["emerge", str(src), "--out-dir", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["T"] == 0.125 and summary["T_exact"] == "1/8"
    names = {p.name for p in out.iterdir()}
    assert {"rho.csv", "S.csv", "UQ.csv", "v.csv", "U.csv", "psi.csv", "residuals.csv"} <= names


def test_emerge_from_event_list(tmp_path, capsys):
    src = write(tmp_path / "ev.json", json.dumps({"events": ["1/2", "1/4", "3/4"]}))
    assert main(["emerge", str(src)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert F(summary["T_exact"]) == F(1, 8)


def test_emerge_uniform_rho_zero_quantum_potential(tmp_path):
    src = dendro_file(tmp_path, THREE, "d.json")
    out = tmp_path / "run"
    assert main(["emerge", str(src), "--out-dir", str(out), "--uniform-rho"]) == 0
    with (out / "UQ.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(float(r["value_real"]) == 0.0 for r in rows)


def test_emerge_both_continuity_forms(tmp_path):
    src = dendro_file(tmp_path, CAT4, "d.json")
    out = tmp_path / "run"
    assert main(["emerge", str(src), "--out-dir", str(out), "--continuity-form", "both"]) == 0
    with (out / "residuals.csv").open() as fh:
        header = next(csv.reader(fh))
    assert header == ["cell_center", "hj", "continuity_literal_squared", "continuity_standard_flux"]
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["max_abs_continuity_residual"]) == {"literal_squared", "standard_flux"}


def test_emerge_is_byte_identical(tmp_path):
    src = dendro_file(tmp_path, CAT4, "d.json")
    for name in ("a", "b"):
        assert main(["emerge", str(src), "--out-dir", str(tmp_path / name), "--grid-depth", "6"]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_emerge_bad_input(tmp_path):
    bad = write(tmp_path / "bad.json", "{not json")
    assert main(["emerge", str(bad), "--out-dir", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()
    bad2 = dendro_file(tmp_path, "((00,01),0)", "bad2.json")
    assert main(["emerge", str(bad2)]) == 2


# -- cone and classify ------------------------------------------------------------


@pytest.mark.parametrize(
    "text, steps, frontier",
    [
        (THREE, 0, ["((o,o),o)"]),
        ("(0,1)", 1, ["((o,o),o)"]),
        (THREE, 1, ["(((o,o),o),o)", "((o,o),(o,o))"]),
    ],
)
def test_cone(tmp_path, capsys, text, steps, frontier):
    src = dendro_file(tmp_path, text, "d.json")
    assert main(["cone", str(src), "--steps", str(steps)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["frontier"] == frontier
    assert out["truncated"] is False


def test_cone_dot_and_cap(tmp_path, capsys):
    src = dendro_file(tmp_path, "(0,1)", "d.json")
    dot = tmp_path / "cone.dot"
    assert main(["cone", str(src), "--steps", "5", "--cap", "4", "--dot", str(dot)]) == 0
    assert json.loads(capsys.readouterr().out)["truncated"] is True
    assert dot.read_text().startswith("digraph cone {")


def test_classify(tmp_path, capsys):
    a = dendro_file(tmp_path, CAT4, "cat.json")
    b = dendro_file(tmp_path, BAL4, "bal.json")
    c = dendro_file(tmp_path, "(0,1)", "two.json")
    assert main(["classify", str(a), str(b), str(c)]) == 0
    out = json.loads(capsys.readouterr().out)
    m = out["matrix"]
    assert m[0][1]["relation"] == "spacelike"
    assert m[2][0]["relation"] == "timelike" and m[2][0]["direction"] == "forward"
    assert main(["classify", str(a), str(a)]) == 0
    assert json.loads(capsys.readouterr().out)["fractions"]["identical"] == 1.0
    assert main(["classify", str(a)]) == 2


# -- simulate ------------------------------------------------------------------------


def test_simulate_empty_schedule(tmp_path):
    sched = write(tmp_path / "s.json", "[]")
    out = tmp_path / "run"
    assert main(["simulate", "--n", "5", "--seed", "1", "--schedule", str(sched), "--out-dir", str(out)]) == 0
    with (out / "world_lines.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["probability_exact"] == "1"
    assert {p.name for p in out.iterdir()} == {"ledger.json", "world_lines.csv", "theta_history.json", "manifest.json"}


def test_simulate_seed_is_deterministic(tmp_path):
    sched = write(tmp_path / "s.json", json.dumps([{"targets": [0, 2]}, {"theta": {"class_of": 1}, "targets": [3]}]))
    for name in ("a", "b"):
        assert main(["simulate", "--n", "12", "--seed", "7", "--schedule", str(sched), "--out-dir", str(tmp_path / name)]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_simulate_constructed_split(tmp_path):
    observers = [
        {"id": 0, "events": ["1/16", "1/8", "3/16"], "objective": "000", "dendrogram": THREE},
        {"id": 1, "events": ["1/32", "1/8", "3/32"], "objective": "001", "dendrogram": THREE},
        {"id": 2, "events": ["3/64", "5/64", "7/64"], "objective": "010", "dendrogram": THREE},
        {"id": 3, "events": ["1/10", "1/2", "5/8"], "objective": "011", "dendrogram": "(0,(10,11))"},
        {"id": 4, "events": ["1/3", "2/3"], "objective": "101"},
    ]
    ens = write(tmp_path / "ens.json", json.dumps({"observers": observers}))
    sched = write(tmp_path / "s.json", json.dumps([{"theta": {"class_of": 0}, "targets": [4]}]))
    out = tmp_path / "run"
    assert main(["simulate", "--ensemble", str(ens), "--schedule", str(sched), "--out-dir", str(out)]) == 0
    with (out / "world_lines.csv").open() as fh:
        probs = sorted(F(r["probability_exact"]) for r in csv.DictReader(fh))
    assert probs == [F(1, 4), F(3, 4)]


@pytest.mark.parametrize(
    "schedule",
    ["{bad", json.dumps({"rounds": "x"}), json.dumps([{"theta": "all"}]), json.dumps([{"targets": ["a"]}])],
)
def test_simulate_bad_schedule(tmp_path, schedule):
    sched = write(tmp_path / "s.json", schedule)
    out = tmp_path / "run"
    assert main(["simulate", "--schedule", str(sched), "--out-dir", str(out)]) == 2
    assert not out.exists()


def test_simulate_unknown_target_is_input_error(tmp_path):
    sched = write(tmp_path / "s.json", json.dumps([{"targets": [99]}]))
    assert main(["simulate", "--n", "4", "--schedule", str(sched), "--out-dir", str(tmp_path / "o")]) == 2


# -- compare-linkage, transitions, config ----------------------------------------------


def test_compare_linkage(tmp_path, capsys):
    src = write(tmp_path / "ev.csv", "0\n1\n2.1\n3.3\n4.6\n")
    assert main(["compare-linkage", str(src), "--linkage-a", "single", "--linkage-b", "complete"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["same_shape"] is False
    assert out["a"]["canonical_form"] == "((((o,o),o),o),o)"
    assert "T" in out["differences"]


def test_transitions_reports_disagreement(tmp_path, capsys):
    src = write(tmp_path / "ev.csv", "17\n1\n18\n10\n7\n")
    assert main(["transitions", str(src), "--linkage", "single"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["disagreements"] == [5]
    assert [s["events"] for s in out["steps"]] == [3, 4, 5]


def test_config_file_sets_defaults(tmp_path, capsys):
    src = dendro_file(tmp_path, THREE, "d.json")
    cfg = write(tmp_path / "cfg.json", json.dumps({"grid_depth": 6, "potential_mode": "total_mass"}))
    assert main(["--config", str(cfg), "emerge", str(src)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["grid_depth"] == 6
    assert out["manifest"]["config"]["potential_mode"] == "total_mass"
    bad = write(tmp_path / "bad.json", "[1]")
    assert main(["--config", str(bad), "emerge", str(src)]) == 2
