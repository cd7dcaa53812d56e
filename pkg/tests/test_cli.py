from __future__ import annotations

import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

import threshcert.cli as cli
from threshcert.data_model import Aggregator, CostSpec, ScoreSet, aggregate, ingest_cohort
from threshcert.empirical import ThresholdGrid, empirical_risk_curve, erm_threshold, make_grid
from threshcert.selection import select_threshold
from threshcert.synth import FIG1_P, HierarchySpec, generate_cohort


def run(*argv: str) -> int:
    return cli.run(list(argv))


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    paths = {}
    for name, preset, n, seed in (("p", "fig1-P", 60, 1), ("v", "fig1-P", 60, 2), ("q", "fig1-Q", 80, 3)):
        paths[name] = d / f"{name}.csv"
        assert run("simulate", "--preset", preset, "--n-patients", str(n), "--cells", "20", "--seed", str(seed), "--out", str(paths[name])) == 0
    # validation ids must not clash with train ids
    rows = paths["v"].read_text().replace("\nP", "\nV")
    paths["v"].write_text(rows)
    paths["dir"] = d
    return paths


def test_simulate_is_byte_identical_and_matches_library(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run("simulate", "--n-patients", "7", "--cells", "3", "--seed", "5", "--out", str(a))
    run("simulate", "--n-patients", "7", "--cells", "3", "--seed", "5", "--out", str(b))
    assert a.read_bytes() == b.read_bytes()
    run("simulate", "--n-patients", "7", "--cells", "3", "--seed", "5")
    assert capsys.readouterr().out == a.read_text()
    lib = generate_cohort(FIG1_P, HierarchySpec(7, 3, 5))
    back = ingest_cohort(a)
    assert back.ids == lib.ids
    assert all(np.array_equal(x.instances, y.instances) for x, y in zip(back.patients, lib.patients))


def test_seed_env_fallback(tmp_path, monkeypatch):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    monkeypatch.setenv(cli.SEED_ENV, "11")
    run("simulate", "--n-patients", "5", "--cells", "2", "--out", str(a))
    monkeypatch.delenv(cli.SEED_ENV)
    run("simulate", "--n-patients", "5", "--cells", "2", "--seed", "11", "--out", str(b))
    assert a.read_bytes() == b.read_bytes()
    monkeypatch.setenv(cli.SEED_ENV, "oops")
    assert run("simulate", "--n-patients", "5", "--cells", "2", "--out", str(a)) == 2


def test_certify_json_sums_and_sidecars(files, tmp_path):
    out = tmp_path / "cert.json"
    code = run("certify", "--train", str(files["p"]), "--val", str(files["v"]), "--external", str(files["q"]),
               "--agg", "max", "--B", "30", "--seed", "4", "--out", str(out))
    assert code == 0
    rep = json.loads(out.read_text())
    comp, bounds = rep["components"], rep["bounds"]
    assert rep["mode"] == "PQ"
    assert bounds["base"] == comp["val_risk"] + comp["gamma_val"] + comp["shift"]
    assert bounds["augmented"] == bounds["base"] + comp["g_boot"]
    assert math.fsum(c["percent"] for c in rep["contributions"].values()) == pytest.approx(100.0)
    assert rep["provenance"]["train_file"] == "p.csv" and len(rep["provenance"]["train_sha256"]) == 64
    for suffix in ("risk_curve", "band", "replicates", "instability"):
        assert (tmp_path / f"cert_{suffix}.csv").is_file()
    with open(tmp_path / "cert_replicates.csv") as fh:
        assert len(list(csv.reader(fh))) == 31


def test_certify_frozen_and_seeded_split(files, tmp_path, capsys):
    assert run("certify", "--train", str(files["p"]), "--B", "20", "--seed", "1") == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["mode"] == "P-frozen"
    prov = rep["provenance"]
    assert prov["split_seed"] == 1 and prov["n_train"] + prov["n_val"] == 60
    assert len(prov["val_ids"]) == prov["n_val"]
    assert run("certify", "--train", str(files["p"]), "--external", str(files["q"]), "--mode", "p-frozen", "--B", "20") == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["mode"] == "P-frozen" and rep["external"]["observed_risk"] is not None


def test_input_errors_exit_2(files, tmp_path, capsys):
    assert run("certify", "--train", str(files["p"]), "--mode", "pq") == 2
    assert run("certify", "--train", str(files["p"]), "--val", str(files["p"])) == 2
    assert run("certify", "--train", str(tmp_path / "missing.csv")) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("patient_id,label,instance_score\nA,2,0.1\n")
    assert run("certify", "--train", str(bad)) == 2
    assert run("select", "--train", str(files["p"]), "--agg", "max", "--agg", "mean") == 2
    with pytest.raises(SystemExit) as exc:
        run("certify")
    assert exc.value.code == 2
    capsys.readouterr()


def test_infeasible_constraint_exit_3(files, monkeypatch, capsys):
    real = cli.select_threshold
    ss = ScoreSet.from_scores(aggregate(ingest_cohort(files["p"]), Aggregator("mean")))

    def interior_only(curve, selector):
        # drop the extreme cuts so a high sensitivity target cannot be met
        t = curve.thresholds
        grid = ThresholdGrid(t[t.size // 2 : t.size // 2 + 2])
        return real(empirical_risk_curve(ss, CostSpec(), grid), selector)

    monkeypatch.setattr(cli, "select_threshold", interior_only)
    assert run("select", "--train", str(files["p"]), "--selector", "sens:0.999", "--B", "5") == 3
    assert "infeasible" in capsys.readouterr().err


def test_select_single_candidate_matches_library(files, tmp_path, capsys):
    table = tmp_path / "t.csv"
    assert run("select", "--train", str(files["p"]), "--agg", "max", "--B", "10", "--out", str(table)) == 0
    out = json.loads(capsys.readouterr().out)
    ss = ScoreSet.from_scores(aggregate(ingest_cohort(files["p"]), Aggregator("max")))
    assert out["t_hat"] == erm_threshold(empirical_risk_curve(ss, CostSpec(), make_grid(ss)))
    assert table.read_text().splitlines()[0] == "method,aggregator,t_hat,val_risk,g_boot,J"
    assert run("select", "--train", str(files["p"]), "--agg", "max", "--selector", "youden", "--B", "10") == 0
    out = json.loads(capsys.readouterr().out)
    curve = empirical_risk_curve(ss, CostSpec(), make_grid(ss))
    assert out["t_hat"] == select_threshold(curve, cli.SelectorKind("youden"))
    assert run("select", "--train", str(files["p"]), "--agg", "max", "--agg", "mean", "--selector", "penalized", "--B", "10") == 0
    assert json.loads(capsys.readouterr().out)["aggregator"] in ("max", "mean")


def test_config_precedence(files, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"B": 12, "seed": 3, "agg": "max"}))
    assert run("certify", "--config", str(cfg), "--train", str(files["p"])) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["bootstrap"]["B"] == 12 and rep["provenance"]["seed"] == 3 and rep["provenance"]["aggregator"] == "max"
    assert run("certify", "--config", str(cfg), "--train", str(files["p"]), "--B", "9") == 0
    assert json.loads(capsys.readouterr().out)["bootstrap"]["B"] == 9
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert run("certify", "--config", str(cfg), "--train", str(files["p"])) == 2


def test_diagnose_and_ensemble(files, capsys):
    assert run("diagnose", "--train", str(files["p"]), "--external", str(files["q"]), "--threshold", "2.5") == 0
    rep = json.loads(capsys.readouterr().out)
    sr = rep["shift_report"]
    assert rep["threshold"] == 2.5 and sr["shift_weighted"] <= sr["global_bound"]
    assert set(rep["design_effect"]) == {"P", "Q"}

    assert run("ensemble", "--source", f"{files['p']}@2.5", "--source", str(files["v"]), "--target", str(files["q"])) == 0
    ens = json.loads(capsys.readouterr().out)["ensemble"]
    assert len(ens["items"]) == 2 and ens["items"][0]["threshold"] == 2.5
    assert ens["quantile_u"] == pytest.approx(np.mean([it["quantile_u"] for it in ens["items"]]))
    assert run("ensemble", "--source", str(files["p"]), "--target", str(files["q"]), "--weighting", "precision", "--B", "10") == 0
    ens = json.loads(capsys.readouterr().out)["ensemble"]
    assert ens["weighting"] == "precision" and ens["items"][0]["weight"] > 0
    assert run("ensemble", "--target", str(files["q"])) == 2
    assert run("ensemble", "--source", f"{files['p']}@abc", "--target", str(files["q"])) == 2


def test_console_script_entry_point(files):
    proc = subprocess.run(
        [sys.executable, "-m", "threshcert.cli", "diagnose", "--train", str(files["p"]), "--external", str(files["q"])],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert "shift_report" in json.loads(proc.stdout)
