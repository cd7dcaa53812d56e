from __future__ import annotations

import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import random_cohort
from threshcert.bootstrap import BootstrapConfig, InstabilityMap, bootstrap_thresholds, instability_from_risks
from threshcert.data_model import Aggregator, CostSpec, ScoreSet
from threshcert.empirical import GridMode, ThresholdGrid, empirical_risk_curve, erm_threshold, make_grid
from threshcert.selection import (
    Candidate,
    DirectionCap,
    InfeasibleConstraintError,
    SelectorKind,
    figure_lambda,
    penalized_select,
    penalized_select_per_t,
    per_t_selector,
    select_threshold,
    write_candidate_table,
)
from threshcert.synth import FIG1_P, HierarchySpec, generate_scores


@pytest.fixture
def small():
    ss = ScoreSet([0, 0, 0, 1, 0, 1, 1, 1], [0.1, 0.2, 0.3, 0.35, 0.5, 0.6, 0.8, 0.9])
    return empirical_risk_curve(ss, CostSpec(), make_grid(ss))


def test_selector_parse_round_trip():
    for text in ["erm", "youden", "sens:0.95", "spec:0.9", "penalized"]:
        assert str(SelectorKind.parse(text)) == text
    for bad in ["sens", "spec:1.5", "erm:0.3", "magic"]:
        with pytest.raises(ValueError):
            SelectorKind.parse(bad)


def test_rules_on_hand_curve(small):
    t = small.thresholds
    assert select_threshold(small, SelectorKind("erm")) == pytest.approx(0.325)
    assert select_threshold(small, SelectorKind("youden")) == pytest.approx(0.325)
    # sens >= 0.99 forces every positive above the cut: largest such t
    assert select_threshold(small, SelectorKind("sens", 0.99)) == pytest.approx(0.325)
    # spec >= 0.99 forces every negative below the cut: smallest such t
    assert select_threshold(small, SelectorKind("spec", 0.99)) == pytest.approx(0.55)
    assert select_threshold(small, SelectorKind("penalized")) == select_threshold(small, SelectorKind("erm"))
    assert all(select_threshold(small, SelectorKind(k)) in t for k in ("erm", "youden"))


def test_infeasible_constraint_names_best_value():
    ss = ScoreSet([0, 1, 0, 1], [0.1, 0.2, 0.3, 0.4])
    curve = empirical_risk_curve(ss, CostSpec(), ThresholdGrid(np.array([0.25, 0.35])))
    with pytest.raises(InfeasibleConstraintError, match="best achievable is 0.5"):
        select_threshold(curve, SelectorKind("sens", 0.9))


@given(st.integers(0, 2**32 - 1), st.integers(4, 40), st.floats(0.05, 0.95))
def test_constrained_cuts_satisfy_targets(seed, n, target):
    ss = random_cohort(np.random.default_rng(seed), n)
    curve = empirical_risk_curve(ss, CostSpec(), make_grid(ss))
    ts = select_threshold(curve, SelectorKind("sens", target))
    i = curve.grid.index_of(ts)
    assert curve.sensitivity[i] >= target - 1e-12
    assert i == curve.thresholds.size - 1 or curve.sensitivity[i + 1] < target - 1e-12
    tp = select_threshold(curve, SelectorKind("spec", target))
    j = curve.grid.index_of(tp)
    assert curve.specificity[j] >= target - 1e-12
    assert j == 0 or curve.specificity[j - 1] < target - 1e-12


def _cands(rng):
    base = random_cohort(rng, 50)
    noisy = ScoreSet(base.labels, base.scores + rng.normal(scale=2.0, size=50))
    return [(Candidate("sharp", Aggregator("max")), base), (Candidate("noisy", Aggregator("mean")), noisy)]


def test_penalized_select_minimizes_objective(rng):
    best, table = penalized_select(_cands(rng), CostSpec(), boot=BootstrapConfig(B=30))
    js = [ev.result.objective_j for ev in table]
    assert best.objective_j == min(js)
    for ev in table:
        r = ev.result
        assert r.objective_j == pytest.approx(r.min_val_risk + r.g_boot)
        assert r.t_hat == erm_threshold(ev.curve)


def test_penalized_tie_goes_to_earlier_candidate(rng):
    ss = random_cohort(rng, 40)
    cands = [(Candidate("a", Aggregator("max")), ss), (Candidate("b", Aggregator("max")), ss)]
    best, _ = penalized_select(cands, CostSpec(), boot=BootstrapConfig(B=20))
    assert best.candidate.method_id == "a"


def test_failing_candidate_is_dropped(rng):
    bad = ScoreSet([1, 1, 1], [0.1, 0.2, 0.3])
    good = random_cohort(rng, 30)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        best, table = penalized_select(
            [(Candidate("bad", Aggregator("max")), bad), (Candidate("good", Aggregator("max")), good)],
            CostSpec(),
            boot=BootstrapConfig(B=10),
        )
    assert best.candidate.method_id == "good" and len(table) == 1
    assert any("bad/max excluded" in str(w.message) for w in caught)
    with pytest.raises(ValueError), pytest.warns(UserWarning):
        penalized_select([(Candidate("bad", Aggregator("max")), bad)], CostSpec())


def _map(curve, values):
    return InstabilityMap(curve.grid, np.asarray(values, dtype=float), np.asarray(values, dtype=float))


def test_per_t_zero_lambda_is_erm(small):
    m = _map(small, np.linspace(1, 0, small.thresholds.size))
    assert penalized_select_per_t(small, m, 0.0) == erm_threshold(small)


def test_per_t_penalty_moves_selection(small):
    vals = np.zeros(small.thresholds.size)
    vals[small.grid.index_of(erm_threshold(small))] = 1.0
    moved = penalized_select_per_t(small, _map(small, vals), 10.0)
    assert moved != erm_threshold(small)


def test_figure_lambda_formula(small):
    vals = np.linspace(0, 1, small.thresholds.size)
    m = _map(small, vals)
    q = np.sort(vals)[int(np.ceil(0.58 * vals.size)) - 1]
    assert figure_lambda(small, m) == pytest.approx(1.15 * (small.risks.max() - small.risks.min()) / q)
    assert figure_lambda(small, _map(small, np.zeros(vals.size))) == 0.0


def test_direction_cap(small):
    t = small.thresholds
    vals = np.zeros(t.size)
    anchor = erm_threshold(small)
    # penalize everything except the far right end; the cap keeps us within reach
    vals[:-1] = 1.0
    got = penalized_select_per_t(small, _map(small, vals), 100.0, DirectionCap(anchor, 0.2))
    assert anchor <= got <= anchor + 0.2
    with pytest.raises(ValueError):
        penalized_select_per_t(small, _map(small, vals), 1.0, DirectionCap(10.0, 0.1))
    with pytest.raises(ValueError):
        penalized_select_per_t(small, _map(small, vals), "auto")


def test_per_t_requires_shared_grid(small):
    other = InstabilityMap(ThresholdGrid(np.array([0.0, 1.0, 2.0])), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        penalized_select_per_t(small, other, 1.0)


def test_per_t_selector_zero_lambda_refits_erm(rng):
    ss = random_cohort(rng, 40)
    grid = make_grid(ss, "uniform:30")
    m = InstabilityMap(grid, np.linspace(0, 1, 30), np.linspace(0, 1, 30))
    a = bootstrap_thresholds(ss, CostSpec(), grid, BootstrapConfig(B=15), per_t_selector(m, 0.0, None))
    b = bootstrap_thresholds(ss, CostSpec(), grid, BootstrapConfig(B=15))
    assert np.array_equal(a.t_star, b.t_star)


def test_synthetic_regime_moves_right_of_erm_and_out_of_sharp_basin():
    agg = Aggregator("max")
    sharp_only = replace(FIG1_P, sharp_fraction=1.0)
    basin_top = generate_scores(sharp_only, HierarchySpec(2000, 800, seed=99), agg).scores.max()
    moved = 0
    for seed in range(12):
        ss = generate_scores(FIG1_P, HierarchySpec(180, 800, seed=seed), agg)
        grid = make_grid(ss, GridMode("uniform", 200))
        curve = empirical_risk_curve(ss, CostSpec(), grid)
        t_erm = erm_threshold(curve)
        boot = bootstrap_thresholds(ss, CostSpec(), grid, BootstrapConfig(B=100, seed=seed), t_hat=t_erm, keep_risks=True)
        imap = instability_from_risks(grid, boot.replicate_risks)
        t_j = penalized_select_per_t(curve, imap, "figure", DirectionCap(t_erm))
        assert t_erm <= t_j <= t_erm + 0.9
        assert t_j > basin_top
        moved += t_j > t_erm
    assert moved >= 6


def test_write_candidate_table(rng, tmp_path):
    _, table = penalized_select(_cands(rng), CostSpec(), boot=BootstrapConfig(B=10))
    write_candidate_table(table, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "method,aggregator,t_hat,val_risk,g_boot,J"
    assert lines[1].startswith("sharp,max,") and lines[2].startswith("noisy,mean,")
