from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import random_cohort
from threshcert.bootstrap import BootstrapConfig
from threshcert.data_model import Aggregator, ScoreSet
from threshcert.empirical import empirical_risk, empirical_risk_curve, make_grid
from threshcert.modulus import eval_band
from threshcert.pipeline import PipelineConfig, certify, split_by_patient
from threshcert.selection import SelectorKind, select_threshold
from threshcert.synth import FIG1_P, FIG1_Q, HierarchySpec, generate_scores


@given(st.integers(0, 2**32 - 1), st.integers(4, 60), st.integers(0, 1000))
def test_split_is_a_stratified_partition(seed, n, split_seed):
    ss = random_cohort(np.random.default_rng(seed), n)
    tr, va = split_by_patient(ss, split_seed)
    assert np.array_equal(np.sort(np.concatenate([tr, va])), np.arange(n))
    for y in (0, 1):
        k = int((ss.labels == y).sum())
        assert int((ss.labels[tr] == y).sum()) == int(round(0.5 * k))
    tr2, va2 = split_by_patient(ss, split_seed)
    assert np.array_equal(tr, tr2) and np.array_equal(va, va2)


@pytest.fixture(scope="module")
def data():
    agg = Aggregator("max")
    p = generate_scores(FIG1_P, HierarchySpec(120, 50, seed=1), agg)
    q = generate_scores(FIG1_Q, HierarchySpec(150, 50, seed=2), agg)
    tr, va = split_by_patient(p, 0)
    return p.subset(tr), p.subset(va), q


CFG = PipelineConfig(boot=BootstrapConfig(B=40, seed=3))


def test_certify_components_are_consistent(data):
    train, val, q = data
    res = certify(train, val, CFG, q)
    c = res.certificate
    grid = make_grid(val)
    assert c.t_hat == select_threshold(empirical_risk_curve(train, CFG.costs, grid), CFG.selector)
    assert c.val_risk == empirical_risk(val, CFG.costs, c.t_hat)
    assert c.g_boot == eval_band(res.band, res.summary.radius)
    assert c.base_bound == c.val_risk + c.gamma_val + c.shift_term
    assert c.augmented_bound == c.base_bound + c.g_boot
    assert c.external_risk_observed == empirical_risk(q, CFG.costs, c.t_hat)
    assert c.mode == "PQ" and 0.0 <= c.flip_rate <= 1.0
    assert math.fsum(x.percent for x in c.contributions) == pytest.approx(100.0)
    assert res.instability is not None and res.instability.values.max() <= 1.0
    assert res.provenance["flip_rate_on"] == "external"


def test_frozen_mode_drops_shift_but_reports_external(data):
    train, val, q = data
    pq = certify(train, val, CFG, q).certificate
    frozen = certify(train, val, CFG, q, frozen=True).certificate
    assert frozen.mode == "P-frozen" and frozen.shift_term == 0.0
    assert frozen.external_risk_observed == pq.external_risk_observed
    assert frozen.augmented_bound == pytest.approx(pq.augmented_bound - pq.shift_term, abs=1e-15)


def test_certify_is_deterministic_and_thread_free(data):
    train, val, q = data
    a = certify(train, val, CFG, q).report()
    b = certify(train, val, PipelineConfig(boot=BootstrapConfig(B=40, seed=3, n_jobs=3)), q).report()
    assert a == b


def test_validation_only_run_and_selector_choice(data):
    train, val, _ = data
    cfg = PipelineConfig(boot=BootstrapConfig(B=20), selector=SelectorKind("youden"))
    res = certify(train, val, cfg)
    c = res.certificate
    assert c.mode == "P-frozen" and c.holds is None
    rep = res.report()
    assert rep["selector"] == "youden" and rep["bootstrap"]["B"] == 20


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        PipelineConfig(delta_band=0.0)
    one_class = ScoreSet([1, 1], [0.1, 0.2])
    with pytest.raises(ValueError):
        certify(one_class, one_class)
