import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from hfs_lab.exceptions import ConfigurationError, DegenerateMetricError
from hfs_lab.factor_world import CorrelationSpec, FactorSpec, FactorWorld
from hfs_lab.metrics import (EvalConfig, GradientBoostedTreeProbe, L1LinearProbe, MetricReport,
                             betavae_score, dci, discretize, evaluate_all, factorvae_score,
                             fit_probe, mi_matrix, mig, mig_from_matrix, modularity,
                             mutual_information, nrmse, sap)

nonneg = hnp.arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(2, 6)),
                    elements=st.floats(0, 10, allow_subnormal=False))


def identity_world(cards=(4, 5, 3, 6)):
    spec = FactorSpec(cards)
    return FactorWorld(spec, observation_dim=len(cards), mixing_depth=0, noise_scale=0.0,
                       identity=True)


def grid_data(cards=(6, 5, 4), repeats=20, seed=0):
    spec = FactorSpec(cards)
    g = np.tile(spec.grid(), (repeats, 1))
    return spec, g[np.random.default_rng(seed).permutation(len(g))]


# ------------------------------------------------------------------- DCI

def test_dci_hand_cases():
    assert dci(np.eye(4)).disentanglement == 1.0
    assert dci(np.ones((2, 2))).disentanglement == 0.0
    assert abs(dci(np.ones((3, 5))).disentanglement) < 1e-15
    assert dci(np.array([[1.0, 0.0], [0.5, 0.5]])).disentanglement == 0.5


def test_dci_zero_mass_rows_and_errors():
    R = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]])
    res = dci(R, errors=np.array([0.2, 0.4]))
    assert res.disentanglement == 1.0 and res.completeness == 1.0
    assert res.informativeness == pytest.approx(0.7)
    with pytest.raises(DegenerateMetricError):
        dci(np.zeros((3, 3)))
    with pytest.raises(ConfigurationError):
        dci(-np.eye(2))


@settings(max_examples=60, deadline=None)
@given(nonneg, st.randoms(use_true_random=False), st.floats(0.01, 100))
def test_dci_invariances(R, random, c):
    if R.sum() <= 0:
        return
    base = dci(R)
    rows, cols = list(range(R.shape[0])), list(range(R.shape[1]))
    random.shuffle(rows)
    random.shuffle(cols)
    for other in (dci(R[rows]), dci(R[:, cols]), dci(R * c)):
        assert other.disentanglement == pytest.approx(base.disentanglement, abs=1e-12)
        assert other.completeness == pytest.approx(base.completeness, abs=1e-12)
    assert -1e-12 <= base.disentanglement <= 1 + 1e-12


def test_nrmse_perfect_and_mean_prediction(rng):
    y = rng.uniform(size=(500, 2))
    np.testing.assert_array_equal(nrmse(y, y), 0.0)
    np.testing.assert_allclose(nrmse(y, np.broadcast_to(y.mean(0), y.shape)), 1.0)


# ---------------------------------------------------------------- probes

def test_tree_probe_identity_is_diagonal():
    spec, f = grid_data()
    y = spec.normalize(f)
    probe = fit_probe(y, y, "tree-ensemble")
    R = probe.gain_importances_
    assert (R.sum() - np.trace(R)) < 0.05 * R.sum()
    assert np.all(nrmse(y, probe.predict(y)) < 0.1)


def test_tree_probe_on_noise_is_chance(rng):
    spec, f = grid_data(repeats=20)
    y = spec.normalize(f)
    Z = rng.normal(size=(len(y), 3))
    probe = fit_probe(Z[:1500], y[:1500], "tree-ensemble", {"n_estimators": 30})
    errors = nrmse(y[1500:], probe.predict(Z[1500:]))
    assert np.all(errors > 0.95)


def test_duplicate_dimension_splits_importance(rng):
    spec, f = grid_data()
    y = spec.normalize(f)
    Z = np.column_stack([y[:, 0], y[:, 0], rng.normal(size=len(y))])
    R = fit_probe(Z, y[:, :1], "tree-ensemble").feature_importances_[:, 0]
    assert R[0] > 0.2 and R[1] > 0.2 and R[2] < 0.05


def test_constant_factor_is_degenerate(rng):
    Z = rng.normal(size=(200, 3))
    Y = np.column_stack([Z[:, 0], np.full(200, 0.5)])
    for kind in ("tree-ensemble", "l1-linear"):
        probe = fit_probe(Z, Y, kind)
        assert list(probe.degenerate_) == [False, True]
        np.testing.assert_array_equal(probe.feature_importances_[:, 1], 0.0)
        assert probe.feature_importances_[:, 0].sum() == pytest.approx(1.0)


def test_probe_determinism_and_params(rng):
    Z, Y = rng.normal(size=(300, 3)), rng.uniform(size=(300, 2))
    a = fit_probe(Z, Y, "tree-ensemble", {"n_estimators": 10}).feature_importances_
    b = fit_probe(Z, Y, "tree-ensemble", {"n_estimators": 10}).feature_importances_
    assert a.tobytes() == b.tobytes()
    assert GradientBoostedTreeProbe(max_depth=2).get_params()["max_depth"] == 2
    assert L1LinearProbe(alpha=0.1).get_params()["alpha"] == 0.1


def test_l1_probe_identity(rng):
    spec, f = grid_data()
    y = spec.normalize(f)
    R = fit_probe(y, y, "l1-linear", {"alpha": 0.001}).feature_importances_
    assert dci(R).disentanglement > 0.95


def test_probe_needs_enough_rows(rng):
    with pytest.raises(ConfigurationError):
        fit_probe(rng.normal(size=(50, 2)), rng.normal(size=(50, 2)))
    with pytest.raises(ConfigurationError):
        fit_probe(rng.normal(size=(150, 2)), rng.normal(size=(150, 2)), "forest")


# ------------------------------------------------------- information / MIG

def test_mi_symmetry_and_independence_bias(rng):
    x = discretize(rng.normal(size=10_000))[:, 0]
    y = rng.integers(0, 8, size=10_000)
    assert abs(mutual_information(x, y) - mutual_information(y, x)) <= 1e-12
    assert mutual_information(x, y) <= 0.05


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_mi_bounded_by_entropies(seed):
    r = np.random.default_rng(seed)
    x, y = r.integers(0, 5, 300), r.integers(0, 3, 300)
    y = np.where(r.uniform(size=300) < 0.5, x % 3, y)
    from hfs_lab.metrics.information import entropy
    assert mutual_information(x, y) <= min(entropy(x), entropy(y)) + 1e-12


def test_discretize_equal_frequency(rng):
    codes = discretize(rng.normal(size=(10_000, 2)), 20)
    counts = np.bincount(codes[:, 0])
    assert len(counts) == 20 and counts.min() >= 490
    const = discretize(np.ones((100, 1)))
    assert len(np.unique(const)) == 1


def test_mig_bijection_is_one():
    spec, f = grid_data(repeats=100)
    Z = np.column_stack([np.exp(f[:, 0]), -f[:, 1], f[:, 2] ** 3]).astype(float)
    assert mig(Z, f, 20, len(Z)).score > 0.99


def test_mig_independent_is_near_zero(rng):
    spec, f = grid_data(repeats=100)
    assert mig(rng.normal(size=(len(f), 3)), f, 20, 10_000).score < 0.05


def test_mig_identical_dims_gap_zero():
    spec, f = grid_data(repeats=50)
    Z = np.column_stack([f[:, 0], f[:, 0], f[:, 1], f[:, 2]]).astype(float)
    assert mig(Z, f, 20, 5000).per_factor[0] == pytest.approx(0.0, abs=1e-12)


def test_mig_excludes_zero_entropy_factor():
    m = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.warns(UserWarning, match="zero-entropy"):
        res = mig_from_matrix(m, np.array([1.0, 0.0]))
    assert res.score == 1.0


def test_mig_rejects_oversampling(rng):
    with pytest.raises(ConfigurationError):
        mig(rng.normal(size=(100, 2)), rng.integers(0, 3, (100, 2)), n_samples=200)


# ------------------------------------------------------------ modularity

def test_modularity_cases():
    assert modularity(np.eye(3)) == 1.0
    assert modularity(np.array([[1.0, 1.0, 0.0]])) == 0.5
    assert modularity(np.zeros((2, 3))) == 1.0


@settings(max_examples=60, deadline=None)
@given(nonneg)
def test_modularity_in_unit_interval(m):
    assert 0.0 <= modularity(m) <= 1.0


# ------------------------------------------------------------------- SAP

def test_sap_cases(rng):
    spec, f = grid_data(repeats=10)
    y = spec.normalize(f)
    score, matrix = sap(y, y)
    assert score > 0.99
    same = np.repeat(y[:, :1], 3, axis=1)
    assert sap(same, y)[0] == 0.0
    assert 0.0 <= sap(rng.normal(size=(300, 4)), rng.uniform(size=(300, 2)))[0] <= 1.0


# ------------------------------------------------------ intervention scores

def test_vote_scores_identity_and_constant():
    world = identity_world()
    none = CorrelationSpec()
    ident = lambda x: x[:, :4] + 0.0
    assert betavae_score(world, none, ident, 1000, 500, 32, seed=0) > 0.95
    assert factorvae_score(world, none, ident, 1000, 500, 32, seed=0, n_variance=2000) > 0.95
    const = lambda x: np.zeros((len(x), 3))
    for score in (betavae_score(world, none, const, 1000, 1000, 16, seed=1),
                  factorvae_score(world, none, const, 1000, 1000, 16, seed=1, n_variance=500)):
        assert abs(score - 0.25) < 0.06


def test_vote_scores_need_two_factors():
    world = FactorWorld(FactorSpec((4, 3)), observation_dim=2, mixing_depth=0, identity=True)
    world.spec = FactorSpec.__new__(FactorSpec)
    object.__setattr__(world.spec, "cardinalities", (4,))
    object.__setattr__(world.spec, "names", ("a",))
    with pytest.raises(ConfigurationError):
        betavae_score(world, CorrelationSpec(), lambda x: x, 10, 10)


# ------------------------------------------------------------- evaluate_all

def test_evaluate_all_gold_null_and_determinism():
    world = identity_world((5, 5, 4))
    cfg = EvalConfig(n_train=2000, n_test=1000, mig_samples=2000, hfs_batches=5,
                     probe_params={"n_estimators": 40})
    gold = evaluate_all(lambda x: x[:, :3], world, CorrelationSpec(), cfg, seed=3)
    assert gold.scores["dci_d"] > 0.95 and gold.scores["mig"] > 0.9
    assert gold.scores["modularity"] > 0.95
    noise = lambda x: np.random.default_rng(len(x)).normal(size=(len(x), 3))
    null = evaluate_all(noise, world, CorrelationSpec(), cfg, seed=3)
    assert null.scores["dci_d"] < 0.1
    again = evaluate_all(lambda x: x[:, :3], world, CorrelationSpec(), cfg, seed=3)
    assert again.to_json() == gold.to_json()


def test_report_round_trip():
    rep = MetricReport({"dci_d": np.float64(0.5), "mig": 0.2}, np.eye(2), np.eye(2), np.ones(2),
                       np.zeros(2))
    back = MetricReport.from_dict(rep.to_dict())
    assert back.to_json() == rep.to_json()
    assert rep.csv_row(seed=1) == {"seed": 1, "dci_d": "0.5", "mig": "0.2"}


def test_eval_config_rejects_unknown_metric():
    with pytest.raises(ConfigurationError):
        EvalConfig(metrics=("dci", "irs"))
