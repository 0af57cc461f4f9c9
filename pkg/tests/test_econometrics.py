import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from timepref.agents import load_population, simulate_frame
from timepref.design import build_cross_period_grid, build_same_period_grid, default_languages
from timepref.econometrics import (
    RankDeficiency,
    SingularCluster,
    clustered_group_means,
    demean,
    ols_fe_cluster,
    render_table,
    spec_ftr_share,
    spec_proper_test,
    spec_topic_ftr,
    table_to_frame,
)

LANGS = default_languages()
CROSS = build_cross_period_grid(LANGS)
SAME = build_same_period_grid(LANGS)


def brute_force_cr1(y, X, clusters):
    """Textbook sandwich with explicit inverses and loops over clusters."""
    n, k = X.shape
    XtX_inv = np.linalg.inv(X.T @ X)
    beta = XtX_inv @ X.T @ y
    e = y - X @ beta
    meat = np.zeros((k, k))
    labels = sorted(set(clusters))
    for g in labels:
        idx = [i for i in range(n) if clusters[i] == g]
        s = sum(X[i] * e[i] for i in idx)
        meat += np.outer(s, s)
    G = len(labels)
    return beta, G / (G - 1) * (n - 1) / (n - k) * XtX_inv @ meat @ XtX_inv


def test_hand_dataset_matches_sandwich():
    x = np.array([1.0, 2.0, 4.0, 3.0, 5.0, 7.0])
    y = np.array([1.2, 1.9, 4.4, 2.7, 5.5, 6.1])
    cl = ["a", "a", "a", "b", "b", "b"]
    fit = ols_fe_cluster(y, x, None, cl, ["x"])
    X = np.column_stack([np.ones(6), x])
    beta, V = brute_force_cr1(y, X, cl)
    assert np.allclose(fit.coef, beta, atol=1e-12)
    assert np.allclose(fit.vcov, V, atol=1e-10, rtol=0)
    assert fit.df_resid == 4 and fit.n_clusters == 2


def test_fe_matches_explicit_dummies():
    rng = np.random.default_rng(0)
    n = 200
    fe = rng.integers(0, 7, n)
    x = rng.normal(size=(n, 2)) + fe[:, None] * 0.3
    y = x @ [0.5, -1.2] + fe * 0.8 + rng.normal(size=n)
    cl = rng.integers(0, 25, n)
    fit = ols_fe_cluster(y, x, fe, cl, ["a", "b"])
    D = (fe[:, None] == np.arange(7)).astype(float)
    full = np.column_stack([x, D])
    beta = np.linalg.lstsq(full, y, rcond=None)[0]
    assert np.allclose(fit.coef, beta[:2], atol=1e-8)
    resid = y - full @ beta
    assert fit.df_resid == n - full.shape[1]
    assert fit.r2 == pytest.approx(1 - resid @ resid / np.sum((y - y.mean()) ** 2), abs=1e-10)
    # when the FE are nested in the clusters, the absorbed and explicit sandwiches coincide
    _, V = brute_force_cr1(y, full, list(fe))
    nested = ols_fe_cluster(y, x, fe, fe, ["a", "b"])
    assert np.allclose(nested.vcov, V[:2, :2], atol=1e-10)


def test_demeaned_group_means_vanish():
    rng = np.random.default_rng(1)
    codes = rng.integers(0, 9, 500)
    vals = rng.normal(size=(500, 3)) * 100 + 7
    out = demean(vals, codes, 9)
    for g in range(9):
        assert np.all(np.abs(out[codes == g].mean(axis=0)) < 1e-12)


def test_singleton_clusters_give_hc1():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(50, 2))
    y = x @ [1.0, 2.0] + rng.normal(size=50) * (1 + np.abs(x[:, 0]))
    fit = ols_fe_cluster(y, x, None, None, ["a", "b"])
    X = np.column_stack([np.ones(50), x])
    inv = np.linalg.inv(X.T @ X)
    e = y - X @ fit.coef
    hc1 = 50 / (50 - 3) * inv @ (X.T * e ** 2) @ X @ inv
    assert np.allclose(fit.vcov, hc1, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_and_relabel_invariance(seed):
    rng = np.random.default_rng(seed)
    n = 120
    fe = rng.integers(0, 5, n)
    cl = rng.integers(0, 12, n)
    x = rng.normal(size=n)
    y = 2 * x + fe + rng.normal(size=n)
    base = ols_fe_cluster(y, x, fe, cl, ["x"])
    perm = rng.permutation(n)
    relabel = rng.permutation(12)
    other = ols_fe_cluster(y[perm], x[perm], fe[perm], relabel[cl[perm]] + 100, ["x"])
    assert np.allclose(base.coef, other.coef, atol=1e-10)
    assert np.allclose(base.vcov, other.vcov, rtol=1e-8, atol=1e-14)
    assert np.all(np.linalg.eigvalsh(base.vcov) >= -1e-14)


def test_constant_outcome():
    x = np.arange(10.0)
    fit = ols_fe_cluster(np.full(10, 3.0), x, np.arange(10) % 2, np.arange(10) % 5, ["x"])
    assert np.allclose(fit.coef, 0) and fit.r2 == 0


def test_errors():
    x = np.tile([0.0, 1.0], 10)
    with pytest.raises(RankDeficiency):
        ols_fe_cluster(np.arange(20.0), x, x, np.arange(20) % 4, ["x"])
    with pytest.raises(SingularCluster):
        ols_fe_cluster(np.arange(20.0), np.arange(20.0) ** 2, None, np.zeros(20), ["x"])


def test_clustered_group_means_match_dummy_regression():
    rng = np.random.default_rng(3)
    groups = rng.integers(0, 4, 300)
    cl = rng.integers(0, 30, 300)
    v = rng.normal(size=300) + groups
    got = clustered_group_means(v, groups, cl)
    D = (groups[:, None] == np.arange(4)).astype(float)
    beta, V = brute_force_cr1(v, D, list(cl))
    assert np.allclose(got["mean"], beta)
    assert np.allclose(got["se"], np.sqrt(np.diag(V)))


@pytest.fixture(scope="module")
def lexi_frame():
    return simulate_frame(load_population("lexicographic"), CROSS, 100, 17)


def test_ftr_share_lexicographic(lexi_frame):
    table = spec_ftr_share(lexi_frame)
    assert [f.df_resid for _, f in table.columns] == [138598, 138590, 138536]
    assert all(f.n_obs == 138600 for _, f in table.columns)
    for _, f in table.columns:
        coef, se = f["Strong FTR"]
        assert -0.045 < coef < -0.015 and coef / se < -2.58
    text = render_table(table)
    assert "138,600" in text and "(df = 138536)" in text and "***" in text
    assert len(table_to_frame(table)) == 4


def test_ftr_share_null():
    pop = load_population({"agents": {"default": {"kind": "lexicographic", "later_share": 0.23}}})
    frame = simulate_frame(pop, CROSS, 100, 4)
    coef, se = spec_ftr_share(frame).columns[2][1]["Strong FTR"]
    assert abs(coef) < 2 * se


def test_proper_test_patterns(lexi_frame):
    rum = simulate_frame(load_population("reference_exponential"), CROSS, 100, 8)
    rum_table = spec_proper_test(rum)
    assert [f.df_resid for _, f in rum_table.columns] == [138598, 138577, 138401]
    for _, f in rum_table.columns:
        coef, se = f[f.names[-1]]
        assert coef > 2 * se
    lex_cross = spec_proper_test(lexi_frame).columns[2][1]
    coef, se = lex_cross[lex_cross.names[-1]]
    assert abs(coef) < 2 * se
    same = simulate_frame(load_population("lexicographic"), SAME, 100, 9)
    same_table = spec_proper_test(same, same_period=True)
    assert [f.df_resid for _, f in same_table.columns] == [107798, 107777, 107645]
    for _, f in same_table.columns:
        coef, se = f[f.names[-1]]
        assert coef > 2.58 * se


def test_topic_spec_shape():
    rng = np.random.default_rng(5)
    base = simulate_frame(load_population("lexicographic"), CROSS, 10, 1)
    k = len(base)
    topics = pd.DataFrame(rng.dirichlet([1, 1, 1], k), columns=["risk", "opp", "urg"])
    topics = topics / topics.mean()
    frame = pd.concat([base, topics], axis=1)
    table = spec_topic_ftr(frame, ["risk", "opp", "urg"], ["Risk", "Opportunity", "Urgency"])
    assert [lab for lab, _ in table.columns] == ["Risk", "Opportunity", "Urgency"]
    assert all(f.df_resid == 13796 and f.n_obs == 13860 for _, f in table.columns)
    for _, f in table.columns:
        coef, se = f["Strong FTR"]
        assert abs(coef) < 3 * se
    assert np.allclose(frame[["risk", "opp", "urg"]].mean(), 1.0, atol=1e-12)
