import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from climgrowth.diagnostics import (
    TestReport,
    balanced_subpanel,
    compare_series,
    cross_database_fit,
    harris_tzavalis,
    ht_moments,
    lm_serial,
    rejection_rate,
)
from climgrowth.estimator import RegressionSpec, fit
from climgrowth.inference import VcovSpec


def long_frame(Y, value="v"):
    N, T = Y.shape
    return pd.DataFrame({"region_id": np.repeat(np.arange(N), T), "year": np.tile(np.arange(1990, 1990 + T), N),
                         value: Y.ravel()})


# --------------------------------------------------------------------------
# Harris-Tzavalis


def test_ht_constant_series_is_degenerate():
    with pytest.raises(ValueError, match="no variation"):
        harris_tzavalis(np.full((20, 10), 3.0))


def test_ht_perfect_persistence_without_means():
    Y = np.repeat(np.arange(1.0, 21.0)[:, None], 10, axis=1)
    rep = harris_tzavalis(Y, demean=False)
    assert rep.details["rho"] == 1.0
    assert rep.statistic == 0.0


def test_ht_short_panel_raises():
    with pytest.raises(ValueError, match="4 periods"):
        harris_tzavalis(np.random.default_rng(0).normal(size=(20, 3)))
    with pytest.raises(ValueError):
        harris_tzavalis(np.ones((20, 6)), trend=True, demean=False)


def test_ht_long_frame_matches_array():
    Y = np.random.default_rng(1).normal(size=(30, 8)).cumsum(axis=1)
    a = harris_tzavalis(Y)
    b = harris_tzavalis(long_frame(Y), "v")
    assert a.statistic == pytest.approx(b.statistic, abs=1e-12)


@pytest.mark.parametrize("case, degree", [("fe", 0), ("trend", 1)])
def test_ht_null_mean_by_simulation(case, degree):
    # pooled rho over many entities concentrates on the fixed-T null mean
    rng = np.random.default_rng(2)
    N, T = 20000, 6
    Y = rng.normal(size=(N, T + 1)).cumsum(axis=1)
    rep = harris_tzavalis(Y, trend=(case == "trend"))
    mean, var = ht_moments(T, case)
    assert abs(rep.details["rho"] - mean) < 4 * np.sqrt(var / N)


def test_ht_rejects_iid_noise():
    rep = harris_tzavalis(np.random.default_rng(3).normal(size=(200, 12)))
    assert rep.reject()
    assert rep.details["T"] == 11


def test_balanced_subpanel_picks_largest_block():
    Y = np.arange(60, dtype=float).reshape(6, 10)
    df = long_frame(Y)
    # entity 0 misses 1999; entity 5 misses 1990-1992
    df = df[~((df.region_id == 0) & (df.year == 1999)) & ~((df.region_id == 5) & (df.year < 1993))]
    block = balanced_subpanel(df, "v")
    # candidates: 6 x 6 (1993-98), 5 x 7 (1993-99), 4 x 10, 5 x 9 (1990-98, entity 5 dropped)
    assert block.shape == (5, 9)
    assert list(block.index) == [0, 1, 2, 3, 4]
    assert block.notna().all(axis=None)


def test_ht_moment_cases():
    assert ht_moments(10, "none") == (1.0, 2.0 / 90)
    assert ht_moments(10, "fe")[0] == pytest.approx(1 - 3 / 11)
    with pytest.raises(ValueError):
        ht_moments(10, "other")


# --------------------------------------------------------------------------
# LM serial correlation


def resid_frame(rng, N=200, T=10, rho=0.0):
    e = np.zeros((N, T))
    for t in range(T):
        e[:, t] = rho * (e[:, t - 1] if t else 0) + rng.normal(size=N)
    e = e - e.mean(axis=1, keepdims=True)
    return long_frame(e, "resid")


def test_lm_order_too_large():
    frame = resid_frame(np.random.default_rng(4), T=6)
    with pytest.raises(ValueError, match="too large"):
        lm_serial(frame, order=5)
    with pytest.raises(ValueError):
        lm_serial(frame, order=0)


def test_lm_scale_invariance():
    frame = resid_frame(np.random.default_rng(5))
    a = lm_serial(frame, order=2)
    b = lm_serial(frame.assign(resid=frame["resid"] * 7.5), order=2)
    assert a.statistic == pytest.approx(b.statistic, abs=1e-12)


def test_lm_detects_ar1():
    assert lm_serial(resid_frame(np.random.default_rng(6), N=500, rho=0.4)).reject()


def test_lm_from_fit_uses_trend_degree():
    rng = np.random.default_rng(7)
    N, T = 40, 8
    df = long_frame(rng.normal(size=(N, T)), "y").assign(x=rng.normal(size=N * T), country_id=0)
    spec = RegressionSpec("y", ("x",), fe=("region_id:trend",), vcov=VcovSpec("robust"))
    res = fit(df, spec)
    rep = lm_serial(res)
    assert rep.options["degree"] == 1
    frame = res.sample[["region_id", "year"]].assign(resid=res.resid)
    assert lm_serial(frame, degree=1).statistic == pytest.approx(rep.statistic, abs=1e-12)


# --------------------------------------------------------------------------
# dataset comparison


def brute_ranks(v):
    out = np.empty(len(v))
    for i, x in enumerate(v):
        out[i] = np.sum(v < x) + (np.sum(v == x) + 1) / 2
    return out


def brute_corr(a, b):
    a, b = a - a.mean(), b - b.mean()
    return float(np.sum(a * b) / np.sqrt(np.sum(a * a) * np.sum(b * b)))


def test_compare_identical_and_negated():
    a = np.array([0.3, 1.2, -0.5, 2.2, 0.9])
    same = compare_series(a, a)
    assert same["t"] == 0.0
    assert same["pearson"] == pytest.approx(1.0) and same["spearman"] == pytest.approx(1.0)
    neg = compare_series(a, -a)
    assert neg["pearson"] == pytest.approx(-1.0) and neg["spearman"] == pytest.approx(-1.0)


def test_compare_against_brute_force():
    rng = np.random.default_rng(8)
    a = np.round(rng.normal(size=40), 1)  # rounding creates ties
    b = np.round(a + rng.normal(size=40), 1)
    out = compare_series(a, b)
    d = a - b
    t = d.mean() / (d.std(ddof=1) / np.sqrt(len(d)))
    assert out["t"] == pytest.approx(t, abs=1e-12)
    assert out["t_pvalue"] == pytest.approx(2 * stats.t.sf(abs(t), len(d) - 1), abs=1e-12)
    assert out["pearson"] == pytest.approx(brute_corr(a, b), abs=1e-12)
    assert out["spearman"] == pytest.approx(brute_corr(brute_ranks(a), brute_ranks(b)), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=30,
                unique_by=lambda p: p[0]))
def test_spearman_monotone_invariance(pairs):
    a = np.array([p[0] for p in pairs]) / 10
    b = np.array([p[1] for p in pairs], dtype=float)
    if np.ptp(b) == 0:
        return
    base = compare_series(a, b)["spearman"]
    assert compare_series(np.exp(a), b)["spearman"] == pytest.approx(base, abs=1e-12)


def test_compare_errors():
    with pytest.raises(ValueError):
        compare_series([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        compare_series([1.0, 2.0, 3.0], [1.0, 2.0])


def test_cross_database_fit_slope():
    rng = np.random.default_rng(9)
    df = long_frame(rng.normal(size=(20, 6)), "a").assign(country_id=lambda d: d.region_id // 2)
    df["b"] = 0.8 * df["a"] + 0.01 * rng.normal(size=len(df))
    res = cross_database_fit(df, "b", "a")
    assert res.params["a"] == pytest.approx(0.8, abs=0.01)


# --------------------------------------------------------------------------
# reports and the simulation harness


def test_report_json_and_validation():
    rep = TestReport("x", 1.5, 0.2, "null", {"k": 1})
    assert json.loads(rep.to_json())["statistic"] == 1.5
    assert not rep.reject()
    with pytest.raises(ValueError):
        TestReport("x", 0.0, 1.5, "null")


def test_rejection_rate_reproducible():
    def sim(rng):
        return rng.normal(size=30)

    def test(x):
        z = x.mean() * np.sqrt(len(x))
        return TestReport("z", z, float(2 * stats.norm.sf(abs(z))), "mean 0")

    a = rejection_rate(sim, test, 50, seed=3)
    b = rejection_rate(sim, test, 50, seed=3)
    assert a == b
    assert 0.0 <= a["rate"] <= 0.2
