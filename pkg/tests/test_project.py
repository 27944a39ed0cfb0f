import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from climgrowth.project import (
    ClimateScenario,
    DamageFunction,
    aggregate,
    baseline_climate,
    interpolate_weights,
    project_region,
    read_scenarios,
    run_projection,
    sample_uncertainty,
)

YEARS = np.arange(2020, 2101)


def scenario(paths: dict, years=YEARS, sid="s0"):
    return ClimateScenario(sid, pd.DataFrame(paths, index=years).T)


# --------------------------------------------------------------------------
# baseline


def history(values: dict):
    rows = [(r, 2015 + k, v) for r, vs in values.items() for k, v in enumerate(vs)]
    return pd.DataFrame(rows, columns=["region_id", "year", "T"])


def test_baseline_examples():
    base = baseline_climate(history({"a": [20.0] * 5, "b": [18.0, 19.0, 20.0, 21.0, 22.0]}))
    assert base["a"] == 20.0
    assert base["b"] == pytest.approx(20.0, abs=1e-14)


def test_baseline_matches_brute_mean():
    rng = np.random.default_rng(60)
    vals = {f"r{i}": list(rng.normal(15, 8, 5)) for i in range(20)}
    base = baseline_climate(history(vals))
    for r, v in vals.items():
        assert base[r] == pytest.approx(sum(v) / 5, abs=1e-12)


def test_baseline_missing_year_lists_region():
    h = history({"a": [20.0] * 5, "b": [20.0] * 5})
    with pytest.raises(ValueError, match="'b'"):
        baseline_climate(h[~((h.region_id == "b") & (h.year == 2017))])


# --------------------------------------------------------------------------
# projection


def test_closed_form_quadratic_damage():
    damage = DamageFunction([0.03], [-0.001])  # -0.001 (T - 15)^2 up to a constant
    scen = scenario({"r": 15 + 0.05 * (YEARS - 2019)})
    run = project_region(damage, 0, scen, pd.Series({"r": 15.0}))
    want = -0.001 * 0.0025 * sum(k * k for k in range(1, 82))
    assert want == pytest.approx(-0.4511025, abs=1e-15)
    assert run.psi.loc["r", 2100] == pytest.approx(want, abs=1e-10)
    assert run.psi.loc["r", 2019] == 0.0


def test_zero_warming_gives_zero_path():
    damage = DamageFunction([0.02, 0.01], [-0.0008, -0.0003])
    scen = scenario({"a": np.full(YEARS.size, 12.3), "b": np.full(YEARS.size, 27.1)})
    run = project_region(damage, 1, scen, pd.Series({"a": 12.3, "b": 27.1}))
    assert (run.psi.to_numpy() == 0.0).all()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 35), min_size=3, max_size=30), st.floats(-0.05, 0.05), st.floats(-0.002, 0.002))
def test_psi_additivity(path, b1, b2):
    years = np.arange(2020, 2020 + len(path))
    damage = DamageFunction([b1], [b2])
    run = project_region(damage, 0, scenario({"r": path}, years), pd.Series({"r": 14.0}))
    psi = run.psi.loc["r"].to_numpy()
    phi = damage.growth(0, np.array(path))[0] - damage.growth(0, 14.0)[0]
    np.testing.assert_array_equal(psi[1:], psi[:-1] + phi)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 3), min_size=2, max_size=30), st.floats(-0.002, -1e-5), st.floats(0, 30))
def test_monotone_under_warming_from_optimum(steps, b2, opt):
    b1 = -2 * b2 * opt
    path = opt + np.cumsum(steps)
    years = np.arange(2020, 2020 + len(path))
    run = project_region(DamageFunction([b1], [b2]), 0, scenario({"r": path}, years), pd.Series({"r": opt}))
    assert np.all(np.diff(run.psi.loc["r"].to_numpy()) <= 1e-15)


def test_long_difference_source_is_annualized_and_flagged():
    damage = DamageFunction([0.1, -0.2], [0.0, 0.0], source="long_difference")
    scen = scenario({"r": np.full(3, 2.0)}, years=np.arange(2020, 2023))
    run = project_region(damage, 0, scen, pd.Series({"r": 1.0}))
    phi = 1.2 ** 0.1 - 1.1 ** 0.1
    np.testing.assert_allclose(run.psi.loc["r"].to_numpy(), [0, phi, 2 * phi, 3 * phi], atol=1e-15)
    bad = project_region(damage, 1, scenario({"r": np.full(3, 6.0)}, years=np.arange(2020, 2023)),
                         pd.Series({"r": 1.0}))
    assert bad.flagged and bad.flagged_regions == ("r",)


def test_projection_errors():
    with pytest.raises(ValueError):
        DamageFunction([0.1, 0.2], [0.0])
    with pytest.raises(ValueError):
        ClimateScenario("s", pd.DataFrame([[1.0, 2.0]], columns=[2020, 2022]))
    with pytest.raises(ValueError, match="missing"):
        ClimateScenario("s", pd.DataFrame([[1.0, np.nan]], columns=[2020, 2021]))
    with pytest.raises(KeyError):
        project_region(DamageFunction([0.1], [0.0]), 0, scenario({"r": [1.0, 2.0]}, [2020, 2021]),
                       pd.Series({"q": 1.0}))


# --------------------------------------------------------------------------
# aggregation


def test_aggregate_examples():
    zero = pd.DataFrame(0.0, index=["a", "b"], columns=[2019, 2020])
    assert (aggregate(zero, pd.Series({"a": 1.0, "b": 2.0})).to_numpy() == 0).all()
    one = pd.DataFrame({2020: [0.3]}, index=["a"])
    assert aggregate(one, pd.Series({"a": 7.0})).loc["global", 2020] == pytest.approx(np.expm1(0.3), abs=1e-15)
    two = pd.DataFrame({2020: [0.0, np.log(2)]}, index=["a", "b"])
    assert aggregate(two, pd.Series({"a": 1.0, "b": 3.0})).loc["global", 2020] == pytest.approx(0.75, abs=1e-15)


def test_aggregate_groups_and_missing_weights():
    psi = pd.DataFrame({2020: [0.1, 0.2, -0.1]}, index=["a", "b", "c"])
    groups = pd.Series({"a": "north", "b": "north", "c": "south"})
    with pytest.warns(UserWarning, match="without weights"):
        out = aggregate(psi, pd.Series({"a": 1.0, "c": 2.0}), groups)
    assert out.loc["north", 2020] == pytest.approx(np.expm1(0.1))
    assert out.loc["global", 2020] == pytest.approx((np.expm1(0.1) + 2 * np.expm1(-0.1)) / 3)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 2), st.floats(0.01, 100)), min_size=1, max_size=20))
def test_aggregate_within_bounds(rows):
    psi = pd.DataFrame({2050: [r[0] for r in rows]}, index=range(len(rows)))
    w = pd.Series([r[1] for r in rows], index=range(len(rows)))
    v = aggregate(psi, w).loc["global", 2050]
    lv = np.expm1(psi[2050])
    assert lv.min() - 1e-12 <= v <= lv.max() + 1e-12


def test_time_varying_weights_and_interpolation():
    frame = pd.DataFrame({"region_id": ["a", "a", "b", "b"], "year": [2020, 2030, 2020, 2030],
                          "pop": [1.0, 3.0, 2.0, 2.0]})
    W = interpolate_weights(frame, range(2019, 2032), "pop")
    assert W.loc["a", 2025] == pytest.approx(2.0)
    assert W.loc["a", 2019] == 1.0 and W.loc["a", 2031] == 3.0
    psi = pd.DataFrame({2025: [np.log(2), 0.0]}, index=["a", "b"])
    assert aggregate(psi, W).loc["global", 2025] == pytest.approx(2 / 4)


# --------------------------------------------------------------------------
# uncertainty sampling and the full run


def test_sample_uncertainty_basics():
    assert (sample_uncertainty(1, 1, n=50) == 0).all()
    np.testing.assert_array_equal(sample_uncertainty(7, 3, seed=4), sample_uncertainty(7, 3, seed=4))
    with pytest.raises(ValueError):
        sample_uncertainty(0, 3)


def test_sample_uncertainty_uniform():
    pairs = sample_uncertainty(2, 2, n=100_000, seed=61)
    counts = np.bincount(pairs[:, 0] * 2 + pairs[:, 1], minlength=4)
    chi2 = np.sum((counts - 25_000) ** 2 / 25_000)
    assert chi2 < stats.chi2.ppf(0.99, 3)


def test_run_projection_summary(tmp_path):
    years = np.arange(2015, 2041)
    rows = [("s1", r, y, t0 + 0.04 * max(y - 2019, 0)) for r, t0 in (("a", 10.0), ("b", 25.0)) for y in years]
    rows += [("s2", r, y, t0 + 0.02 * max(y - 2019, 0)) for r, t0 in (("a", 10.0), ("b", 25.0)) for y in years]
    path = tmp_path / "scen.csv"
    pd.DataFrame(rows, columns=["scenario_id", "region_id", "year", "T"]).to_csv(path, index=False)
    scens = read_scenarios(path)
    assert [s.scenario_id for s in scens] == ["s1", "s2"]
    base = pd.Series({"a": 10.0, "b": 25.0})
    damage = DamageFunction([0.02, 0.025, 0.018], [-0.0008, -0.0009, -0.0007])
    out = run_projection(damage, scens, base, pd.Series({"a": 1.0, "b": 1.0}),
                         groups=pd.Series({"a": "cold", "b": "hot"}), n=40, seed=3, end=2040)
    assert out.summary["year"] == 2040 and out.summary["n_pairs"] == 40
    # group means recomputed from the sampled pairs
    vals = []
    for b, c in out.pairs:
        run = project_region(damage, b, scens[c], base, start=2020, end=2040)
        vals.append(aggregate(run.psi, pd.Series({"a": 1.0, "b": 1.0})).loc["global", 2040])
    assert out.summary["groups"]["global"]["mean"] == pytest.approx(np.mean(vals), abs=1e-14)
    assert out.summary["groups"]["hot"]["mean"] < 0 < out.summary["groups"]["cold"]["mean"]
