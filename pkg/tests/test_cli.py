import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from climgrowth.cli import main
from climgrowth.estimator import standard_spec
from climgrowth.project import aggregate, baseline_climate, DamageFunction, project_region, read_scenarios

DATA = Path(__file__).parent / "data"


def write_config(path: Path, cfg: dict) -> str:
    path.write_text(json.dumps(cfg))
    return str(path)


def run(stage, tmp_path, cfg, name=None):
    return main([stage, "--config", write_config(tmp_path / f"{name or stage}.json", cfg)])


ESTIMATE_SPEC = {"response": "y", "regressors": ["x1", "x2"], "fe": ["region_id", "year"],
                 "vcov": {"kind": "classical"}}


# --------------------------------------------------------------------------
# estimate against the golden file


def test_estimate_matches_golden(tmp_path):
    cfg = {"inputs": {"panel": str(DATA / "fixture_panel.csv")}, "output_dir": str(tmp_path / "out"),
           "spec": ESTIMATE_SPEC}
    assert run("estimate", tmp_path, cfg) == 0
    got = pd.read_csv(tmp_path / "out" / "coefficients.csv").set_index("term")
    want = pd.read_csv(DATA / "golden_coefficients.csv").set_index("term")
    np.testing.assert_allclose(got.loc[want.index, "coef"], want["coef"], atol=1e-10)
    np.testing.assert_allclose(got.loc[want.index, "se"], want["se"], rtol=1e-9)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"coefficients.csv", "vcov.csv", "fit.json"}
    assert manifest["inputs"]["panel"]["sha256"]


def test_rerun_is_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        cfg = {"inputs": {"panel": str(DATA / "fixture_panel.csv")}, "output_dir": str(tmp_path / f"out{k}"),
               "spec": ESTIMATE_SPEC}
        assert run("estimate", tmp_path, cfg) == 0
        outs.append({p.name: p.read_bytes() for p in (tmp_path / f"out{k}").iterdir() if p.name != "manifest.json"})
    assert outs[0] == outs[1]


# --------------------------------------------------------------------------
# exit codes


def test_missing_input_exits_2(tmp_path, capsys):
    cfg = {"inputs": {"panel": str(tmp_path / "nope.csv")}, "output_dir": str(tmp_path / "out")}
    assert run("estimate", tmp_path, cfg) == 2
    assert "file not found" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_invalid_configs_exit_2(tmp_path):
    assert main(["estimate"]) == 2
    assert main(["estimate", "--config", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["estimate", "--config", str(tmp_path / "bad.json")]) == 2
    base = {"inputs": {"panel": str(DATA / "fixture_panel.csv")}, "output_dir": str(tmp_path / "o")}
    assert run("estimate", tmp_path, {**base, "unexpected": 1}) == 2
    assert run("bootstrap", tmp_path, {**base, "spec": ESTIMATE_SPEC, "B": 5}) == 2  # no seed
    assert main(["no-such-stage"]) == 2


def test_runtime_failure_exits_1(tmp_path, capsys):
    spec = {**ESTIMATE_SPEC, "regressors": ["x1", "missing_column"]}
    cfg = {"inputs": {"panel": str(DATA / "fixture_panel.csv")}, "output_dir": str(tmp_path / "out"), "spec": spec}
    assert run("estimate", tmp_path, cfg) == 1
    assert "missing_column" in capsys.readouterr().err
    assert not (tmp_path / "out" / "coefficients.csv").exists()


def test_empty_grid_is_a_config_error(tmp_path):
    est = {"inputs": {"panel": str(DATA / "fixture_panel.csv")}, "output_dir": str(tmp_path / "est"),
           "spec": ESTIMATE_SPEC}
    assert run("estimate", tmp_path, est) == 0
    cfg = {"inputs": {"fit": str(tmp_path / "est" / "fit.json")}, "output_dir": str(tmp_path / "m"),
           "grid": {"start": 5, "stop": 0, "step": 1}, "variable": "x1"}
    assert run("margins", tmp_path, cfg) == 2


def test_plot_data_without_upstream(tmp_path):
    assert run("plot-data", tmp_path, {"inputs": {}, "output_dir": str(tmp_path / "p")}) == 2


def test_environment_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("CLIMGROWTH_INPUT_PANEL", str(DATA / "fixture_panel.csv"))
    monkeypatch.setenv("CLIMGROWTH_OUTPUT_DIR", str(tmp_path / "env_out"))
    cfg = {"inputs": {"panel": "ignored.csv"}, "output_dir": "ignored", "spec": ESTIMATE_SPEC}
    assert run("estimate", tmp_path, cfg) == 0
    assert (tmp_path / "env_out" / "coefficients.csv").exists()


# --------------------------------------------------------------------------
# full pipeline on synthetic data


def region_year(rng, n_regions=40, per_country=5, years=range(1990, 2016)):
    years = np.asarray(list(years))
    reg = np.repeat(np.arange(n_regions), years.size)
    yr = np.tile(years, n_regions)
    T = rng.uniform(0, 28, n_regions)[reg] + 0.02 * (yr - 1990) + rng.normal(0, 0.5, reg.size)
    P = np.abs(rng.uniform(0.3, 2.0, n_regions)[reg] + rng.normal(0, 0.1, reg.size))
    g = 0.02 + 0.02 * T - 0.0008 * T**2 + rng.normal(0, 0.02, reg.size)
    lny = 8 + pd.Series(g).groupby(reg).cumsum().to_numpy()
    return pd.DataFrame({"region_id": reg, "country_id": reg // per_country, "year": yr, "T": T, "P": P,
                         "gdppc": np.exp(lny), "pop": rng.uniform(1e4, 1e6, n_regions)[reg]})


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    rng = np.random.default_rng(70)
    ry = region_year(rng)
    ry.to_csv(tmp / "region_year.csv", index=False)
    codes = {}
    codes["build"] = run("build-panel", tmp, {"inputs": {"region_year": "region_year.csv"}, "output_dir": "panel",
                                              "period_years": [10], "lag_form": "contemporaneous"})
    codes["estimate"] = run("estimate", tmp, {"inputs": {"panel": "panel/panel_annual.csv"}, "output_dir": "est",
                                              "model": "annual"})
    codes["margins"] = run("margins", tmp, {"inputs": {"fit": "est/fit.json"}, "output_dir": "margins",
                                            "grid": {"start": 0, "stop": 30, "step": 1}})
    annual = standard_spec("annual", trend=0).to_dict()
    ld = standard_spec("long_difference", trend=0, variables=("T",)).to_dict()
    codes["boot_fe"] = run("bootstrap", tmp, {"inputs": {"panel": "panel/panel_annual.csv"}, "output_dir": "boot_fe",
                                              "spec": annual, "B": 8, "seed": 5}, "boot_fe")
    codes["boot_fe2"] = run("bootstrap", tmp, {"inputs": {"panel": "panel/panel_annual.csv"},
                                               "output_dir": "boot_fe2", "spec": annual, "B": 8, "seed": 5,
                                               "threads": 2}, "boot_fe2")
    codes["boot_ld"] = run("bootstrap", tmp, {"inputs": {"panel": "panel/panel_ld10.csv"}, "output_dir": "boot_ld",
                                              "spec": ld, "B": 8, "seed": 5}, "boot_ld")
    codes["adaptation"] = run("adaptation", tmp, {"inputs": {"fe_replicates": "boot_fe/replicates.csv",
                                                             "ld_replicates": "boot_ld/replicates.csv"},
                                                  "output_dir": "adapt", "grid": {"start": 20, "stop": 30, "step": 5}})
    hist = ry[ry.year >= 2015][["region_id", "year", "T"]].copy()
    extra = hist[hist.year == 2015].copy()
    for y in range(2016, 2020):
        hist = pd.concat([hist, extra.assign(year=y)])
    hist.to_csv(tmp / "history.csv", index=False)
    base = hist.groupby("region_id")["T"].mean()
    years = np.arange(2020, 2101)
    scen = pd.concat([pd.DataFrame({"scenario_id": sid, "region_id": r, "year": years,
                                    "T": base[r] + rate * (years - 2019)})
                      for sid, rate in (("ssp2", 0.02), ("ssp5", 0.05)) for r in base.index])
    scen.to_csv(tmp / "scenarios.csv", index=False)
    socio = pd.DataFrame({"region_id": np.repeat(base.index, 2), "year": np.tile([2020, 2100], len(base)),
                          "population": np.tile([1.0, 2.0], len(base)) * np.repeat(np.arange(1, len(base) + 1), 2)})
    socio.to_csv(tmp / "socio.csv", index=False)
    pd.DataFrame({"region_id": base.index, "group": np.where(base.index < 20, "A", "B")}).to_csv(
        tmp / "groups.csv", index=False)
    codes["project"] = run("project", tmp, {"inputs": {"replicates": "boot_fe/replicates.csv",
                                                       "scenarios": "scenarios.csv", "history": "history.csv",
                                                       "socioeconomic": "socio.csv", "groups": "groups.csv"},
                                            "output_dir": "proj", "n": 30, "seed": 9})
    codes["plot"] = run("plot-data", tmp, {"inputs": {"margins": "margins/margins.csv",
                                                      "group_paths": "proj/group_paths.csv",
                                                      "panel": "panel/panel_annual.csv"},
                                           "output_dir": "plots"})
    codes["diagnose"] = run("diagnose", tmp, {"inputs": {"panel": "panel/panel_annual.csv"}, "output_dir": "diag",
                                              "seed": 7, "tests": [{"test": "harris_tzavalis", "variable": "T"}],
                                              "simulate": [{"test": "harris_tzavalis", "dgp": "random_walk",
                                                            "N": 50, "T": 10, "n_sims": 20}]})
    return tmp, codes


def test_pipeline_exit_codes(pipeline):
    _, codes = pipeline
    assert codes == {k: 0 for k in codes}


def test_pipeline_outputs(pipeline):
    tmp, _ = pipeline
    panel = pd.read_csv(tmp / "panel" / "panel_annual.csv")
    assert {"d_g", "d_dT", "d_T2", "bin_t_11"} <= set(panel.columns)
    meta = json.loads((tmp / "panel" / "panel_meta.json").read_text())
    assert meta["periods"]["10"]["rows"] == len(pd.read_csv(tmp / "panel" / "panel_ld10.csv"))
    margins = pd.read_csv(tmp / "margins" / "margins.csv")
    assert np.all(np.diff(margins["level"]) > 0) and len(margins) == 31
    opt = json.loads((tmp / "margins" / "optimum.json").read_text())
    assert opt["concave"] and 5 < opt["value"] < 20
    diag = json.loads((tmp / "diag" / "diagnostics.json").read_text())
    assert diag["tests"][0]["name"] == "harris_tzavalis" and diag["simulations"][0]["n_sims"] == 20


def test_pipeline_bootstrap_parallel_identical(pipeline):
    tmp, _ = pipeline
    a = (tmp / "boot_fe" / "replicates.csv").read_bytes()
    assert a == (tmp / "boot_fe2" / "replicates.csv").read_bytes()
    summary = json.loads((tmp / "boot_fe" / "bootstrap.json").read_text())
    assert summary["B"] == 8 and summary["n_replicates"] + summary["n_failures"] == 8


def test_pipeline_adaptation(pipeline):
    tmp, _ = pipeline
    tab = pd.read_csv(tmp / "adapt" / "adaptation.csv")
    assert tab["level"].tolist() == [20.0, 25.0, 30.0]
    assert (tab["n_used"] <= 8).all()


def test_plot_data_matches_aggregate(pipeline):
    tmp, _ = pipeline
    paths = pd.read_csv(tmp / "proj" / "group_paths.csv")
    fig = pd.read_csv(tmp / "plots" / "fig_path_global.csv")
    g = paths[paths.group == "global"].reset_index(drop=True)
    pd.testing.assert_frame_equal(fig, g[["year", "mean", "sd", "p10", "p90"]])
    # recompute the global 2100 mean from the sampled pairs
    pairs = pd.read_csv(tmp / "proj" / "pairs.csv")
    draws = pd.read_csv(tmp / "boot_fe" / "replicates.csv", index_col="replicate")
    damage = DamageFunction.from_draws(draws)
    scens = read_scenarios(tmp / "scenarios.csv")
    base = baseline_climate(pd.read_csv(tmp / "history.csv"))
    socio = pd.read_csv(tmp / "socio.csv")
    vals = []
    for b, c in pairs[["b", "c"]].to_numpy():
        psi = project_region(damage, b, scens[c], base, start=2020, end=2100).psi
        w = socio[socio.year == 2100].set_index("region_id")["population"]
        vals.append(aggregate(psi, w).loc["global", 2100])
    assert fig["mean"].iloc[-1] == pytest.approx(np.mean(vals), rel=1e-12)
    assert set(p.name for p in (tmp / "plots").iterdir()) >= {"fig_margins.csv", "fig_hist_T.csv",
                                                             "fig_path_A.csv", "fig_path_B.csv"}


# --------------------------------------------------------------------------
# aggregate stage


def test_aggregate_stage(tmp_path):
    square = lambda x0: [[[x0, 0], [x0 + 1, 0], [x0 + 1, 1], [x0, 1], [x0, 0]]]  # noqa: E731
    geo = {"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"region_id": "a", "country_id": "X"},
         "geometry": {"type": "Polygon", "coordinates": square(0)}},
        {"type": "Feature", "properties": {"region_id": "b", "country_id": "X"},
         "geometry": {"type": "Polygon", "coordinates": square(1)}}]}
    (tmp_path / "regions.geojson").write_text(json.dumps(geo))
    rows = []
    for cell, (lon, val) in enumerate([(0.25, 10.0), (0.75, 20.0), (1.5, 5.0)]):
        for m in range(1, 13):
            rows.append((f"c{cell}", lon, 0.5, 1.0, 2000, m, val))
    pd.DataFrame(rows, columns=["cell_id", "lon", "lat", "area_km2", "year", "month", "value"]).to_csv(
        tmp_path / "temp.csv", index=False)
    cfg = {"inputs": {"temperature": "temp.csv", "regions": "regions.geojson"}, "output_dir": "agg"}
    assert run("aggregate", tmp_path, cfg) == 0
    out = pd.read_csv(tmp_path / "agg" / "region_year.csv").set_index("region_id")
    assert out.loc["a", "T"] == pytest.approx(15.0)
    assert out.loc["b", "T"] == pytest.approx(5.0)
