"""Annual growth regression on a synthetic subnational panel.

Builds a region-year panel with a concave temperature-growth relation, fits
the within estimator with region and year effects plus region trends, and
reads off the marginal effect curve and the growth-maximizing temperature.

    python3 demos/01_growth_regression.py
"""

import numpy as np
import pandas as pd

from climgrowth import (
    RegressionSpec,
    VcovSpec,
    fit,
    growth_rates,
    marginal_effect,
    optimal_level,
    weather_terms,
)

rng = np.random.default_rng(1)

# 600 regions in 60 countries, 1990-2015
R, years = 600, np.arange(1990, 2016)
reg = np.repeat(np.arange(R), years.size)
yr = np.tile(years, R)
T = rng.uniform(-2, 28, R)[reg] + 0.03 * (yr - 1990) + rng.normal(0, 0.6, reg.size)
g = 0.01 + 0.022 * T - 0.0008 * T**2 + rng.normal(0, 0.03, reg.size)
lny = 8 + pd.Series(g).groupby(reg).cumsum().to_numpy()
raw = pd.DataFrame({"region_id": reg, "country_id": reg // 10, "year": yr, "T": T, "gdppc": np.exp(lny)})

# growth rates and weather terms; the first year of each region drops out
panel = weather_terms(growth_rates(raw), "contemporaneous", variables=("T",))
print(panel[["region_id", "year", "d_g", "T", "d_T2", "d_dT"]].dropna().head(), "\n")

spec = RegressionSpec(
    response="d_g",
    regressors=("d_dT", "d_dT_T", "T", "d_T2"),
    fe=("region_id", "year", "region_id:trend"),
    weight_scheme="region",
    vcov=VcovSpec("cluster", ("country_id",)),
)
res = fit(panel, spec)
print(res.coef_table().round(5), "\n")
print(f"{res.nobs} rows, {res.df_absorbed} absorbed parameters ({res.df_method}), "
      f"{res.absorb_iterations} sweeps")

# marginal effect of one more degree on growth, with 90% bands
curve = marginal_effect(res, "growth", at=np.arange(0, 31, 5))
print(curve.to_frame().round(4).to_string(index=False), "\n")

opt = optimal_level(res)
print(f"growth-maximizing temperature: {opt.value:.2f} C (se {opt.se:.2f}); true value 13.75 C")
