"""Country-block bootstrap and the adaptation ratio.

Two fits of the same synthetic world: an annual panel and a ten-year
long-difference panel. Both are bootstrapped with the same seed, so replicate
r resamples the same countries in each, and the ratio 1 - tau_LD / tau_FE is
computed draw by draw.

    python3 demos/02_bootstrap_and_adaptation.py
"""

import numpy as np
import pandas as pd

from climgrowth import (
    RegressionSpec,
    VcovSpec,
    adaptation_ratio,
    block_bootstrap,
    growth_rates,
    long_difference,
    period_average,
    weather_terms,
)

rng = np.random.default_rng(2)
R, years = 400, np.arange(1990, 2016)
reg = np.repeat(np.arange(R), years.size)
yr = np.tile(years, R)
T = rng.uniform(0, 28, R)[reg] + rng.uniform(0, 0.06, R)[reg] * (yr - 1990) + rng.normal(0, 0.5, reg.size)
g = 0.01 + 0.02 * T - 0.0008 * T**2 + rng.normal(0, 0.03, reg.size)
lny = 8 + pd.Series(g).groupby(reg).cumsum().to_numpy()
raw = pd.DataFrame({"region_id": reg, "country_id": reg // 8, "year": yr, "T": T, "gdppc": np.exp(lny)})

annual = weather_terms(growth_rates(raw), variables=("T",))
fe_spec = RegressionSpec("d_g", ("d_dT", "d_dT_T", "T", "d_T2"), fe=("region_id", "year"),
                         vcov=VcovSpec("cluster", ("country_id",)))

# decade averages (1990s, 2000s; 2010-15 as a short last block) and their differences
ld = long_difference(period_average(raw, m=10, partial_last=True), variables=("T",))
ld_spec = RegressionSpec("d_g", ("d_dT", "d_dT_T", "T", "d_T2"), fe=("period",),
                         vcov=VcovSpec("cluster", ("country_id",)), time="period")

B, seed = 49, 2024
fe_run = block_bootstrap(annual, fe_spec, B, seed)
ld_run = block_bootstrap(ld, ld_spec, B, seed)
print(fe_run.percentile_intervals().round(5), "\n")
print(f"failed replicates: annual {len(fe_run.failures)}, long difference {len(ld_run.failures)}\n")

res = adaptation_ratio(fe_run, ld_run, at=[20.0, 25.0, 28.0])
print(res.summary().round(3).to_string(index=False))
