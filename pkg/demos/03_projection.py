"""Projected output losses under two warming paths.

Damage draws (slope and curvature pairs) are combined with temperature paths
for two scenarios. Every sampled (draw, scenario) pair gives cumulative log
deviations Psi per region, which are averaged in level space with population
weights.

    python3 demos/03_projection.py
"""

import numpy as np
import pandas as pd

from climgrowth import ClimateScenario, DamageFunction, aggregate, project_region, run_projection

rng = np.random.default_rng(3)
regions = [f"r{i:02d}" for i in range(30)]
T0 = pd.Series(rng.uniform(10, 28, len(regions)), index=regions, name="T0")
groups = pd.Series(np.where(T0 > 20, "warm", "temperate"), index=regions)
pop = pd.Series(rng.uniform(1, 10, len(regions)), index=regions)

years = np.arange(2020, 2101)
scenarios = [
    ClimateScenario(name, pd.DataFrame(T0.to_numpy()[:, None] + rate * (years - 2019)[None, :],
                                       index=regions, columns=years))
    for name, rate in (("moderate", 0.02), ("high", 0.05))
]

# bootstrap-like damage draws around delta = 0.022, gamma = -0.0008
damage = DamageFunction(rng.normal(0.022, 0.003, 200), rng.normal(-0.0008, 0.0001, 200))

# one pair in detail: Psi starts at 0 in 2019 and accumulates phi each year
one = project_region(damage, 0, scenarios[1], T0)
print(one.psi.loc[["r00", "r01"], [2019, 2020, 2050, 2100]].round(4), "\n")
print(aggregate(one.psi, pop, groups)[[2050, 2100]].round(4), "\n")

out = run_projection(damage, scenarios, T0, pop, groups, n=300, seed=11)
for name, s in out.summary["groups"].items():
    print(f"{name:>10}: mean {s['mean']:+.3f}  sd {s['sd']:.3f}  p10 {s['p10']:+.3f}  p90 {s['p90']:+.3f}")
