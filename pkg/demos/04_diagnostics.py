"""Panel diagnostics: Harris-Tzavalis unit-root test, serial correlation in
fixed-effects residuals, and a small size/power simulation.

    python3 demos/04_diagnostics.py
"""

import numpy as np
import pandas as pd

from climgrowth import RegressionSpec, VcovSpec, fit, harris_tzavalis, lm_serial
from climgrowth.diagnostics import rejection_rate

rng = np.random.default_rng(4)
N, T = 300, 26
levels = rng.normal(15, 6, N)[:, None] + rng.normal(0, 0.5, (N, T))  # stationary around region means
walk = rng.normal(0, 0.5, (N, T)).cumsum(axis=1)

print("stationary temperatures:", harris_tzavalis(levels).to_json())
print("random walks:          ", harris_tzavalis(walk).to_json(), "\n")

# AR(1) errors survive the region effects and show up in the LM test
e = np.zeros((N, T))
for t in range(T):
    e[:, t] = 0.3 * (e[:, t - 1] if t else 0) + rng.normal(size=N)
x = rng.normal(size=(N, T))
df = pd.DataFrame({"region_id": np.repeat(np.arange(N), T), "year": np.tile(np.arange(T), N),
                   "x": x.ravel(), "y": (0.5 * x + e).ravel()})
res = fit(df, RegressionSpec("y", ("x",), fe=("region_id",), vcov=VcovSpec("robust")))
for k in (1, 2):
    rep = lm_serial(res, order=k)
    print(f"LM order {k}: z = {rep.statistic:.2f}, p = {rep.pvalue:.3g}")

# size of the unit-root test on random walks, 100 seeded replications
size = rejection_rate(lambda g: g.normal(size=(200, 15)).cumsum(axis=1), harris_tzavalis, 100, seed=7)
print(f"\nHarris-Tzavalis rejection rate under the null: {size['rate']:.3f} (mc se {size['mc_se']:.3f})")
