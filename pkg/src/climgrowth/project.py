"""Projected GDP-per-capita changes under warming scenarios.

For a damage draw ``b`` and climate path ``c`` the growth deviation of region
``i`` in year ``t`` is ``phi = g_b(T_it) - g_b(T_i0)``, where ``T_i0`` is the
region's baseline temperature and ``g_b(T) = b1 T + b2 T^2``. The cumulative
deviation ``Psi_it = sum_{s<=t} phi_is`` is the log change of GDP per capita
relative to a world without additional warming; ``Psi`` is 0 in the year
before the first projected year. Groups are summarized in level space as
``sum_i w_i (exp(Psi_i) - 1) / sum_i w_i``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

__all__ = [
    "ClimateScenario",
    "DamageFunction",
    "ProjectionRun",
    "ProjectionOutput",
    "baseline_climate",
    "project_region",
    "aggregate",
    "interpolate_weights",
    "sample_uncertainty",
    "run_projection",
    "read_scenarios",
]

logger = logging.getLogger(__name__)

BASELINE_YEARS = tuple(range(2015, 2020))


@dataclass(frozen=True)
class ClimateScenario:
    """Annual temperature path per region for one climate simulation.

    ``paths`` is a ``region x year`` frame with contiguous integer years.
    """

    scenario_id: str
    paths: pd.DataFrame

    def __post_init__(self):
        years = np.asarray(self.paths.columns, dtype=np.int64)
        if years.size == 0 or np.any(np.diff(years) != 1):
            raise ValueError(f"scenario {self.scenario_id}: years must be contiguous and increasing")
        if self.paths.isna().any().any():
            missing = list(self.paths.index[self.paths.isna().any(axis=1)])[:10]
            raise ValueError(f"scenario {self.scenario_id}: missing temperatures for regions {missing}")

    @property
    def years(self) -> np.ndarray:
        return np.asarray(self.paths.columns, dtype=np.int64)

    @classmethod
    def from_long(cls, scenario_id: str, frame: pd.DataFrame, entity: str = "region_id",
                  time: str = "year", value: str = "T") -> "ClimateScenario":
        wide = frame.pivot(index=entity, columns=time, values=value).sort_index()
        wide.columns = wide.columns.astype(np.int64)
        return cls(str(scenario_id), wide)


def read_scenarios(path, entity: str = "region_id", time: str = "year", value: str = "T") -> list[ClimateScenario]:
    """Read a long scenario CSV (``scenario_id, region_id, year, T``)."""
    df = pd.read_csv(path)
    return [ClimateScenario.from_long(sid, g, entity, time, value) for sid, g in df.groupby("scenario_id", sort=True)]


@dataclass(frozen=True)
class DamageFunction:
    """Quadratic growth response per draw: ``g_b(T) = linear[b] T + quadratic[b] T^2``.

    ``source="long_difference"`` responses are per period of ``periods``
    years and are converted to annual rates with ``(1 + g)^(1/periods) - 1``
    before differencing.
    """

    linear: np.ndarray
    quadratic: np.ndarray
    source: str = "annual_panel"
    periods: int = 10

    def __post_init__(self):
        object.__setattr__(self, "linear", np.atleast_1d(np.asarray(self.linear, dtype=float)))
        object.__setattr__(self, "quadratic", np.atleast_1d(np.asarray(self.quadratic, dtype=float)))
        if self.linear.shape != self.quadratic.shape:
            raise ValueError("linear and quadratic draws must have the same length")
        if self.source not in ("annual_panel", "long_difference"):
            raise ValueError("source must be 'annual_panel' or 'long_difference'")

    @property
    def annualize(self) -> bool:
        return self.source == "long_difference"

    @property
    def n_draws(self) -> int:
        return self.linear.size

    @classmethod
    def from_draws(cls, draws: pd.DataFrame, terms: tuple[str, str] = ("T", "d_T2"), **kw) -> "DamageFunction":
        return cls(draws[terms[0]].to_numpy(), draws[terms[1]].to_numpy(), **kw)

    def growth(self, b: int, T) -> tuple[np.ndarray, np.ndarray]:
        """Annual growth response of draw ``b`` at ``T`` and a mask of values
        outside the annualization domain (``g <= -1``)."""
        T = np.asarray(T, dtype=float)
        g = self.linear[b] * T + self.quadratic[b] * T**2
        if not self.annualize:
            return g, np.zeros(g.shape, dtype=bool)
        bad = g <= -1
        with np.errstate(invalid="ignore"):
            out = np.where(bad, np.nan, np.power(np.where(bad, 1.0, 1 + g), 1 / self.periods) - 1)
        return out, bad


@dataclass(frozen=True)
class ProjectionRun:
    """Cumulative deviations for one (draw, scenario) pair.

    ``psi`` is ``region x year`` and includes the zero column for the year
    before the first projected year.
    """

    b: int
    c: int
    psi: pd.DataFrame
    flagged: bool = False
    flagged_regions: tuple = ()


def baseline_climate(history: pd.DataFrame, years: Sequence[int] = BASELINE_YEARS, entity: str = "region_id",
                     time: str = "year", value: str = "T") -> pd.Series:
    """Mean of ``value`` over ``years`` per region; every year is required."""
    years = list(years)
    sub = history[history[time].isin(years)].dropna(subset=[value])
    counts = sub.groupby(entity)[time].nunique()
    all_regions = pd.Index(history[entity].unique())
    incomplete = sorted(set(all_regions) - set(counts.index[counts == len(years)]), key=str)
    if incomplete:
        raise ValueError(f"baseline years {years[0]}-{years[-1]} incomplete for regions: {incomplete[:20]}")
    return sub.groupby(entity)[value].mean().rename("T0")


def project_region(damage: DamageFunction, b: int, scenario: ClimateScenario, baseline: pd.Series,
                   c: int = 0, start: int | None = None, end: int | None = None) -> ProjectionRun:
    """Cumulative growth deviations of every region for draw ``b``."""
    paths = scenario.paths
    missing = paths.index.difference(baseline.index)
    if len(missing):
        raise KeyError(f"no baseline for regions {list(missing)[:10]}")
    years = scenario.years
    lo = years[0] if start is None else start
    hi = years[-1] if end is None else end
    paths = paths.loc[:, (years >= lo) & (years <= hi)]
    T = paths.to_numpy(float)
    T0 = baseline.reindex(paths.index).to_numpy(float)
    g, bad = damage.growth(b, T)
    g0, bad0 = damage.growth(b, T0)
    phi = g - g0[:, None]
    flagged_rows = bad.any(axis=1) | bad0
    psi = np.cumsum(phi, axis=1)
    cols = np.concatenate([[int(paths.columns[0]) - 1], np.asarray(paths.columns, dtype=np.int64)])
    psi = np.column_stack([np.zeros(len(T)), psi])
    out = pd.DataFrame(psi, index=paths.index, columns=cols)
    flagged_regions = tuple(paths.index[flagged_rows])
    if flagged_regions:
        logger.warning("draw %d scenario %d: growth outside the annualization domain in %d region(s)",
                       b, c, len(flagged_regions))
    return ProjectionRun(b, c, out, bool(flagged_regions), flagged_regions)


def interpolate_weights(frame: pd.DataFrame, years: Sequence[int], value: str, entity: str = "region_id",
                        time: str = "year") -> pd.DataFrame:
    """``region x year`` weights, linearly interpolated between given years
    and held constant outside them."""
    wide = frame.pivot(index=entity, columns=time, values=value).sort_index()
    given = np.asarray(wide.columns, dtype=float)
    target = np.asarray(list(years), dtype=float)
    out = np.empty((len(wide), target.size))
    for i, row in enumerate(wide.to_numpy(float)):
        ok = ~np.isnan(row)
        out[i] = np.interp(target, given[ok], row[ok]) if ok.any() else np.nan
    return pd.DataFrame(out, index=wide.index, columns=np.asarray(list(years), dtype=np.int64))


def aggregate(psi: pd.DataFrame, weights, groups: pd.Series | None = None) -> pd.DataFrame:
    """Weighted mean of ``exp(psi) - 1`` per group and globally.

    ``weights``: a Series by region (constant over time) or a ``region x
    year`` frame. Regions without a weight are excluded with a warning.
    Returns a ``group x year`` frame with a ``"global"`` row.
    """
    level = np.expm1(psi)
    if isinstance(weights, pd.Series):
        W = pd.DataFrame(np.repeat(weights.reindex(psi.index).to_numpy(float)[:, None], psi.shape[1], axis=1),
                         index=psi.index, columns=psi.columns)
    else:
        W = weights.reindex(index=psi.index, columns=psi.columns)
        # the anchor column (Psi = 0) may precede the weight data
        W = W.bfill(axis=1).ffill(axis=1)
    missing = W.isna().all(axis=1)
    if missing.any():
        warnings.warn(f"{int(missing.sum())} region(s) without weights excluded", stacklevel=2)
    W = W.fillna(0.0)
    num = level * W
    rows = {"global": num.sum() / W.sum()}
    if groups is not None:
        g = groups.reindex(psi.index)
        for name, idx in g.groupby(g, sort=True).groups.items():
            rows[name] = num.loc[idx].sum() / W.loc[idx].sum()
    return pd.DataFrame(rows).T


def sample_uncertainty(B: int, C: int, n: int = 1000, seed: int = 0) -> np.ndarray:
    """``n`` independent uniform draws of ``(b, c)`` from the ``B x C`` grid."""
    if B < 1 or C < 1:
        raise ValueError("B and C must be positive")
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.integers(0, B, n), rng.integers(0, C, n)])


@dataclass(frozen=True)
class ProjectionOutput:
    pairs: np.ndarray
    region_end: pd.DataFrame
    group_paths: pd.DataFrame
    summary: dict = field(default_factory=dict)


def _stats(values: np.ndarray, axis: int = 0) -> dict:
    return {
        "mean": np.nanmean(values, axis=axis),
        "sd": np.nanstd(values, axis=axis, ddof=1) if values.shape[axis] > 1 else np.zeros(np.delete(values.shape, axis)),
        "p10": np.nanpercentile(values, 10, axis=axis),
        "p90": np.nanpercentile(values, 90, axis=axis),
    }


def run_projection(
    damage: DamageFunction,
    scenarios: Sequence[ClimateScenario],
    baseline: pd.Series,
    weights,
    groups: pd.Series | None = None,
    n: int = 1000,
    seed: int = 0,
    start: int = 2020,
    end: int = 2100,
) -> ProjectionOutput:
    """Project over ``n`` sampled (draw, scenario) pairs and summarize.

    Outputs: per-region ``exp(Psi_end) - 1`` distribution, per-group yearly
    paths (mean, sd, p10, p90) and a JSON-ready summary for the final year.
    """
    pairs = sample_uncertainty(damage.n_draws, len(scenarios), n, seed)
    cache: dict[tuple[int, int], ProjectionRun] = {}
    group_vals = []
    region_end = []
    flagged = 0
    for b, c in pairs:
        key = (int(b), int(c))
        if key not in cache:
            cache[key] = project_region(damage, key[0], scenarios[key[1]], baseline, c=key[1], start=start, end=end)
        run = cache[key]
        flagged += run.flagged
        agg = aggregate(run.psi, weights, groups)
        group_vals.append(agg)
        region_end.append(np.expm1(run.psi.iloc[:, -1].to_numpy()))
    names = list(group_vals[0].index)
    years = np.asarray(group_vals[0].columns, dtype=np.int64)
    cube = np.stack([gv.loc[names].to_numpy(float) for gv in group_vals])  # pair x group x year
    s = _stats(cube, axis=0)
    paths = []
    for gi, name in enumerate(names):
        paths.append(pd.DataFrame({"group": name, "year": years, **{k: v[gi] for k, v in s.items()}}))
    group_paths = pd.concat(paths, ignore_index=True)
    R = np.stack(region_end)
    rs = _stats(R, axis=0)
    region_tab = pd.DataFrame({"region_id": cache[next(iter(cache))].psi.index, **rs})
    last = group_paths[group_paths["year"] == years[-1]].set_index("group")
    summary = {
        "year": int(years[-1]),
        "n_pairs": int(n),
        "seed": int(seed),
        "n_draws": damage.n_draws,
        "n_scenarios": len(scenarios),
        "source": damage.source,
        "n_flagged_pairs": int(flagged),
        "groups": {str(g): {k: float(last.loc[g, k]) for k in ("mean", "sd", "p10", "p90")} for g in names},
    }
    return ProjectionOutput(pairs, region_tab, group_paths, summary)
