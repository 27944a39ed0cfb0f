"""Analysis-panel construction.

A region panel is a tidy :class:`pandas.DataFrame` with one row per
``(region_id, year)`` and the raw columns

============  ===========================================
region_id     subnational region identifier
country_id    country of the region
continent_id  subcontinent grouping (optional)
year          calendar year
gdppc         GDP per capita (2011 PPP $/person)
T             annual mean temperature (deg C)
P             annual total precipitation (m)
pop           population (persons)
urb           urban population share
edu           mean years of schooling
============  ===========================================

Derived columns carry a prefix: ``d_`` for transformed variables, ``bin_t_``
and ``bin_p_`` for bin indicators, ``w_`` for weights. Naming for a weather
variable ``V``:

============  ===========================================
d_g           log growth of gdppc, ln y_t - ln y_{t-1}
d_dV          V_t - V_{t-1}
d_dV_V        d_dV * V_t            (lag_form="contemporaneous")
d_dV_LV       d_dV * V_{t-1}        (lag_form="lagged")
d_dV_VLV      d_dV * (V_t + V_{t-1})  (lag_form="summed")
d_V2          V_t ** 2
============  ===========================================

Period panels (:func:`period_average`) use the same names with ``period`` as
the time column.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

__all__ = [
    "LAG_FORMS",
    "growth_name",
    "diff_name",
    "interaction_name",
    "square_name",
    "growth_rates",
    "weather_terms",
    "period_blocks",
    "period_average",
    "long_difference",
    "TEMPERATURE_EDGES",
    "PRECIPITATION_EDGES",
    "bin_labels",
    "bin_indicators",
    "compute_weights",
    "weighted_median",
    "classify_rich_poor",
]

LAG_FORMS = ("contemporaneous", "lagged", "summed")

# lower edges of the bins above bin 0 (everything below the first edge)
TEMPERATURE_EDGES = np.arange(0.0, 27.0 + 1e-9, 3.0)
PRECIPITATION_EDGES = np.round(np.arange(0.2, 2.2 + 1e-9, 0.2), 10)
# Temperature bins are numbered 0 (T < 0), 1-9 (3 deg C wide) and 11 (T >= 27);
# 3 deg C bins between 0 and 27 leave no bin 10, and the top bin keeps its
# conventional index 11. Precipitation bins are 0-11 without gaps.
_BIN_LABELS = {
    "t": np.array(list(range(len(TEMPERATURE_EDGES))) + [11]),
    "p": np.arange(len(PRECIPITATION_EDGES) + 1),
}

ID_COLUMNS = ("region_id", "country_id", "continent_id")


def growth_name() -> str:
    return "d_g"


def diff_name(var: str) -> str:
    return f"d_d{var}"


def interaction_name(var: str, lag_form: str = "contemporaneous") -> str:
    suffix = {"contemporaneous": var, "lagged": f"L{var}", "summed": f"{var}L{var}"}
    try:
        return f"d_d{var}_{suffix[lag_form]}"
    except KeyError:
        raise ValueError(f"lag_form must be one of {LAG_FORMS}") from None


def square_name(var: str) -> str:
    return f"d_{var}2"


def _check_unique(panel: pd.DataFrame, entity: str, time: str) -> None:
    if panel.duplicated([entity, time]).any():
        raise ValueError(f"({entity}, {time}) pairs must be unique")


def _previous(panel: pd.DataFrame, cols, entity: str, time: str) -> pd.DataFrame:
    """Values of ``cols`` at time - 1 for each row (NaN when that row is absent)."""
    prev = panel[[entity, time, *cols]].copy()
    prev[time] = prev[time] + 1
    merged = panel[[entity, time]].merge(prev, on=[entity, time], how="left")
    merged.index = panel.index
    return merged[list(cols)]


def growth_rates(panel: pd.DataFrame, entity: str = "region_id", time: str = "year", column: str = "gdppc") -> pd.DataFrame:
    """Add ``d_g = ln(y_t) - ln(y_{t-1})``.

    Rows with non-positive GDP per capita are rejected (warning) and get NaN
    log output; the first year of each region has no growth rate.
    """
    _check_unique(panel, entity, time)
    out = panel.copy()
    y = out[column].astype(float)
    bad = y <= 0
    if bad.any():
        warnings.warn(f"{int(bad.sum())} row(s) with non-positive {column} rejected", stacklevel=2)
    lny = np.log(y.where(~bad))
    tmp = out[[entity, time]].assign(_lny=lny)
    prev = _previous(tmp, ["_lny"], entity, time)["_lny"]
    out[growth_name()] = lny - prev
    return out


def weather_terms(
    panel: pd.DataFrame,
    lag_form: str = "contemporaneous",
    variables=("T", "P"),
    entity: str = "region_id",
    time: str = "year",
) -> pd.DataFrame:
    """Add first differences, their interaction with levels, and squares.

    For each variable ``V``: ``d_dV``, the interaction selected by
    ``lag_form`` (see module docstring) and ``d_V2``. Differences need the
    immediately preceding ``time`` value; otherwise they are NaN.
    """
    if lag_form not in LAG_FORMS:
        raise ValueError(f"lag_form must be one of {LAG_FORMS}")
    _check_unique(panel, entity, time)
    out = panel.copy()
    variables = [v for v in variables if v in out.columns]
    prev = _previous(out, variables, entity, time)
    for v in variables:
        cur = out[v].astype(float)
        lag = prev[v].astype(float)
        d = cur - lag
        out[diff_name(v)] = d
        if lag_form == "contemporaneous":
            out[interaction_name(v, lag_form)] = d * cur
        elif lag_form == "lagged":
            out[interaction_name(v, lag_form)] = d * lag
        else:
            out[interaction_name(v, lag_form)] = d * (cur + lag)
        out[square_name(v)] = cur**2
    return out


def period_blocks(years, m: int, start: int | None = None, partial_last: bool = False, min_last: int = 2):
    """Calendar partition of ``years`` into consecutive ``m``-year blocks.

    Returns a list of ``(first_year, last_year)`` tuples. A trailing block
    shorter than ``m`` is kept only when ``partial_last`` is set and it spans at
    least ``min_last`` years.
    """
    years = np.asarray(sorted(set(int(y) for y in years)))
    if years.size == 0:
        return []
    first = int(years.min()) if start is None else int(start)
    last = int(years.max())
    blocks = []
    a = first
    while a <= last:
        b = a + m - 1
        if b <= last:
            blocks.append((a, b))
        elif partial_last and last - a + 1 >= min_last:
            blocks.append((a, last))
        a += m
    return blocks


def period_average(
    panel: pd.DataFrame,
    m: int = 10,
    start: int | None = None,
    partial_last: bool = False,
    min_last: int = 2,
    entity: str = "region_id",
    time: str = "year",
    column: str = "gdppc",
) -> pd.DataFrame:
    """Average every numeric variable over consecutive ``m``-year periods.

    A region-period is kept only if every calendar year of its block is
    present; others are dropped and logged. Period growth
    ``d_g = ln(mean y_p) - ln(mean y_{p-1})`` is added when ``column`` is
    present. The block layout is stored in ``result.attrs["blocks"]``.

    With 1990-2015 data, ``m=5`` gives five complete blocks (2015 unused);
    ``m=10, partial_last=True`` gives 1990-99, 2000-09 and 2010-15.
    """
    if m < 1:
        raise ValueError("m must be positive")
    _check_unique(panel, entity, time)
    blocks = period_blocks(panel[time], m, start=start, partial_last=partial_last, min_last=min_last)
    if not blocks:
        raise ValueError("panel does not cover a single complete period")
    starts = np.array([b[0] for b in blocks])
    ends = np.array([b[1] for b in blocks])
    yr = panel[time].to_numpy()
    pid = np.searchsorted(starts, yr, side="right") - 1
    valid = (pid >= 0) & (yr <= ends[np.clip(pid, 0, None)])
    work = panel.loc[valid].copy()
    work["period"] = pid[valid]

    keys = [entity] + [c for c in ID_COLUMNS if c in work.columns and c != entity]
    numeric = [
        c for c in work.columns
        if c not in keys and c not in (time, "period") and pd.api.types.is_numeric_dtype(work[c])
        and not c.startswith(("d_", "bin_", "w_"))
    ]
    grouped = work.groupby([entity, "period"], sort=True)
    counts = grouped[time].nunique()
    length = pd.Series(ends - starts + 1)[counts.index.get_level_values("period")].to_numpy()
    complete = counts.to_numpy() == length
    if not complete.all():
        incomplete = list(counts.index[~complete])
        logger.info("dropping %d incomplete region-period(s): %s", len(incomplete), incomplete[:10])
    means = grouped[numeric].mean().loc[complete]
    ids = grouped[keys[1:]].first().loc[complete] if len(keys) > 1 else None
    out = means if ids is None else ids.join(means)
    out = out.reset_index()
    out["period_start"] = starts[out["period"]]
    out["period_end"] = ends[out["period"]]
    out["n_years"] = out["period_end"] - out["period_start"] + 1
    if column in out.columns:
        y = out[column].astype(float)
        lny = np.log(y.where(y > 0))
        prev = _previous(out[[entity, "period"]].assign(_lny=lny), ["_lny"], entity, "period")["_lny"]
        out[growth_name()] = lny - prev
    out = out.sort_values([entity, "period"], kind="mergesort").reset_index(drop=True)
    out.attrs["blocks"] = [tuple(int(v) for v in b) for b in blocks]
    out.attrs["m"] = m
    return out


def long_difference(
    period_panel: pd.DataFrame,
    lag_form: str = "contemporaneous",
    variables=("T", "P"),
    entity: str = "region_id",
) -> pd.DataFrame:
    """Inter-period differences (gap n = 1) of a period panel.

    Same terms as :func:`weather_terms` on the ``period`` axis; only rows
    with a preceding period (and hence a defined growth rate) are emitted.
    """
    out = weather_terms(period_panel, lag_form=lag_form, variables=variables, entity=entity, time="period")
    present = [diff_name(v) for v in variables if v in period_panel.columns]
    keep = out[present].notna().all(axis=1) if present else pd.Series(True, index=out.index)
    if growth_name() in out.columns:
        keep &= out[growth_name()].notna()
    out = out.loc[keep].reset_index(drop=True)
    out.attrs.update(period_panel.attrs)
    return out


def bin_labels(variable: str = "t") -> list[int]:
    """Bin numbers used for temperature (``"t"``) or precipitation (``"p"``)."""
    return _BIN_LABELS[variable].tolist()


def _bin_index(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    return np.searchsorted(edges, values, side="right")


def bin_indicators(panel: pd.DataFrame, temperature: str = "T", precipitation: str = "P") -> pd.DataFrame:
    """Add 12 temperature and 12 precipitation bin indicators.

    Temperature: bin 0 is ``T < 0``, bins 1-9 are 3 deg C wide, bin 11 is
    ``T >= 27`` (there is no bin 10, see :func:`bin_labels`). Precipitation:
    bins 0-10 are 0.2 m wide from 0, bin 11 is ``P >= 2.2``. Missing values
    give NaN in every indicator of that set.
    """
    out = panel.copy()
    specs = []
    if temperature in out.columns:
        specs.append(("t", out[temperature].to_numpy(float), TEMPERATURE_EDGES))
    if precipitation in out.columns:
        specs.append(("p", out[precipitation].to_numpy(float), PRECIPITATION_EDGES))
    for var, values, edges in specs:
        labels = _BIN_LABELS[var]
        idx = labels[_bin_index(values, edges)]
        missing = np.isnan(values)
        for k in labels:
            col = (idx == k).astype(float)
            col[missing] = np.nan
            out[f"bin_{var}_{k}"] = col
    return out


def compute_weights(
    panel: pd.DataFrame,
    scheme: str = "region",
    country: str = "country_id",
    time: str = "year",
    population: str = "pop",
) -> pd.Series:
    """Regression weights for the rows of ``panel``.

    ``"region"``: one over the number of the country's regions present in the
    same year, so each country-year sums to one. ``"population"``: the
    population itself; zero-population rows get weight 0 (warned).

    Pass the estimation sample (after listwise deletion) to get weights that
    sum to one per country-year within that sample.
    """
    if scheme == "region":
        counts = panel.groupby([country, time])[country].transform("size")
        return (1.0 / counts.astype(float)).rename("w_region")
    if scheme == "population":
        w = panel[population].astype(float)
        if (w < 0).any():
            raise ValueError("negative population")
        zero = w == 0
        if zero.any():
            warnings.warn(f"{int(zero.sum())} row(s) with zero population get weight 0", stacklevel=2)
        return w.rename("w_pop")
    raise ValueError("scheme must be 'region' or 'population'")


def weighted_median(values, weights) -> float:
    """Lower weighted median: smallest value whose cumulative weight reaches half."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="mergesort")
    v, w = values[order], weights[order]
    cum = np.cumsum(w)
    k = np.searchsorted(cum, 0.5 * cum[-1] * (1 - 1e-12), side="left")
    return float(v[min(k, len(v) - 1)])


def classify_rich_poor(
    panel: pd.DataFrame,
    m: int = 10,
    start: int | None = None,
    partial_last: bool = True,
    entity: str = "region_id",
    country: str = "country_id",
    time: str = "year",
    column: str = "gdppc",
) -> pd.DataFrame:
    """Per-period rich/poor split at the region-weighted median GDP per capita.

    Period means of ``column`` are compared with the median weighted by region
    weights (each country's regions share a unit weight). Regions strictly
    above the median are rich; those at or below are poor.

    Returns a copy of ``panel`` with two explicit codings of the split,
    ``d_poor`` (1 = poor) and ``d_rich`` (1 = rich), plus ``period``. Years
    outside every period, or regions lacking a complete period, get NaN.
    """
    pp = period_average(panel[[entity, country, time, column]], m=m, start=start, partial_last=partial_last,
                        entity=entity, time=time, column=column)
    pp = pp.dropna(subset=[column])
    rows = []
    for period, grp in pp.groupby("period", sort=True):
        w = 1.0 / grp.groupby(country)[entity].transform("size").to_numpy(float)
        med = weighted_median(grp[column].to_numpy(float), w)
        rows.append(pd.DataFrame({entity: grp[entity].to_numpy(), "period": period,
                                  "d_rich": (grp[column].to_numpy(float) > med).astype(float)}))
    cls = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(columns=[entity, "period", "d_rich"])
    cls["d_poor"] = 1.0 - cls["d_rich"]

    blocks = pp.attrs["blocks"]
    starts = np.array([b[0] for b in blocks])
    ends = np.array([b[1] for b in blocks])
    out = panel.copy()
    yr = out[time].to_numpy()
    pid = np.searchsorted(starts, yr, side="right") - 1
    inside = (pid >= 0) & (yr <= ends[np.clip(pid, 0, None)])
    out["period"] = np.where(inside, pid, -1)
    out = out.merge(cls, on=[entity, "period"], how="left")
    out.index = panel.index
    out.loc[~inside, "period"] = np.nan
    out.attrs["blocks"] = blocks
    return out
