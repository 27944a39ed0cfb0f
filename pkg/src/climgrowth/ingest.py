"""Gridded climate and population data to region-year aggregates.

Grid cells are attached to regions by the position of their centroid (even-odd
point-in-polygon rule). Monthly cell values are area-weighted into
region-months, then reduced to years: temperature by the mean of the twelve
region-months, precipitation by their sum. Population grids are summed and the
urban share is reported as urbanization.

Input tables are long-format :class:`pandas.DataFrame` objects:

* cells: ``cell_id, lon, lat, area_km2, year, month, value``
* population cells: ``cell_id, year, value`` (one table urban, one rural)

Region polygons come from a minimal GeoJSON subset (``FeatureCollection`` of
``Polygon``/``MultiPolygon`` features with ``region_id`` and ``country_id``
properties), see :func:`read_regions`.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

__all__ = [
    "RegionShape",
    "points_in_rings",
    "points_on_rings",
    "assign_cells",
    "aggregate_climate",
    "aggregate_population",
    "region_climate_table",
    "read_cells",
    "read_regions",
]

CELL_COLUMNS = ("cell_id", "lon", "lat", "area_km2", "year", "month", "value")


@dataclass(frozen=True)
class RegionShape:
    """A region polygon with its country linkage.

    ``rings`` holds every ring of every polygon part (outer boundaries and
    holes alike) as ``(n, 2)`` arrays of lon/lat vertices. Membership uses the
    even-odd rule over all rings, so holes need no special treatment.
    """

    region_id: str
    country_id: str
    rings: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        if not self.rings:
            raise ValueError(f"region {self.region_id!r} has no rings")
        checked = []
        for ring in self.rings:
            ring = np.asarray(ring, dtype=float)
            if ring.ndim != 2 or ring.shape[1] != 2:
                raise ValueError(f"region {self.region_id!r}: ring must be an (n, 2) array")
            if not np.array_equal(ring[0], ring[-1]):
                raise ValueError(f"region {self.region_id!r}: ring is not closed")
            if len(np.unique(ring[:-1], axis=0)) < 3:
                raise ValueError(
                    f"region {self.region_id!r}: degenerate ring with fewer than 3 distinct vertices"
                )
            checked.append(ring)
        object.__setattr__(self, "rings", tuple(checked))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        allv = np.vstack(self.rings)
        return allv[:, 0].min(), allv[:, 1].min(), allv[:, 0].max(), allv[:, 1].max()


def points_in_rings(x: np.ndarray, y: np.ndarray, rings: Iterable[np.ndarray]) -> np.ndarray:
    """Even-odd membership of points against a set of closed rings.

    Uses half-open crossing tests so each edge crossing is counted once.
    Points exactly on an edge may land on either side; combine with
    :func:`points_on_rings` when boundary handling matters.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = np.zeros(x.shape, dtype=bool)
    for ring in rings:
        x0, y0 = ring[:-1, 0], ring[:-1, 1]
        x1, y1 = ring[1:, 0], ring[1:, 1]
        for xa, ya, xb, yb in zip(x0, y0, x1, y1):
            straddles = (ya > y) != (yb > y)
            if not straddles.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                xcross = xa + (y - ya) * (xb - xa) / (yb - ya)
            inside ^= straddles & (x < xcross)
    return inside


def points_on_rings(x: np.ndarray, y: np.ndarray, rings: Iterable[np.ndarray], atol: float = 1e-12) -> np.ndarray:
    """Points lying on any ring edge (within ``atol`` in the cross product)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    on = np.zeros(x.shape, dtype=bool)
    for ring in rings:
        for (xa, ya), (xb, yb) in zip(ring[:-1], ring[1:]):
            cross = (xb - xa) * (y - ya) - (yb - ya) * (x - xa)
            within = (
                (x >= min(xa, xb) - atol)
                & (x <= max(xa, xb) + atol)
                & (y >= min(ya, yb) - atol)
                & (y <= max(ya, yb) + atol)
            )
            on |= within & (np.abs(cross) <= atol)
    return on


def assign_cells(cells: pd.DataFrame, regions: Sequence[RegionShape]) -> pd.Series:
    """Map each grid cell to the region containing its centroid.

    Parameters
    ----------
    cells : DataFrame
        Must contain ``cell_id``, ``lon`` and ``lat``. Repeated cell ids (long
        tables) are collapsed; their coordinates must agree.
    regions : sequence of RegionShape

    Returns
    -------
    Series
        ``region_id`` indexed by ``cell_id`` (sorted). Cells outside every
        region are absent. A centroid on a shared boundary, or inside
        overlapping polygons, goes to the lexicographically smallest
        ``region_id``.
    """
    ids = [r.region_id for r in regions]
    if len(set(ids)) != len(ids):
        raise ValueError("region_id values must be unique")
    pts = cells[["cell_id", "lon", "lat"]].drop_duplicates()
    if pts["cell_id"].duplicated().any():
        raise ValueError("a cell_id appears with more than one centroid")
    pts = pts.sort_values("cell_id", kind="mergesort").reset_index(drop=True)
    lon = pts["lon"].to_numpy(float)
    lat = pts["lat"].to_numpy(float)
    if np.any(np.abs(lon) > 180) or np.any(np.abs(lat) > 90):
        raise ValueError("cell centroids must lie within [-180, 180] x [-90, 90]")

    best = np.full(len(pts), None, dtype=object)
    for region in sorted(regions, key=lambda r: r.region_id):
        xmin, ymin, xmax, ymax = region.bounds
        cand = np.flatnonzero(
            (lon >= xmin) & (lon <= xmax) & (lat >= ymin) & (lat <= ymax) & (best == None)  # noqa: E711
        )
        if cand.size == 0:
            continue
        hit = points_in_rings(lon[cand], lat[cand], region.rings)
        hit |= points_on_rings(lon[cand], lat[cand], region.rings)
        # regions visited in id order, so the first hit is the smallest id
        best[cand[hit]] = region.region_id

    mapped = best != None  # noqa: E711
    out = pd.Series(best[mapped], index=pts["cell_id"].to_numpy()[mapped], name="region_id")
    out.index.name = "cell_id"
    return out


def _attach(cells: pd.DataFrame, assignment: pd.Series) -> pd.DataFrame:
    frame = cells.merge(assignment.rename("region_id"), left_on="cell_id", right_index=True, how="inner")
    return frame


def aggregate_climate(
    cells: pd.DataFrame,
    assignment: pd.Series,
    statistic: str = "mean",
    name: str = "value",
    regions: Iterable[str] | None = None,
) -> pd.DataFrame:
    """Area-weighted region-month values reduced to region-year values.

    Parameters
    ----------
    cells : DataFrame
        Long cell table with ``cell_id, area_km2, year, month, value``.
    assignment : Series
        Output of :func:`assign_cells`.
    statistic : {"mean", "sum"}
        Annual reduction of the twelve region-months: ``"mean"`` for
        temperature, ``"sum"`` for precipitation.
    name : str
        Name of the value column in the result.
    regions : iterable of str, optional
        Regions expected in the output; any without mapped cells are reported
        in a warning.

    Returns
    -------
    DataFrame
        ``region_id, year, <name>`` sorted by ``(region_id, year)``. Region-years
        missing any month (in any contributing cell) are dropped with a warning.
    """
    if statistic not in ("mean", "sum"):
        raise ValueError("statistic must be 'mean' or 'sum'")
    if (cells["area_km2"] <= 0).any():
        raise ValueError("cell areas must be positive")
    frame = _attach(cells, assignment)
    if regions is not None:
        empty = sorted(set(regions) - set(assignment.unique()))
        if empty:
            warnings.warn(f"regions with no mapped cells excluded: {empty}", stacklevel=2)

    bad = frame.groupby(["cell_id", "year"])["month"].nunique() < 12
    incomplete = bad[bad].reset_index()[["cell_id", "year"]]
    if len(incomplete):
        dropped = (
            incomplete.merge(assignment.rename("region_id"), left_on="cell_id", right_index=True)[
                ["region_id", "year"]
            ]
            .drop_duplicates()
        )
        warnings.warn(
            f"dropping {len(dropped)} region-year(s) with missing months: "
            f"{list(map(tuple, dropped.to_numpy()))[:10]}",
            stacklevel=2,
        )
        key = pd.MultiIndex.from_frame(frame[["region_id", "year"]])
        frame = frame[~key.isin(pd.MultiIndex.from_frame(dropped))]

    frame = frame.assign(_aw=frame["area_km2"] * frame["value"])
    monthly = frame.groupby(["region_id", "year", "month"], sort=True)[["_aw", "area_km2"]].sum()
    monthly = (monthly["_aw"] / monthly["area_km2"]).rename(name).reset_index()
    annual = monthly.groupby(["region_id", "year"], sort=True)[name]
    out = annual.mean() if statistic == "mean" else annual.sum()
    return out.reset_index()


def aggregate_population(
    urban: pd.DataFrame,
    rural: pd.DataFrame,
    assignment: pd.Series,
) -> pd.DataFrame:
    """Sum urban and rural population grids to regions.

    Both tables carry ``cell_id, year, value`` on the same cell index. Returns
    ``region_id, year, population, urbanization, zero_population``; the
    urbanization of an empty region is 0 and the row is flagged.
    """
    for label, frame in (("urban", urban), ("rural", rural)):
        if (frame["value"] < 0).any():
            raise ValueError(f"negative {label} population values")
    if set(urban["cell_id"]) != set(rural["cell_id"]):
        raise ValueError("urban and rural grids must share the same cell index")
    both = urban[["cell_id", "year", "value"]].merge(
        rural[["cell_id", "year", "value"]], on=["cell_id", "year"], suffixes=("_urban", "_rural"), how="outer"
    ).fillna(0.0)
    both = _attach(both, assignment)
    sums = both.groupby(["region_id", "year"], sort=True)[["value_urban", "value_rural"]].sum()
    total = sums["value_urban"] + sums["value_rural"]
    zero = total <= 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} region-year(s) with zero population; urbanization set to 0", stacklevel=2)
    urb = (sums["value_urban"] / total.where(~zero, 1.0)).where(~zero, 0.0)
    return pd.DataFrame(
        {"population": total, "urbanization": urb, "zero_population": zero}
    ).reset_index()


def region_climate_table(
    regions: Sequence[RegionShape],
    temperature: pd.DataFrame,
    precipitation: pd.DataFrame | None = None,
    urban: pd.DataFrame | None = None,
    rural: pd.DataFrame | None = None,
) -> pd.DataFrame:
    """Assemble region-year rows of ``T``, ``P``, ``pop`` and ``urb``.

    Cells are assigned once from the temperature table's centroids (all grids
    are expected on the same cell index).
    """
    assignment = assign_cells(temperature, regions)
    expected = [r.region_id for r in regions]
    out = aggregate_climate(temperature, assignment, "mean", name="T", regions=expected)
    if precipitation is not None:
        p = aggregate_climate(precipitation, assignment, "sum", name="P")
        out = out.merge(p, on=["region_id", "year"], how="outer")
    if urban is not None and rural is not None:
        pop = aggregate_population(urban, rural, assignment)
        pop = pop.rename(columns={"population": "pop", "urbanization": "urb"}).drop(columns="zero_population")
        out = out.merge(pop, on=["region_id", "year"], how="outer")
    countries = pd.Series({r.region_id: r.country_id for r in regions}, name="country_id")
    out = out.merge(countries, left_on="region_id", right_index=True, how="left")
    cols = ["region_id", "country_id", "year"] + [c for c in out.columns if c not in ("region_id", "country_id", "year")]
    return out[cols].sort_values(["region_id", "year"], kind="mergesort").reset_index(drop=True)


def read_cells(path) -> pd.DataFrame:
    """Read a cell CSV with columns ``cell_id, lon, lat, area_km2, year, month, value``."""
    frame = pd.read_csv(path, dtype={"cell_id": str})
    missing = [c for c in CELL_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    return frame


def _polygon_rings(coords) -> list[np.ndarray]:
    return [np.asarray(ring, dtype=float) for ring in coords]


def read_regions(source) -> list[RegionShape]:
    """Parse region polygons from a GeoJSON path, string, or mapping.

    Only ``FeatureCollection`` of ``Polygon`` / ``MultiPolygon`` geometries is
    supported; every feature needs ``region_id`` and ``country_id``
    properties.
    """
    if isinstance(source, dict):
        doc = source
    else:
        text = str(source)
        if text.lstrip().startswith("{"):
            doc = json.loads(text)
        else:
            with open(source, encoding="utf-8") as fh:
                doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise ValueError("expected a GeoJSON FeatureCollection")
    shapes = []
    for feat in doc.get("features", []):
        props = feat.get("properties") or {}
        geom = feat.get("geometry") or {}
        try:
            rid, cid = str(props["region_id"]), str(props["country_id"])
        except KeyError as err:
            raise ValueError(f"feature lacks property {err.args[0]!r}") from None
        if geom.get("type") == "Polygon":
            rings = _polygon_rings(geom["coordinates"])
        elif geom.get("type") == "MultiPolygon":
            rings = [r for poly in geom["coordinates"] for r in _polygon_rings(poly)]
        else:
            raise ValueError(f"region {rid!r}: unsupported geometry {geom.get('type')!r}")
        shapes.append(RegionShape(rid, cid, tuple(rings)))
    return shapes
