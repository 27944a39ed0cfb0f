"""Country-block bootstrap and the adaptation ratio.

Replicate ``r`` of a run with master seed ``s`` draws its countries from
``default_rng(SeedSequence(s, spawn_key=(r,)))``. Draws therefore depend only
on ``(s, r)`` and the sorted list of countries: replicates can run in any
order or in parallel, and two runs over panels with the same countries (an
annual and a long-difference panel, say) are paired replicate by replicate.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from numpy.linalg import LinAlgError

from .absorption import ConvergenceError
from .estimator import EstimationError, FitResult, RegressionSpec, fit
from .inference import annualize_decadal

__all__ = [
    "BootstrapRun",
    "country_draws",
    "resample_countries",
    "block_bootstrap",
    "AdaptationResult",
    "adaptation_ratio",
    "ratio_values",
    "panel_hash",
]

logger = logging.getLogger(__name__)

RATIO_FLOOR = 1e-4


def panel_hash(panel: pd.DataFrame) -> str:
    """SHA-256 of the panel's values and column names."""
    h = hashlib.sha256()
    h.update("|".join(map(str, panel.columns)).encode())
    h.update(pd.util.hash_pandas_object(panel, index=False).to_numpy().tobytes())
    return h.hexdigest()


def country_draws(n_countries: int, replicate: int, seed: int) -> np.ndarray:
    """Indices of the countries drawn (with replacement) for one replicate."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate,)))
    return rng.integers(0, n_countries, size=n_countries)


def resample_countries(
    panel: pd.DataFrame,
    countries: Sequence,
    draw: np.ndarray,
    country: str = "country_id",
    relabel: Sequence[str] = ("region_id",),
) -> pd.DataFrame:
    """Stack the rows of the drawn countries.

    The ``k``-th drawn copy of country ``c`` becomes ``"c#k"``; the columns in
    ``relabel`` are suffixed the same way, so duplicated countries are
    distinct clusters and their regions distinct fixed-effect groups.
    """
    groups = panel.groupby(country, sort=False).indices
    rows = [groups[countries[j]] for j in draw]
    copy = np.repeat(np.arange(len(draw)), [r.size for r in rows])
    out = panel.iloc[np.concatenate(rows)].reset_index(drop=True)
    suffix = "#" + pd.Series(copy).astype(str)
    out[country] = out[country].astype(str) + suffix
    for col in relabel:
        if col in out.columns and col != country:
            out[col] = out[col].astype(str) + suffix
    return out


@dataclass(frozen=True)
class BootstrapRun:
    """Replicate draws of a statistic vector.

    ``draws`` has one row per successful replicate (indexed by replicate
    number) and the same columns as ``point``. ``failures`` lists the
    replicate numbers whose fit failed; they are never imputed.
    """

    B: int
    seed: int
    point: pd.Series
    draws: pd.DataFrame
    failures: tuple[int, ...] = ()
    failure_reasons: dict = field(default_factory=dict)
    countries: tuple = ()
    panel_hash: str = ""

    def __post_init__(self):
        if len(self.draws) != self.B - len(self.failures):
            raise ValueError("replicate count must equal B minus failures")

    def percentile_intervals(self, levels: Sequence[float] = (0.90,)) -> pd.DataFrame:
        """Percentile intervals per statistic; columns ``lo_<level>``/``hi_<level>``."""
        out = {"estimate": self.point, "median": self.draws.median()}
        for lv in levels:
            a = (1 - lv) / 2
            out[f"lo_{lv:g}"] = self.draws.quantile(a)
            out[f"hi_{lv:g}"] = self.draws.quantile(1 - a)
        return pd.DataFrame(out)

    def summary(self, levels: Sequence[float] = (0.90,)) -> dict:
        tab = self.percentile_intervals(levels)
        return {
            "B": self.B,
            "seed": self.seed,
            "n_replicates": len(self.draws),
            "n_failures": len(self.failures),
            "failures": list(self.failures),
            "failure_reasons": {str(k): v for k, v in self.failure_reasons.items()},
            "panel_hash": self.panel_hash,
            "statistics": {name: {k: float(v) for k, v in row.items()} for name, row in tab.iterrows()},
        }

    def to_frame(self) -> pd.DataFrame:
        out = self.draws.copy()
        out.index.name = "replicate"
        return out


def _default_transform(res: FitResult) -> pd.Series:
    return res.params


_FAILURES = (EstimationError, ConvergenceError, LinAlgError, ValueError, KeyError)


def _replicate(args):
    r, panel, spec, countries, seed, prepare, transform, draw_hook, names = args
    draw = draw_hook(r, len(countries)) if draw_hook else country_draws(len(countries), r, seed)
    try:
        sample = resample_countries(panel, countries, draw, spec.country, relabel=(spec.entity,))
        if prepare is not None:
            sample = prepare(sample)
        res = fit(sample, spec, vcov=False)
        stat = transform(res).reindex(names)
    except _FAILURES as exc:
        return r, None, f"{type(exc).__name__}: {exc}"
    if stat.isna().any():
        return r, None, f"statistic(s) not estimable: {list(stat.index[stat.isna()])}"
    return r, stat.to_numpy(float), None


def block_bootstrap(
    panel: pd.DataFrame,
    spec: RegressionSpec,
    B: int,
    seed: int,
    prepare: Callable[[pd.DataFrame], pd.DataFrame] | None = None,
    transform: Callable[[FitResult], pd.Series] | None = None,
    draw_hook: Callable[[int, int], np.ndarray] | None = None,
    n_jobs: int = 1,
) -> BootstrapRun:
    """Resample whole countries with replacement and re-estimate ``B`` times.

    ``prepare`` re-runs sample-dependent panel steps (e.g. the rich/poor
    split) on each resampled panel and on the original for the point
    estimate; weights given by ``spec.weight_scheme`` are recomputed by
    :func:`fit` anyway. ``transform`` maps a fit to the statistics to keep
    (default: the coefficients). ``draw_hook(r, n_countries)`` replaces the
    random country draw (for tests). ``n_jobs > 1`` runs replicates in worker
    processes; results do not depend on ``n_jobs``.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    countries = tuple(sorted(panel[spec.country].dropna().unique(), key=str))
    if len(countries) < 2:
        raise ValueError("the bootstrap needs at least two countries")
    transform = transform or _default_transform
    base = prepare(panel) if prepare is not None else panel
    point = transform(fit(base, spec, vcov=False))
    names = list(point.index)
    jobs = [(r, panel, spec, countries, seed, prepare, transform, draw_hook, names) for r in range(B)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_replicate, jobs, chunksize=max(1, B // (4 * n_jobs))))
    else:
        results = [_replicate(j) for j in jobs]
    results.sort(key=lambda x: x[0])
    ok = [(r, v) for r, v, _ in results if v is not None]
    failed = {r: msg for r, v, msg in results if v is None}
    if failed:
        logger.warning("%d of %d bootstrap replicates failed", len(failed), B)
    draws = pd.DataFrame([v for _, v in ok], index=[r for r, _ in ok], columns=names)
    draws.index.name = "replicate"
    return BootstrapRun(
        B=B, seed=seed, point=point, draws=draws, failures=tuple(sorted(failed)),
        failure_reasons=failed, countries=countries, panel_hash=panel_hash(panel),
    )


# --------------------------------------------------------------------------
# adaptation


def ratio_values(tau_fe, tau_ld, floor: float = RATIO_FLOOR) -> np.ndarray:
    """``1 - tau_ld / tau_fe``, NaN where ``|tau_fe| < floor``."""
    tau_fe = np.asarray(tau_fe, dtype=float)
    tau_ld = np.asarray(tau_ld, dtype=float)
    ok = np.abs(tau_fe) >= floor
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ok, 1 - tau_ld / np.where(ok, tau_fe, 1.0), np.nan)


@dataclass(frozen=True)
class AdaptationResult:
    grid: np.ndarray
    ratios: pd.DataFrame  # replicate x grid point
    n_filtered: np.ndarray
    n_invalid: int

    def summary(self) -> pd.DataFrame:
        r = self.ratios
        return pd.DataFrame({
            "level": self.grid,
            "median": r.median().to_numpy(),
            "p05": r.quantile(0.05).to_numpy(),
            "p95": r.quantile(0.95).to_numpy(),
            "n_used": r.notna().sum().to_numpy(),
            "n_filtered": self.n_filtered,
        })


def _growth_me(draws: pd.DataFrame, grid: np.ndarray, linear: str, quadratic: str) -> np.ndarray:
    for c in (linear, quadratic):
        if c not in draws.columns:
            raise KeyError(f"coefficient {c!r} not among bootstrap draws")
    return draws[linear].to_numpy()[:, None] + 2 * draws[quadratic].to_numpy()[:, None] * grid[None, :]


def adaptation_ratio(
    fe_run: BootstrapRun,
    ld_run: BootstrapRun,
    at,
    terms: tuple[str, str] = ("T", "d_T2"),
    floor: float = RATIO_FLOOR,
    convention: str = "magnitude",
    periods: int = 10,
) -> AdaptationResult:
    """Distribution over paired replicates of ``1 - tau_LD / tau_FE``.

    ``tau_FE`` is the annual-panel growth marginal effect at each grid level;
    ``tau_LD`` the long-difference one, converted to an annual rate with
    :func:`~climgrowth.inference.annualize_decadal` (``periods`` years per
    period). Grid points with ``|tau_FE| < floor`` are excluded and counted;
    replicates failed in either run are excluded; replicates whose
    long-difference effect cannot be annualized (``|phi| >= 1``) are counted
    as invalid.
    """
    if fe_run.B != ld_run.B:
        raise ValueError(f"runs have different B ({fe_run.B} vs {ld_run.B})")
    if fe_run.seed != ld_run.seed:
        raise ValueError("runs were not drawn from the same seed stream, replicates are not paired")
    grid = np.atleast_1d(np.asarray(at, dtype=float))
    common = fe_run.draws.index.intersection(ld_run.draws.index)
    tau_fe = _growth_me(fe_run.draws.loc[common], grid, *terms)
    phi = _growth_me(ld_run.draws.loc[common], grid, *terms)
    bad = np.abs(phi) >= 1
    tau_ld = np.full_like(phi, np.nan)
    tau_ld[~bad] = annualize_decadal(phi[~bad], convention=convention, periods=periods)
    ratios = ratio_values(tau_fe, tau_ld, floor)
    filtered = (np.abs(tau_fe) < floor).sum(axis=0)
    frame = pd.DataFrame(ratios, index=common, columns=[f"{g:g}" for g in grid])
    frame.index.name = "replicate"
    return AdaptationResult(grid, frame, filtered, int(bad.any(axis=1).sum()))
