"""Panel unit-root and serial-correlation tests, dataset comparison statistics,
and a small seeded size/power simulation harness."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
from scipy import stats

from .estimator import FitResult, RegressionSpec, fit
from .inference import VcovSpec

__all__ = [
    "TestReport",
    "balanced_subpanel",
    "ht_moments",
    "harris_tzavalis",
    "lm_serial",
    "compare_series",
    "cross_database_fit",
    "rejection_rate",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TestReport:
    """Outcome of a hypothesis test."""

    __test__ = False  # not a pytest class

    name: str
    statistic: float
    pvalue: float
    null: str
    options: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.pvalue <= 1.0:
            raise ValueError("p-value outside [0, 1]")

    def reject(self, alpha: float = 0.05) -> bool:
        return self.pvalue < alpha

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


# --------------------------------------------------------------------------
# Harris-Tzavalis


def balanced_subpanel(panel: pd.DataFrame, variable: str, entity: str = "region_id",
                      time: str = "year") -> pd.DataFrame:
    """Wide ``entity x time`` matrix of the largest balanced block.

    Among all windows of consecutive periods, the one maximizing
    ``complete entities x window length`` is kept (ties: longer window, then
    earlier start). Entities incomplete on that window are dropped and logged.
    """
    wide = panel.pivot_table(index=entity, columns=time, values=variable, aggfunc="first", dropna=False)
    wide = wide.reindex(columns=np.arange(int(wide.columns.min()), int(wide.columns.max()) + 1))
    ok = wide.notna().to_numpy()
    n_t = ok.shape[1]
    best = (-1, 0, 0, 0)
    # run[i, j]: consecutive observed periods of entity i ending at column j
    run = np.zeros_like(ok, dtype=np.int64)
    for j in range(n_t):
        run[:, j] = np.where(ok[:, j], (run[:, j - 1] if j else 0) + 1, 0)
    for end in range(n_t):
        for length in range(1, end + 2):
            n_ok = int(np.count_nonzero(run[:, end] >= length))
            key = (n_ok * length, length, -(end - length + 1))
            if key > best[:3]:
                best = (*key, end)
    _, length, neg_start, end = best
    start = -neg_start
    cols = wide.columns[start:end + 1]
    block = wide.loc[run[:, end] >= length, cols]
    n_dropped = len(wide) - len(block)
    if n_dropped or len(cols) < n_t:
        logger.info("balanced sub-panel: %d entities x periods %s-%s (%d entities dropped)",
                    len(block), cols[0], cols[-1], n_dropped)
    return block


def ht_moments(T: int, case: str) -> tuple[float, float]:
    """Fixed-T null mean and variance of the pooled autoregressive estimate.

    ``T`` is the number of autoregression observations per entity.
    ``case``: ``"none"`` (no deterministic terms), ``"fe"`` (entity means),
    ``"trend"`` (entity means and trends).
    """
    if case == "none":
        return 1.0, 2.0 / (T * (T - 1))
    if case == "fe":
        return 1 - 3 / (T + 1), 3 * (17 * T**2 - 20 * T + 17) / (5 * (T - 1) * (T + 1) ** 3)
    if case == "trend":
        mean = 1 - 15 / (2 * (T + 2))
        var = 15 * (193 * T**2 - 728 * T + 1147) / (112 * (T + 2) ** 3 * (T - 2))
        return mean, var
    raise ValueError("case must be 'none', 'fe' or 'trend'")


def _within(M: np.ndarray, degree: int) -> np.ndarray:
    """Residualize each row of ``M`` on a polynomial in time of ``degree``."""
    if degree < 0:
        return M
    t = np.arange(M.shape[1], dtype=float)
    t = (t - t.mean()) / max(t.std(), 1.0)
    B = np.column_stack([t**k for k in range(degree + 1)])
    coef = np.linalg.lstsq(B, M.T, rcond=None)[0]
    return M - (B @ coef).T


def harris_tzavalis(
    panel: pd.DataFrame | np.ndarray,
    variable: str | None = None,
    trend: bool = False,
    cross_demean: bool = False,
    demean: bool = True,
    entity: str = "region_id",
    time: str = "year",
) -> TestReport:
    """Harris-Tzavalis panel unit-root test.

    Pooled within estimate of ``rho`` in ``y_it = rho y_{i,t-1} + mu_i
    (+ tau_i t) + e_it``, standardized with the fixed-T null moments:
    ``z = sqrt(N) (rho - E[rho]) / sqrt(Var)``. The null that every panel
    has a unit root is rejected for small ``z`` (one-sided p-value).

    ``panel`` is a long frame (with ``variable``) or an ``N x T`` array.
    ``demean=False`` drops the entity means (only without ``trend``);
    ``cross_demean`` subtracts the cross-sectional mean of each period first.
    """
    if isinstance(panel, np.ndarray):
        Y = np.asarray(panel, dtype=float)
    else:
        if variable is None:
            raise ValueError("variable is required for a long panel")
        Y = balanced_subpanel(panel, variable, entity, time).to_numpy(float)
    if Y.ndim != 2:
        raise ValueError("expected a two-dimensional entity x time array")
    N, n_periods = Y.shape
    T = n_periods - 1
    if T < 3:
        raise ValueError("Harris-Tzavalis needs at least 4 periods (3 autoregression observations)")
    if N < 10:
        warnings.warn(f"only {N} panels; fixed-T asymptotics rely on large N", stacklevel=2)
    if trend and not demean:
        raise ValueError("a trend without entity means is not supported")
    if cross_demean:
        Y = Y - Y.mean(axis=0, keepdims=True)
    case = "trend" if trend else ("fe" if demean else "none")
    degree = {"none": -1, "fe": 0, "trend": 1}[case]
    y = _within(Y[:, 1:], degree)
    ylag = _within(Y[:, :-1], degree)
    denom = float(np.sum(ylag**2))
    if denom <= 1e-20 * float(np.sum(Y**2)) or denom == 0:
        raise ValueError("series has no variation after removing deterministic terms")
    rho = float(np.sum(y * ylag) / denom)
    mean, var = ht_moments(T, case)
    z = np.sqrt(N) * (rho - mean) / np.sqrt(var)
    return TestReport(
        name="harris_tzavalis",
        statistic=float(z),
        pvalue=float(stats.norm.cdf(z)),
        null="all panels contain unit roots",
        options={"trend": trend, "cross_demean": cross_demean, "demean": demean},
        details={"rho": rho, "rho_null_mean": mean, "rho_null_var": var, "N": int(N), "T": int(T)},
    )


# --------------------------------------------------------------------------
# serial correlation


def _annihilator(times: np.ndarray, degree: int) -> np.ndarray:
    t = times.astype(float)
    t = (t - t.mean()) / max(t.std(), 1.0)
    B = np.column_stack([t**k for k in range(degree + 1)])
    return np.eye(len(t)) - B @ np.linalg.pinv(B)


def lm_serial(
    residuals,
    order: int = 1,
    degree: int | None = None,
    entity: str = "region_id",
    time: str = "year",
) -> TestReport:
    """LM test of no serial correlation at lag ``order`` in fixed-effects
    residuals, robust to heteroskedasticity across entities.

    For entity ``i`` let ``S_i = sum_t e_t e_{t-k}`` and let ``M_i`` be the
    annihilator of the per-entity deterministic terms (``degree`` 0: mean;
    1: mean and trend; taken from the fit's trend term when ``residuals`` is
    a FitResult). Under the null ``E[S_i] = sigma_i^2 tr_k(M_i)``, so

        c_i = S_i - tr_k(M_i) / (T_i - p) * sum_t e_t^2,    Z = sum c_i / sqrt(sum c_i^2)

    is asymptotically standard normal (``tr_k`` sums the ``k``-th
    subdiagonal, ``p = degree + 1``). Two-sided p-value.

    ``residuals``: a FitResult, or a frame with ``entity``, ``time`` and
    ``resid`` columns.
    """
    if isinstance(residuals, FitResult):
        frame = residuals.sample[[residuals.entity, residuals.time]].copy()
        frame.columns = [entity, time]
        frame["resid"] = residuals.resid
        if degree is None:
            trends = [t.degree for t in residuals.spec.fe if t.kind == "trend" and residuals.entity in t.factors]
            degree = max(trends) if trends else 0
    else:
        frame = residuals[[entity, time, "resid"]].dropna()
    degree = 0 if degree is None else int(degree)
    if order < 1:
        raise ValueError("order must be at least 1")
    frame = frame.sort_values([entity, time], kind="mergesort")
    p = degree + 1
    c_all = []
    t_max = 0
    for times_key, grp in _by_pattern(frame, entity, time):
        times = np.asarray(times_key, dtype=np.int64)
        t_max = max(t_max, len(times))
        if len(times) - p < 1:
            continue
        E = grp  # (n_entities, T_i)
        pos = {v: j for j, v in enumerate(times)}
        pairs = [(pos[v], pos[v - order]) for v in times if v - order in pos]
        if not pairs:
            continue
        a = np.array([q[0] for q in pairs])
        b = np.array([q[1] for q in pairs])
        S = np.sum(E[:, a] * E[:, b], axis=1)
        M = _annihilator(times, degree)
        trk = float(np.sum(M[a, b]))
        c_all.append(S - trk / (len(times) - p) * np.sum(E**2, axis=1))
    if order >= t_max - 1:
        raise ValueError(f"order {order} too large for panels of length {t_max}")
    if not c_all:
        raise ValueError("no entity has usable lag pairs")
    c = np.concatenate(c_all)
    denom = float(np.sqrt(np.sum(c**2)))
    if denom == 0:
        raise ValueError("residuals are degenerate")
    z = float(np.sum(c) / denom)
    return TestReport(
        name="lm_serial",
        statistic=z,
        pvalue=float(2 * stats.norm.sf(abs(z))),
        null=f"no serial correlation at order {order}",
        options={"order": order, "degree": degree},
        details={"N": int(c.size)},
    )


def _by_pattern(frame: pd.DataFrame, entity: str, time: str):
    """Yield ``(times, residual matrix)`` for entities sharing a time pattern."""
    patterns: dict[tuple, list] = {}
    for ent, times in frame.groupby(entity, sort=False)[time]:
        patterns.setdefault(tuple(times.to_numpy().tolist()), []).append(ent)
    for times, ents in patterns.items():
        sub = frame[frame[entity].isin(ents)]
        yield times, sub["resid"].to_numpy(float).reshape(len(ents), len(times))


# --------------------------------------------------------------------------
# dataset comparison


def compare_series(a, b) -> dict:
    """Paired two-sided t-test, Pearson and Spearman (midrank) correlations."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("series must be one-dimensional and of equal length")
    if a.size < 3:
        raise ValueError("need at least 3 paired observations")
    d = a - b
    if np.all(d == 0):
        t_stat, t_p = 0.0, 1.0
    else:
        res = stats.ttest_rel(a, b)
        t_stat, t_p = float(res.statistic), float(res.pvalue)
    pr = stats.pearsonr(a, b)
    sr = stats.spearmanr(a, b)
    return {
        "n": int(a.size),
        "mean_diff": float(d.mean()),
        "t": t_stat,
        "t_pvalue": t_p,
        "pearson": float(pr.statistic),
        "pearson_pvalue": float(pr.pvalue),
        "spearman": float(sr.statistic),
        "spearman_pvalue": float(sr.pvalue),
    }


def cross_database_fit(
    panel: pd.DataFrame,
    response: str,
    regressor: str,
    fe=("region_id", "year"),
    vcov: VcovSpec | None = None,
    weights: str | None = None,
) -> FitResult:
    """Regress one database's series on another's with fixed effects."""
    spec = RegressionSpec(response=response, regressors=(regressor,), fe=tuple(fe), weights=weights,
                          vcov=vcov or VcovSpec("cluster", ("country_id",)))
    return fit(panel, spec)


# --------------------------------------------------------------------------
# simulation harness


def rejection_rate(
    simulate: Callable[[np.random.Generator], object],
    test: Callable[[object], TestReport],
    n_sims: int,
    seed: int,
    alpha: float = 0.05,
) -> dict:
    """Share of ``n_sims`` seeded replications in which ``test`` rejects.

    Replication ``r`` draws its data from ``default_rng(SeedSequence(seed,
    spawn_key=(r,)))``, so any subset of replications can be rerun.
    """
    rejections = 0
    stats_ = np.empty(n_sims)
    for r in range(n_sims):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))
        report = test(simulate(rng))
        stats_[r] = report.statistic
        rejections += report.reject(alpha)
    rate = rejections / n_sims
    return {"n_sims": n_sims, "alpha": alpha, "rate": rate,
            "mc_se": float(np.sqrt(rate * (1 - rate) / n_sims)),
            "statistic_mean": float(stats_.mean()), "statistic_sd": float(stats_.std(ddof=1)) if n_sims > 1 else 0.0}
