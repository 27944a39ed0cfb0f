"""Covariance estimators, marginal effects and derived climate quantities.

All covariance estimators are sandwiches built on the absorbed design of a
:class:`~climgrowth.estimator.FitResult`,

    V = (X'WX)^-1 M (X'WX)^-1,   scores s_i = w_i x_i e_i,

and differ only in the meat ``M``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .panel import diff_name, interaction_name, square_name

if TYPE_CHECKING:  # pragma: no cover
    from .estimator import FitResult

__all__ = [
    "VcovSpec",
    "vcov_classical",
    "vcov_robust",
    "vcov_cluster",
    "vcov_twoway",
    "vcov_hac",
    "compute_vcov",
    "QuadraticResponse",
    "MarginalCurve",
    "OptimalLevel",
    "growth_response",
    "level_response",
    "marginal_effect",
    "optimal_level",
    "annualize_decadal",
    "decadalize_annual",
]


@dataclass(frozen=True)
class VcovSpec:
    """Covariance estimator choice.

    kind : {"classical", "robust", "cluster", "twoway", "hac"}
    factors : cluster column(s): one for ``cluster``, two for ``twoway``;
        for ``hac`` an optional ``(entity, time)`` pair.
    bandwidth : Bartlett-kernel lag truncation for ``hac``.
    hac_kind : ``"driscoll_kraay"`` pools scores within time periods before
        the kernel; ``"newey_west"`` uses within-entity autocovariances only.
    small_sample : apply the finite-sample scaling of each estimator.
    nested_fe : ``"exclude"`` (default) leaves fixed effects nested within the
        clusters out of ``K`` in the cluster scaling ``(N-1)/(N-K)``;
        ``"include"`` counts every absorbed parameter.
    """

    kind: str = "robust"
    factors: tuple[str, ...] = ()
    bandwidth: int = 0
    hac_kind: str = "driscoll_kraay"
    small_sample: bool = True
    nested_fe: str = "exclude"

    def __post_init__(self):
        if self.kind not in ("classical", "robust", "cluster", "twoway", "hac"):
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if self.kind == "cluster" and len(self.factors) != 1:
            raise ValueError("one-way clustering needs exactly one factor")
        if self.kind == "twoway" and len(self.factors) != 2:
            raise ValueError("two-way clustering needs two factors")
        if self.bandwidth < 0:
            raise ValueError("bandwidth must be non-negative")
        if self.hac_kind not in ("driscoll_kraay", "newey_west"):
            raise ValueError("hac_kind must be 'driscoll_kraay' or 'newey_west'")
        if self.nested_fe not in ("exclude", "include"):
            raise ValueError("nested_fe must be 'exclude' or 'include'")

    @classmethod
    def from_dict(cls, d: dict | None) -> "VcovSpec":
        if d is None:
            return cls()
        d = dict(d)
        factors = d.pop("factors", d.pop("cluster", ()))
        if isinstance(factors, str):
            factors = (factors,)
        return cls(factors=tuple(factors), **d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "factors": list(self.factors), "bandwidth": self.bandwidth,
                "hac_kind": self.hac_kind, "small_sample": self.small_sample, "nested_fe": self.nested_fe}


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2


def _scores(fit: "FitResult") -> np.ndarray:
    return fit.design * (fit.weights * fit.resid)[:, None]


def _sandwich(fit: "FitResult", meat: np.ndarray) -> np.ndarray:
    b = fit.bread
    return _symmetrize(b @ meat @ b)


def _frame(fit: "FitResult", cov: np.ndarray) -> pd.DataFrame:
    names = list(fit.params.index)
    return pd.DataFrame(cov, index=names, columns=names)


def _n_k(fit: "FitResult") -> tuple[int, int]:
    return fit.nobs, fit.nobs - fit.df_resid


def vcov_classical(fit: "FitResult") -> pd.DataFrame:
    """Homoskedastic covariance ``s^2 (X'WX)^-1`` with ``s^2 = sum(w e^2) / dof``."""
    s2 = float(np.sum(fit.weights * fit.resid**2)) / fit.df_resid
    return _frame(fit, _symmetrize(s2 * fit.bread))


def vcov_robust(fit: "FitResult", small_sample: bool = True) -> pd.DataFrame:
    """Heteroskedasticity-robust (HC1 when ``small_sample``) covariance."""
    s = _scores(fit)
    cov = _sandwich(fit, s.T @ s)
    if small_sample:
        n, k = _n_k(fit)
        cov = cov * n / (n - k)
    return _frame(fit, cov)


def _cluster_meat(scores: np.ndarray, codes: np.ndarray) -> np.ndarray:
    sums = np.zeros((codes.max() + 1, scores.shape[1]))
    np.add.at(sums, codes, scores)
    return sums.T @ sums


def _nested_dof(fit: "FitResult", codes: np.ndarray) -> int:
    """Absorbed parameters of fixed-effect terms nested within the clusters."""
    total = 0
    for factors, rank in fit.fe_ranks:
        if not all(f in fit.sample.columns for f in factors):
            continue
        key = pd.MultiIndex.from_frame(fit.sample[list(factors)]).factorize()[0]
        per_group = pd.Series(codes).groupby(key).nunique()
        if per_group.max() == 1:
            total += rank
    return total


def _cluster_cov(fit: "FitResult", codes: np.ndarray, small_sample: bool, nested_fe: str = "exclude") -> np.ndarray:
    g = int(codes.max()) + 1
    if g < 2:
        raise ValueError("clustered covariance needs at least two clusters")
    cov = _sandwich(fit, _cluster_meat(_scores(fit), codes))
    if small_sample:
        n, k = _n_k(fit)
        if nested_fe == "exclude":
            nested = _nested_dof(fit, codes)
            # keep at least the regressors and one absorbed level when something was absorbed
            k = max(k - nested + (1 if nested else 0), fit.nobs - fit.df_resid - fit.df_absorbed)
        cov = cov * (g / (g - 1)) * ((n - 1) / (n - k))
    return cov


def _cluster_codes(fit: "FitResult", factors: Sequence[str]) -> np.ndarray:
    missing = [f for f in factors if f not in fit.sample.columns]
    if missing:
        raise KeyError(f"cluster factor(s) not in the estimation sample: {missing}")
    if len(factors) == 1:
        return pd.factorize(fit.sample[factors[0]], sort=True)[0]
    return pd.MultiIndex.from_frame(fit.sample[list(factors)]).factorize(sort=True)[0]


def vcov_cluster(fit: "FitResult", factor: str, small_sample: bool = True, nested_fe: str = "exclude") -> pd.DataFrame:
    """One-way cluster-robust covariance with the CR1 scaling
    ``G/(G-1) * (N-1)/(N-K)``.

    ``K`` counts the regressors and the absorbed parameters, except (with
    ``nested_fe="exclude"``) those of fixed-effect terms nested within the
    clusters, which cost no cluster-level degrees of freedom.
    """
    return _frame(fit, _cluster_cov(fit, _cluster_codes(fit, [factor]), small_sample, nested_fe))


def _psd_floor(cov: np.ndarray, label: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -1e-12 * max(abs(vals).max(), 1e-300):
        warnings.warn(f"{label} covariance is not positive semi-definite; negative eigenvalues floored at 0",
                      stacklevel=3)
        cov = _symmetrize((vecs * np.clip(vals, 0, None)) @ vecs.T)
    return cov


def vcov_twoway(fit: "FitResult", factor_a: str, factor_b: str, small_sample: bool = True,
                nested_fe: str = "exclude") -> pd.DataFrame:
    """Two-way clustered covariance ``V(a) + V(b) - V(a and b)``.

    Each term carries its own CR1 scaling. Negative eigenvalues of the result
    are floored at zero with a warning.
    """
    ca = _cluster_codes(fit, [factor_a])
    cb = _cluster_codes(fit, [factor_b])
    if factor_a == factor_b:
        return _frame(fit, _cluster_cov(fit, ca, small_sample, nested_fe))
    cab = _cluster_codes(fit, [factor_a, factor_b])
    cov = _cluster_cov(fit, ca, small_sample, nested_fe) + _cluster_cov(fit, cb, small_sample, nested_fe)
    if cab.max() + 1 >= 2:
        cov = cov - _cluster_cov(fit, cab, small_sample, nested_fe)
    return _frame(fit, _psd_floor(_symmetrize(cov), "two-way clustered"))


def bartlett_weights(bandwidth: int) -> np.ndarray:
    """Kernel weights ``1 - l/(L+1)`` for lags ``l = 0..L``."""
    return 1.0 - np.arange(bandwidth + 1) / (bandwidth + 1.0)


def vcov_hac(
    fit: "FitResult",
    bandwidth: int,
    time: str | None = None,
    entity: str | None = None,
    kind: str = "driscoll_kraay",
    small_sample: bool = True,
) -> pd.DataFrame:
    """Bartlett-kernel HAC covariance for panels.

    ``kind="driscoll_kraay"`` sums scores across entities in each period and
    applies the kernel to the autocovariances of those period totals, so it is
    robust to cross-sectional and serial correlation; with ``bandwidth=0`` it
    equals clustering on time. ``kind="newey_west"`` applies the kernel to
    within-entity autocovariances only; with ``bandwidth=0`` it equals the
    heteroskedasticity-robust covariance.

    Lags are measured in units of the (integer) ``time`` column.
    ``small_sample`` scales by ``N/(N-K)``.
    """
    time = time or fit.time
    entity = entity or fit.entity
    if kind not in ("driscoll_kraay", "newey_west"):
        raise ValueError("kind must be 'driscoll_kraay' or 'newey_west'")
    t = fit.sample[time].to_numpy()
    tcodes, tvals = pd.factorize(t, sort=True)
    tvals = np.asarray(tvals, dtype=np.int64)
    n_periods = int(tvals.max() - tvals.min()) + 1
    if bandwidth < 0:
        raise ValueError("bandwidth must be non-negative")
    if bandwidth >= n_periods:
        raise ValueError(f"bandwidth {bandwidth} must be smaller than the number of periods ({n_periods})")
    s = _scores(fit)
    kw = bartlett_weights(bandwidth)
    if kind == "driscoll_kraay":
        tot = np.zeros((n_periods, s.shape[1]))
        np.add.at(tot, t.astype(np.int64) - tvals.min(), s)
        meat = tot.T @ tot
        for lag in range(1, bandwidth + 1):
            gam = tot[lag:].T @ tot[:-lag]
            meat += kw[lag] * (gam + gam.T)
    else:
        ecodes = pd.factorize(fit.sample[entity], sort=True)[0]
        meat = s.T @ s
        if bandwidth:
            key = pd.Series(np.arange(len(s)), index=pd.MultiIndex.from_arrays([ecodes, t.astype(np.int64)]))
            for lag in range(1, bandwidth + 1):
                prev = key.reindex(pd.MultiIndex.from_arrays([ecodes, t.astype(np.int64) - lag])).to_numpy()
                ok = ~np.isnan(prev)
                if ok.any():
                    cur = s[ok]
                    lagged = s[prev[ok].astype(np.int64)]
                    gam = cur.T @ lagged
                    meat += kw[lag] * (gam + gam.T)
    cov = _sandwich(fit, meat)
    if small_sample:
        n, k = _n_k(fit)
        cov = cov * n / (n - k)
    return _frame(fit, cov)


def compute_vcov(fit: "FitResult", spec: VcovSpec) -> pd.DataFrame:
    """Dispatch on a :class:`VcovSpec`."""
    if spec.kind == "classical":
        return vcov_classical(fit)
    if spec.kind == "robust":
        return vcov_robust(fit, spec.small_sample)
    if spec.kind == "cluster":
        return vcov_cluster(fit, spec.factors[0], spec.small_sample, spec.nested_fe)
    if spec.kind == "twoway":
        return vcov_twoway(fit, spec.factors[0], spec.factors[1], spec.small_sample, spec.nested_fe)
    entity, time = (spec.factors + (None, None))[:2] if spec.factors else (None, None)
    return vcov_hac(fit, spec.bandwidth, time=time, entity=entity, kind=spec.hac_kind,
                    small_sample=spec.small_sample)


# --------------------------------------------------------------------------
# quadratic responses


@dataclass(frozen=True)
class QuadraticResponse:
    """Coefficients ``b1`` (linear) and ``b2`` (quadratic) of a response
    ``b1 * x + b2 * x**2`` together with their 2x2 covariance."""

    linear: float
    quadratic: float
    cov: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    names: tuple[str, str] = ("linear", "quadratic")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self.linear * x + self.quadratic * x**2


def _pick(fit, names) -> tuple[np.ndarray, np.ndarray]:
    missing = [n for n in names if n not in fit.params.index]
    if missing:
        raise KeyError(f"coefficient(s) not in fit: {missing}")
    b = fit.params[list(names)].to_numpy(float)
    c = fit.cov.loc[list(names), list(names)].to_numpy(float) if fit.cov is not None else np.zeros((2, 2))
    return b, c


def growth_response(fit: "FitResult", variable: str = "T", terms: tuple[str, str] | None = None) -> QuadraticResponse:
    """Growth-effect pair (``V``, ``V^2``) of a fit."""
    names = terms or (variable, square_name(variable))
    b, c = _pick(fit, names)
    return QuadraticResponse(b[0], b[1], c, tuple(names))


def level_response(
    fit: "FitResult", variable: str = "T", lag_form: str = "contemporaneous", terms: tuple[str, str] | None = None
) -> QuadraticResponse:
    """Level-effect pair (``dV``, ``dV * V``) of a fit."""
    names = terms or (diff_name(variable), interaction_name(variable, lag_form))
    b, c = _pick(fit, names)
    return QuadraticResponse(b[0], b[1], c, tuple(names))


@dataclass(frozen=True)
class MarginalCurve:
    """Marginal effects over a grid with delta-method standard errors."""

    grid: np.ndarray
    effect: np.ndarray
    se: np.ndarray
    conf: float = 0.90
    kind: str = "growth"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("evaluation grid must be strictly increasing")

    @property
    def lo(self) -> np.ndarray:
        return self.effect - stats.norm.ppf(0.5 + self.conf / 2) * self.se

    @property
    def hi(self) -> np.ndarray:
        return self.effect + stats.norm.ppf(0.5 + self.conf / 2) * self.se

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"level": self.grid, "effect": self.effect, "se": self.se, "lo": self.lo, "hi": self.hi})


def _as_response(obj, variable, kind, lag_form, terms) -> tuple[QuadraticResponse, float]:
    if isinstance(obj, QuadraticResponse):
        return obj, 2.0 if kind == "growth" else 1.0
    if kind == "growth":
        return growth_response(obj, variable, terms), 2.0
    mult = 2.0 if lag_form == "summed" else 1.0
    return level_response(obj, variable, lag_form, terms), mult


def marginal_effect(
    fit,
    kind: str = "growth",
    at=None,
    variable: str = "T",
    lag_form: str = "contemporaneous",
    conf: float = 0.90,
    terms: tuple[str, str] | None = None,
) -> MarginalCurve:
    """Marginal effect of a one-unit change in ``variable`` over ``at``.

    ``kind="growth"``: ``b1 + 2 b2 x`` from the (``V``, ``V^2``) pair.
    ``kind="level"``: ``b1 + c b2 x`` from the (``dV``, ``dV*V``) pair, with
    ``c = 1`` for the contemporaneous and lagged interactions and ``c = 2``
    for the summed one (evaluated at ``V_t = V_{t-1} = x``).

    ``fit`` may be a FitResult or a :class:`QuadraticResponse`.
    """
    if kind not in ("growth", "level"):
        raise ValueError("kind must be 'growth' or 'level'")
    if at is None:
        raise ValueError("an evaluation grid is required")
    resp, mult = _as_response(fit, variable, kind, lag_form, terms)
    x = np.atleast_1d(np.asarray(at, dtype=float))
    effect = resp.linear + mult * resp.quadratic * x
    grad = np.column_stack([np.ones_like(x), mult * x])
    var = np.einsum("ij,jk,ik->i", grad, resp.cov, grad)
    formula = f"{resp.names[0]} + {mult:g}*{resp.names[1]}*x"
    return MarginalCurve(x, effect, np.sqrt(np.clip(var, 0, None)), conf, kind,
                         {"formula": formula, "variable": variable, "lag_form": lag_form})


@dataclass(frozen=True)
class OptimalLevel:
    value: float
    se: float
    concave: bool


def optimal_level(fit, variable: str = "T", terms: tuple[str, str] | None = None, tol: float = 1e-12) -> OptimalLevel:
    """Vertex ``-b1 / (2 b2)`` of the growth response with delta-method SE.

    ``fit`` may also be a :class:`QuadraticResponse` or a ``(linear,
    quadratic)`` pair. ``concave`` is true when ``b2 < 0`` (a maximum).
    """
    if isinstance(fit, tuple):
        resp = QuadraticResponse(float(fit[0]), float(fit[1]))
    elif isinstance(fit, QuadraticResponse):
        resp = fit
    else:
        resp = growth_response(fit, variable, terms)
    b1, b2 = resp.linear, resp.quadratic
    if abs(b2) < tol:
        raise ValueError("quadratic coefficient is zero: no interior optimum")
    value = -b1 / (2 * b2)
    grad = np.array([-1 / (2 * b2), b1 / (2 * b2**2)])
    se = float(np.sqrt(max(grad @ resp.cov @ grad, 0.0)))
    return OptimalLevel(float(value), se, bool(b2 < 0))


def _annualize(phi, convention: str = "magnitude", periods: int = 10):
    phi = np.asarray(phi, dtype=float)
    if convention == "magnitude":
        return np.sign(phi) * ((1 + np.abs(phi)) ** (1 / periods) - 1)
    if convention == "signed":
        with np.errstate(invalid="ignore"):
            return np.where(phi > -1, np.power(np.maximum(1 + phi, 0), 1 / periods) - 1, np.nan)
    raise ValueError("convention must be 'magnitude' or 'signed'")


def annualize_decadal(phi, convention: str = "magnitude", periods: int = 10):
    """Convert an effect on growth between ``periods``-year periods to an
    annual growth effect.

    ``"magnitude"``: ``sign(phi) * ((1 + |phi|)**(1/periods) - 1)``, the
    convention that turns -33.1% per decade into -2.9% per year.
    ``"signed"``: ``(1 + phi)**(1/periods) - 1``.

    Raises ``ValueError`` when any ``|phi| >= 1``.
    """
    arr = np.asarray(phi, dtype=float)
    if np.any(np.abs(arr) >= 1):
        raise ValueError("decadal effects must satisfy |phi| < 1")
    out = _annualize(arr, convention, periods)
    return float(out) if np.ndim(phi) == 0 else out


def decadalize_annual(tau, convention: str = "magnitude", periods: int = 10):
    """Inverse of :func:`annualize_decadal`."""
    tau = np.asarray(tau, dtype=float)
    if convention == "magnitude":
        out = np.sign(tau) * ((1 + np.abs(tau)) ** periods - 1)
    elif convention == "signed":
        out = (1 + tau) ** periods - 1
    else:
        raise ValueError("convention must be 'magnitude' or 'signed'")
    return float(out) if out.ndim == 0 else out
