"""Weighted least squares with absorbed fixed effects.

:func:`fit` follows the usual within-estimator recipe:

1. listwise deletion on every column the model uses,
2. weights from a column or a scheme recomputed on the surviving rows,
3. absorption of the fixed-effect terms from response and regressors,
4. rank-revealing QR on the absorbed design, dropping collinear columns,
5. WLS on what is left, then the requested covariance estimator.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
import scipy.linalg as sla
from scipy import stats

from .absorption import DEFAULT_MAXITER, DEFAULT_TOL, FETerm, FixedEffects, parse_fe_term
from .inference import VcovSpec, compute_vcov
from .panel import (
    bin_labels,
    compute_weights,
    diff_name,
    growth_name,
    interaction_name,
    square_name,
)

__all__ = [
    "RegressionSpec",
    "FitResult",
    "EstimationError",
    "fit",
    "fit_heterogeneous",
    "fit_binned",
    "bin_effects",
    "standard_spec",
    "interaction_column",
    "bin_columns",
]

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10
ABSORBED_TOL = 1e-6
RESID_TOL_FACTOR = 1e-4


class EstimationError(ValueError):
    """The design cannot be estimated (empty, rank zero, no residual dof)."""


@dataclass(frozen=True)
class RegressionSpec:
    """Declarative regression description.

    ``weights`` names a weight column; alternatively ``weight_scheme``
    (``"region"`` or ``"population"``) recomputes weights on the estimation
    sample after listwise deletion. ``interaction`` is an optional 0/1 dummy
    column: each of ``interaction_terms`` is then also entered multiplied by
    it (see :func:`fit_heterogeneous`).
    """

    response: str
    regressors: tuple[str, ...]
    fe: tuple[FETerm, ...] = ()
    weights: str | None = None
    weight_scheme: str | None = None
    vcov: VcovSpec = field(default_factory=lambda: VcovSpec("cluster", ("country_id",)))
    entity: str = "region_id"
    country: str = "country_id"
    time: str = "year"
    population: str = "pop"
    interaction: str | None = None
    interaction_terms: tuple[str, ...] = ("T", "d_T2")
    tol: float = DEFAULT_TOL
    maxiter: int = DEFAULT_MAXITER

    def __post_init__(self):
        object.__setattr__(self, "regressors", tuple(self.regressors))
        object.__setattr__(self, "fe", tuple(parse_fe_term(t) for t in self.fe))
        object.__setattr__(self, "interaction_terms", tuple(self.interaction_terms))
        if isinstance(self.vcov, dict):
            object.__setattr__(self, "vcov", VcovSpec.from_dict(self.vcov))
        if self.response in self.regressors:
            raise ValueError("response cannot also be a regressor")
        if len(set(self.regressors)) != len(self.regressors):
            raise ValueError("duplicate regressor names")
        if self.weights is not None and self.weight_scheme is not None:
            raise ValueError("give a weight column or a weight scheme, not both")
        if self.weight_scheme not in (None, "region", "population"):
            raise ValueError("weight_scheme must be 'region' or 'population'")

    @property
    def all_regressors(self) -> tuple[str, ...]:
        if self.interaction is None:
            return self.regressors
        return self.regressors + tuple(interaction_column(self.interaction, t) for t in self.interaction_terms)

    def required_columns(self) -> list[str]:
        cols = [self.response, *self.regressors]
        for t in self.fe:
            cols.extend(t.factors)
            if t.kind == "trend":
                cols.append(self.time)
        if self.weights:
            cols.append(self.weights)
        if self.weight_scheme == "region":
            cols += [self.country, self.time]
        if self.weight_scheme == "population":
            cols.append(self.population)
        if self.interaction is not None:
            cols += [self.interaction, *self.interaction_terms]
        cols += list(self.vcov.factors)
        if self.vcov.kind == "hac" and not self.vcov.factors:
            cols += [self.entity, self.time]
        return list(dict.fromkeys(cols))

    def to_dict(self) -> dict:
        d = {
            "response": self.response,
            "regressors": list(self.regressors),
            "fe": [t.label for t in self.fe],
            "weights": self.weights,
            "weight_scheme": self.weight_scheme,
            "vcov": self.vcov.to_dict(),
            "entity": self.entity,
            "country": self.country,
            "time": self.time,
            "population": self.population,
            "tol": self.tol,
            "maxiter": self.maxiter,
        }
        if self.interaction is not None:
            d["interaction"] = self.interaction
            d["interaction_terms"] = list(self.interaction_terms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionSpec":
        d = dict(d)
        d["regressors"] = tuple(d["regressors"])
        d["fe"] = tuple(parse_fe_term(t) for t in d.get("fe", ()))
        d["vcov"] = VcovSpec.from_dict(d.get("vcov"))
        if "interaction_terms" in d:
            d["interaction_terms"] = tuple(d["interaction_terms"])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RegressionSpec":
        return cls.from_dict(json.loads(text))


def interaction_column(dummy: str, term: str) -> str:
    return f"{dummy}_x_{term}"


def standard_spec(
    model: str = "annual",
    lag_form: str = "contemporaneous",
    variables: Sequence[str] = ("T", "P"),
    trend: int = 1,
    continent_year: bool = False,
    weight_scheme: str | None = "region",
    controls: Sequence[str] = (),
    vcov: VcovSpec | None = None,
) -> RegressionSpec:
    """The baseline growth regression on an annual or a long-difference panel.

    Regressors per weather variable ``V``: ``dV``, the ``dV``-by-level
    interaction for ``lag_form``, ``V`` and ``V^2``. Fixed effects: region,
    time (year or period; continent-by-time when ``continent_year``) and
    region-specific time trends of degree ``trend`` (0 for none).
    """
    if model not in ("annual", "long_difference"):
        raise ValueError("model must be 'annual' or 'long_difference'")
    time = "year" if model == "annual" else "period"
    regs: list[str] = []
    for v in variables:
        regs += [diff_name(v), interaction_name(v, lag_form), v, square_name(v)]
    regs += list(controls)
    fe: list = ["region_id", f"continent_id:{time}" if continent_year else time]
    if trend:
        fe.append(FETerm("trend", ("region_id",), trend))
    return RegressionSpec(
        response=growth_name(),
        regressors=tuple(regs),
        fe=tuple(fe),
        weight_scheme=weight_scheme,
        vcov=vcov or VcovSpec("cluster", ("country_id",)),
        time=time,
    )


@dataclass(frozen=True)
class FitResult:
    """Estimates and everything needed for post-estimation.

    ``design`` holds the absorbed regressors kept in the model and ``resid``
    the residuals, both on the estimation sample (``sample`` rows).
    ``fitted`` is on the scale of the original response.
    """

    params: pd.Series
    cov: pd.DataFrame | None
    resid: np.ndarray
    fitted: np.ndarray
    weights: np.ndarray
    design: np.ndarray
    bread: np.ndarray
    nobs: int
    df_resid: int
    df_absorbed: int
    df_method: str
    r2: float
    r2_within: float
    absorb_iterations: int
    dropped: tuple[str, ...]
    sample: pd.DataFrame
    spec: RegressionSpec
    fe_ranks: tuple = ()

    @property
    def entity(self) -> str:
        return self.spec.entity

    @property
    def time(self) -> str:
        return self.spec.time

    @property
    def bse(self) -> pd.Series:
        return pd.Series(np.sqrt(np.clip(np.diag(self.cov.to_numpy()), 0, None)), index=self.params.index)

    @property
    def tvalues(self) -> pd.Series:
        return self.params / self.bse

    @property
    def pvalues(self) -> pd.Series:
        return pd.Series(2 * stats.norm.sf(np.abs(self.tvalues)), index=self.params.index)

    def conf_int(self, level: float = 0.90) -> pd.DataFrame:
        z = stats.norm.ppf(0.5 + level / 2)
        return pd.DataFrame({"lo": self.params - z * self.bse, "hi": self.params + z * self.bse})

    def with_vcov(self, vcov: VcovSpec) -> "FitResult":
        """Same estimates with a different covariance estimator."""
        return replace(self, cov=compute_vcov(self, vcov), spec=replace(self.spec, vcov=vcov))

    def coef_table(self) -> pd.DataFrame:
        tab = pd.DataFrame({"coef": self.params, "se": self.bse, "t": self.tvalues, "p": self.pvalues})
        tab.index.name = "term"
        return tab

    def to_dict(self) -> dict:
        """JSON-ready summary: coefficients, covariance and fit statistics."""
        names = list(self.params.index)
        return {
            "params": {k: float(v) for k, v in self.params.items()},
            "cov": {"names": names, "matrix": self.cov.loc[names, names].to_numpy().tolist()},
            "nobs": self.nobs,
            "df_resid": self.df_resid,
            "df_absorbed": self.df_absorbed,
            "df_method": self.df_method,
            "r2": self.r2,
            "r2_within": self.r2_within,
            "absorb_iterations": self.absorb_iterations,
            "dropped": list(self.dropped),
            "spec": self.spec.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        """Rebuild a coefficients-and-covariance-only result (no residuals)."""
        names = d["cov"]["names"]
        params = pd.Series(d["params"], dtype=float)[names]
        cov = pd.DataFrame(np.asarray(d["cov"]["matrix"], dtype=float), index=names, columns=names)
        k = len(names)
        return cls(
            params=params, cov=cov, resid=np.zeros(0), fitted=np.zeros(0), weights=np.zeros(0),
            design=np.zeros((0, k)), bread=np.full((k, k), np.nan), nobs=int(d["nobs"]),
            df_resid=int(d["df_resid"]), df_absorbed=int(d["df_absorbed"]), df_method=d["df_method"],
            r2=float(d["r2"]), r2_within=float(d["r2_within"]), absorb_iterations=int(d["absorb_iterations"]),
            dropped=tuple(d["dropped"]), sample=pd.DataFrame(), spec=RegressionSpec.from_dict(d["spec"]),
        )


def _estimation_sample(panel: pd.DataFrame, spec: RegressionSpec) -> tuple[pd.DataFrame, np.ndarray]:
    need = spec.required_columns()
    missing = [c for c in need if c not in panel.columns]
    if missing:
        raise KeyError(f"columns missing from panel: {missing}")
    keep_cols = list(dict.fromkeys(need + [c for c in (spec.entity, spec.country, spec.time) if c in panel.columns]))
    sample = panel[keep_cols]
    numeric = [c for c in [spec.response, *spec.regressors] if c in sample.columns]
    ok = sample.notna().all(axis=1) & np.isfinite(sample[numeric].astype(float)).all(axis=1)
    n_drop = int((~ok).sum())
    if n_drop:
        logger.info("listwise deletion removed %d of %d rows", n_drop, len(sample))
    sample = sample.loc[ok].copy()
    if spec.interaction is not None:
        d = sample[spec.interaction].astype(float)
        if not d.isin([0.0, 1.0]).all():
            raise ValueError(f"interaction dummy {spec.interaction!r} must be 0/1")
        for t in spec.interaction_terms:
            sample[interaction_column(spec.interaction, t)] = d * sample[t].astype(float)
    if spec.weights is not None:
        w = sample[spec.weights].to_numpy(float)
    elif spec.weight_scheme is not None:
        w = compute_weights(sample, spec.weight_scheme, spec.country, spec.time, spec.population).to_numpy(float)
    else:
        w = np.ones(len(sample))
    if (w < 0).any():
        raise ValueError("negative weights")
    pos = w > 0
    if not pos.all():
        logger.info("dropping %d zero-weight row(s)", int((~pos).sum()))
        sample, w = sample.loc[pos], w[pos]
    return sample, w


def fit(panel: pd.DataFrame, spec: RegressionSpec, vcov: bool = True) -> FitResult:
    """Estimate ``spec`` on ``panel``.

    Regressors that the fixed effects absorb, or that are linear combinations
    of other regressors, are dropped with a warning and listed in
    ``dropped``. Residual degrees of freedom are ``N - rank(X) - df_absorbed``.
    Pass ``vcov=False`` to skip the covariance (``cov`` is then ``None``).
    """
    sample, w = _estimation_sample(panel, spec)
    n = len(sample)
    if n == 0:
        raise EstimationError("no rows left after listwise deletion")
    names = list(spec.all_regressors)
    if not names:
        raise EstimationError("no regressors to estimate")
    y = sample[spec.response].to_numpy(float)
    X = sample[names].to_numpy(float)

    fe = FixedEffects(sample, spec.fe, weights=w, time=spec.time)
    Z = fe.absorb(np.column_stack([y, X]), tol=spec.tol, maxiter=spec.maxiter)
    ya, Xa = Z[:, 0], Z[:, 1:]

    sw = np.sqrt(w)
    raw_norm = np.sqrt(np.sum(w[:, None] * X**2, axis=0))
    abs_norm = np.sqrt(np.sum(w[:, None] * Xa**2, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(raw_norm > 0, abs_norm / raw_norm, 0.0)
    alive = ratio > ABSORBED_TOL
    dropped = [nm for nm, a in zip(names, alive) if not a]
    if dropped:
        warnings.warn(f"regressor(s) absorbed by the fixed effects or identically zero, dropped: {dropped}",
                      stacklevel=2)
    idx = np.flatnonzero(alive)
    keep = idx
    if idx.size:
        Xs = (Xa[:, idx] * sw[:, None]) / raw_norm[idx]
        _, R, piv = sla.qr(Xs, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > RANK_TOL * diag[0])) if diag.size and diag[0] > 0 else 0
        keep = np.sort(idx[piv[:rank]])
        collinear = [names[j] for j in idx if j not in set(keep)]
        if collinear:
            warnings.warn(f"collinear regressor(s) dropped: {collinear}", stacklevel=2)
            dropped += collinear
    if keep.size == 0:
        raise EstimationError("design has rank zero after absorbing fixed effects")

    Xk = Xa[:, keep]
    Q, R = np.linalg.qr(Xk * sw[:, None])
    beta = sla.solve_triangular(R, Q.T @ (ya * sw))
    Rinv = sla.solve_triangular(R, np.eye(R.shape[0]))
    bread = Rinv @ Rinv.T
    # one-column refinement: residuals to a tighter tolerance than the design
    if fe.projectors:
        iters = fe.iterations
        resid = fe.absorb(y - X[:, keep] @ beta, tol=max(spec.tol * RESID_TOL_FACTOR, 1e-13), maxiter=spec.maxiter)
        fe.iterations = iters
    else:
        resid = ya - Xk @ beta
    fitted = y - resid

    df_abs, df_method = fe.degrees_of_freedom()
    df_resid = n - keep.size - df_abs
    if df_resid <= 0:
        raise EstimationError(
            f"fewer rows ({n}) than parameters ({keep.size} regressors + {df_abs} absorbed)"
        )
    rss = float(np.sum(w * resid**2))
    ybar = np.average(y, weights=w)
    tss = float(np.sum(w * (y - ybar) ** 2))
    tss_within = float(np.sum(w * ya**2))
    kept_names = [names[j] for j in keep]
    result = FitResult(
        params=pd.Series(beta, index=kept_names, name="coef"),
        cov=None,
        resid=resid,
        fitted=fitted,
        weights=w,
        design=Xk,
        bread=bread,
        nobs=n,
        df_resid=int(df_resid),
        df_absorbed=int(df_abs),
        df_method=df_method,
        r2=1 - rss / tss if tss > 0 else np.nan,
        r2_within=1 - rss / tss_within if tss_within > 0 else np.nan,
        absorb_iterations=fe.iterations,
        dropped=tuple(dropped),
        sample=sample,
        spec=spec,
        fe_ranks=tuple((t.factors, p.rank) for t, p in zip(_kept_terms(fe), fe.projectors)),
    )
    if vcov:
        result = replace(result, cov=compute_vcov(result, spec.vcov))
    return result


def _kept_terms(fe: FixedEffects) -> list[FETerm]:
    """Terms matching ``fe.projectors`` one to one."""
    return [parse_fe_term(p.label) for p in fe.projectors]


def fit_heterogeneous(
    panel: pd.DataFrame,
    spec: RegressionSpec,
    dummy: str,
    terms: Sequence[str] = ("T", "d_T2"),
    vcov: bool = True,
) -> FitResult:
    """Fit with ``dummy * term`` added for each of ``terms``.

    The group with ``dummy = 1`` has coefficients ``b_term + b_{dummy_x_term}``;
    the other group has ``b_term``. A constant dummy makes the interactions
    collinear, and they are dropped with a warning.
    """
    return fit(panel, replace(spec, interaction=dummy, interaction_terms=tuple(terms)), vcov=vcov)


def bin_columns(variable: str = "t") -> list[str]:
    """Indicator column names for the temperature (``"t"``) or precipitation
    (``"p"``) bins."""
    return [f"bin_{variable}_{k}" for k in bin_labels(variable)]


def fit_binned(
    panel: pd.DataFrame,
    spec: RegressionSpec,
    reference: dict | None = None,
    vcov: bool = True,
) -> FitResult:
    """Fit bin indicators in place of the quadratic climate terms.

    ``spec.regressors`` supplies any other regressors (the quadratic climate
    terms are normally left out). ``reference`` maps ``"t"``/``"p"`` to the
    omitted bin of each variable (default bin 5 for both). Bins with no
    observations in the estimation sample are dropped with a warning.
    Coefficients are effects relative to the reference bin.
    """
    reference = {"t": 5, "p": 5, **(reference or {})}
    bins: list[str] = []
    for var, ref in reference.items():
        cols = bin_columns(var)
        if cols[0] not in panel.columns:
            continue
        if ref not in bin_labels(var):
            raise ValueError(f"reference bin {ref} is not a bin of {var!r}")
        bins += [c for c in cols if c != f"bin_{var}_{ref}"]
    if not bins:
        raise KeyError("no bin indicator columns found; run bin_indicators first")
    full = replace(spec, regressors=tuple(c for c in spec.regressors if c not in bins) + tuple(bins))
    sample, _ = _estimation_sample(panel, full)
    empty = [c for c in bins if not (sample[c] != 0).any()]
    if empty:
        warnings.warn(f"empty bin(s) dropped: {empty}", stacklevel=2)
        full = replace(full, regressors=tuple(c for c in full.regressors if c not in empty))
    if not full.regressors:
        raise EstimationError("every non-reference bin is empty; nothing to estimate")
    return fit(panel, full, vcov=vcov)


def bin_effects(result: FitResult, variable: str = "t", reference: int = 5) -> pd.Series:
    """Effects of every bin of ``variable`` relative to ``reference``.

    The reference bin is 0 by construction; bins that were not estimated
    (empty or collinear) are NaN.
    """
    cols = bin_columns(variable)
    out = pd.Series(np.nan, index=cols, name="effect")
    out[f"bin_{variable}_{reference}"] = 0.0
    est = [c for c in cols if c in result.params.index]
    out[est] = result.params[est].to_numpy()
    return out
