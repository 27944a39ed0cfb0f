"""Weighted absorption of high-dimensional fixed effects.

Each fixed-effect term is a projector onto a group-wise basis:

* ``factor``: group dummies (basis ``1`` within each group),
* ``trend``: group-wise polynomial in time, basis ``(1, t, ..., t^degree)``,
* ``interact``: dummies of the cross of several factors.

A single projector is applied exactly. Several are combined by the method of
alternating projections, accelerated with the Irons-Tuck extrapolation step,
until, in every (standardized) column, both the largest change over a sweep
and the geometric estimate of the remaining error, ``change * r / (1 - r)``
with ``r`` the observed contraction rate, fall below ``tol``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.sparse as sp

__all__ = [
    "FETerm",
    "parse_fe_term",
    "ConvergenceError",
    "Projector",
    "FixedEffects",
]

DEFAULT_TOL = 1e-8
DEFAULT_MAXITER = 10_000
FLOOR = 1e-14


class ConvergenceError(RuntimeError):
    """Alternating projections did not converge; ``delta`` is the last change."""

    def __init__(self, message: str, delta: float, iterations: int):
        super().__init__(message)
        self.delta = delta
        self.iterations = iterations


@dataclass(frozen=True)
class FETerm:
    """A fixed-effect term.

    ``kind`` is ``"factor"`` (one factor), ``"trend"`` (factor-specific time
    polynomial of ``degree`` 1 or 2, intercept included) or ``"interact"``
    (cross of two or more factors, e.g. continent-by-year).
    """

    kind: str
    factors: tuple[str, ...]
    degree: int = 0

    def __post_init__(self):
        if self.kind not in ("factor", "trend", "interact"):
            raise ValueError(f"unknown fixed-effect kind {self.kind!r}")
        if self.kind == "trend" and self.degree not in (1, 2):
            raise ValueError("trend degree must be 1 or 2")
        if self.kind != "trend" and self.degree != 0:
            raise ValueError("only trend terms carry a degree")
        if self.kind == "interact" and len(self.factors) < 2:
            raise ValueError("interact terms need at least two factors")
        if self.kind in ("factor", "trend") and len(self.factors) != 1:
            raise ValueError(f"{self.kind} terms take exactly one factor")

    @property
    def label(self) -> str:
        if self.kind == "factor":
            return self.factors[0]
        if self.kind == "trend":
            return f"{self.factors[0]}:trend" + ("2" if self.degree == 2 else "")
        return ":".join(self.factors)

    def to_dict(self) -> dict:
        if self.kind == "trend":
            return {"factor": self.factors[0], "trend": self.degree}
        if self.kind == "interact":
            return {"factors": list(self.factors)}
        return {"factor": self.factors[0]}


def parse_fe_term(term) -> FETerm:
    """Build a term from a string or mapping.

    Strings: ``"region_id"``, ``"region_id:trend"``, ``"region_id:trend2"``,
    ``"continent_id:year"``. Mappings: ``{"factor": f}``,
    ``{"factor": f, "trend": 1}``, ``{"factors": [a, b]}``.
    """
    if isinstance(term, FETerm):
        return term
    if isinstance(term, str):
        parts = term.split(":")
        if len(parts) == 1:
            return FETerm("factor", (parts[0],))
        if len(parts) == 2 and parts[1] in ("trend", "trend1", "trend2"):
            return FETerm("trend", (parts[0],), 2 if parts[1] == "trend2" else 1)
        return FETerm("interact", tuple(parts))
    if isinstance(term, dict):
        if "factors" in term:
            return FETerm("interact", tuple(term["factors"]))
        if term.get("trend"):
            return FETerm("trend", (term["factor"],), int(term["trend"]))
        return FETerm("factor", (term["factor"],))
    raise TypeError(f"cannot interpret fixed-effect term {term!r}")


def _codes(frame: pd.DataFrame, factors) -> np.ndarray:
    if len(factors) == 1:
        codes, _ = pd.factorize(frame[factors[0]], sort=True)
    else:
        codes = pd.MultiIndex.from_frame(frame[list(factors)]).factorize(sort=True)[0]
    if (codes < 0).any():
        raise ValueError(f"missing values in fixed-effect factor(s) {factors}")
    return codes.astype(np.int64)


@dataclass
class Projector:
    """Weighted projection onto a group-wise basis (see module docstring)."""

    codes: np.ndarray
    n_groups: int
    weights: np.ndarray
    basis: np.ndarray | None = None  # (n, d+1) or None for plain dummies
    label: str = ""
    _indicator: sp.csr_matrix = field(init=False, repr=False)
    _gram_pinv: np.ndarray = field(init=False, repr=False)
    _wsum: np.ndarray = field(init=False, repr=False)
    _rank: int = field(init=False, repr=False)

    def __post_init__(self):
        n = self.codes.size
        self._indicator = sp.csr_matrix(
            (np.ones(n), (self.codes, np.arange(n))), shape=(self.n_groups, n)
        )
        if self.basis is None:
            self._wsum = np.bincount(self.codes, weights=self.weights, minlength=self.n_groups)
            self._gram_pinv = None
            self._rank = int(np.count_nonzero(self._wsum > 0))
        else:
            k = self.basis.shape[1]
            gram = np.empty((self.n_groups, k, k))
            for a in range(k):
                for b in range(a, k):
                    s = np.bincount(self.codes, weights=self.weights * self.basis[:, a] * self.basis[:, b],
                                    minlength=self.n_groups)
                    gram[:, a, b] = gram[:, b, a] = s
            self._gram_pinv = np.linalg.pinv(gram, rcond=1e-10, hermitian=True)
            self._rank = int(np.sum(np.linalg.matrix_rank(gram, hermitian=True)))

    @property
    def rank(self) -> int:
        """Dimension of the projector's span on rows with positive weight."""
        return self._rank

    def fitted(self, X: np.ndarray) -> np.ndarray:
        """Weighted group-wise least-squares fit of each column of ``X``."""
        wX = X * self.weights[:, None]
        if self.basis is None:
            sums = self._indicator @ wX
            with np.errstate(divide="ignore", invalid="ignore"):
                means = np.where(self._wsum[:, None] > 0, sums / self._wsum[:, None], 0.0)
            return means[self.codes]
        k = self.basis.shape[1]
        moments = np.stack([self._indicator @ (wX * self.basis[:, [a]]) for a in range(k)], axis=1)
        coef = np.einsum("gab,gbc->gac", self._gram_pinv, moments)
        rows = coef[self.codes]  # (n, k, p)
        return np.einsum("na,nap->np", self.basis, rows)

    def residualize(self, X: np.ndarray) -> np.ndarray:
        return X - self.fitted(X)

    def dense(self) -> np.ndarray:
        """Explicit basis matrix (for small problems and rank counting)."""
        n = self.codes.size
        if self.basis is None:
            D = np.zeros((n, self.n_groups))
            D[np.arange(n), self.codes] = 1.0
            return D
        k = self.basis.shape[1]
        D = np.zeros((n, self.n_groups * k))
        for a in range(k):
            D[np.arange(n), self.codes * k + a] = self.basis[:, a]
        return D


def _trend_basis(t: np.ndarray, codes: np.ndarray, n_groups: int, degree: int) -> np.ndarray:
    """Group-centered, scaled powers of time; spans the same space as (1, t, ..., t^d)."""
    cnt = np.bincount(codes, minlength=n_groups).astype(float)
    mean = np.bincount(codes, weights=t, minlength=n_groups) / np.maximum(cnt, 1)
    c = t - mean[codes]
    half = np.bincount(codes, weights=np.abs(c), minlength=n_groups) / np.maximum(cnt, 1)
    half = np.where(half > 0, half, 1.0)
    u = c / half[codes]
    return np.column_stack([u**k for k in range(degree + 1)])


class FixedEffects:
    """Absorbs a set of fixed-effect terms from the columns of a matrix.

    Parameters
    ----------
    frame : DataFrame
        Rows of the estimation sample; supplies the factor and time columns.
    terms : list of FETerm (or strings/mappings, see :func:`parse_fe_term`)
    weights : array, optional
        Non-negative observation weights (default ones).
    time : str
        Column used by trend terms.
    """

    def __init__(self, frame: pd.DataFrame, terms, weights=None, time: str = "year"):
        terms = [parse_fe_term(t) for t in terms]
        n = len(frame)
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise ValueError("weights must have one entry per row")
        if (w < 0).any() or not (w > 0).any():
            raise ValueError("weights must be non-negative and not all zero")
        self.terms = terms
        self.weights = w
        self.time = time
        trended = {t.factors[0] for t in terms if t.kind == "trend"}
        self.projectors: list[Projector] = []
        seen = set()
        for term in terms:
            if term.kind == "factor" and term.factors[0] in trended:
                continue  # spanned by the factor's own trend term
            key = (term.kind, term.factors, term.degree)
            if key in seen:
                continue
            seen.add(key)
            codes = _codes(frame, term.factors)
            ng = int(codes.max()) + 1 if codes.size else 0
            basis = None
            if term.kind == "trend":
                t = frame[time].to_numpy(float)
                basis = _trend_basis(t, codes, ng, term.degree)
            self.projectors.append(Projector(codes, ng, w, basis, term.label))
        self.iterations = 0

    @property
    def n_params(self) -> int:
        """Number of raw fixed-effect parameters (before redundancy)."""
        return sum(p.n_groups * (1 if p.basis is None else p.basis.shape[1]) for p in self.projectors)

    def _sweep(self, X: np.ndarray) -> np.ndarray:
        for p in self.projectors:
            X = p.residualize(X)
        return X

    def absorb(self, X, tol: float = DEFAULT_TOL, maxiter: int = DEFAULT_MAXITER, accelerate: bool = True) -> np.ndarray:
        """Return the columns of ``X`` with all fixed effects partialled out.

        Columns are standardized internally, so ``tol`` is relative to each
        column's root-mean-square. Sets :attr:`iterations` to the number of sweeps.
        """
        X = np.asarray(X, dtype=float)
        squeeze = X.ndim == 1
        if squeeze:
            X = X[:, None]
        if not self.projectors:
            self.iterations = 0
            return X[:, 0].copy() if squeeze else X.copy()
        scale = np.sqrt(np.average(X**2, axis=0, weights=self.weights))
        scale = np.where(scale > 0, scale, 1.0)
        Z = X / scale
        if len(self.projectors) == 1:
            Z = self.projectors[0].residualize(Z)
            self.iterations = 1
        else:
            Z = self._alternate(Z, tol, maxiter, accelerate)
        out = Z * scale
        return out[:, 0] if squeeze else out

    def _alternate(self, Z, tol, maxiter, accelerate):
        Z = self._sweep(Z)
        Z2 = self._sweep(Z)
        it = 2
        change = np.max(np.abs(Z2 - Z), axis=0)
        Z = Z2
        delta = float(change.max()) if change.size else 0.0
        # exact after one sweep (nested factors, orthogonal designs)
        active = np.flatnonzero(change >= FLOOR)
        while active.size:
            if it >= maxiter:
                raise ConvergenceError(
                    f"fixed-effect absorption did not converge in {maxiter} sweeps (last change {delta:.3g})",
                    float(delta), it,
                )
            x0 = Z[:, active]
            x1 = self._sweep(x0)
            x2 = self._sweep(x1)
            it += 2
            d0 = x1 - x0
            d1 = x2 - x1
            change = np.max(np.abs(d1), axis=0)
            # geometric estimate of the distance still to go
            n0 = np.sqrt(np.einsum("ij,ij->j", d0, d0))
            n1 = np.sqrt(np.einsum("ij,ij->j", d1, d1))
            with np.errstate(divide="ignore", invalid="ignore"):
                rate = np.where(n0 > 0, n1 / n0, 0.0)
                remaining = np.where(rate < 1, change * rate / (1 - rate), np.inf)
            # below FLOOR the rate estimate is rounding noise
            done = (change < tol) & ((remaining < tol) | (change < FLOOR))
            x_next = x2
            if accelerate:
                d2 = d1 - d0
                denom = np.einsum("ij,ij->j", d2, d2)
                with np.errstate(divide="ignore", invalid="ignore"):
                    step = np.where(denom > 0, np.einsum("ij,ij->j", d1, d2) / denom, 0.0)
                x_next = np.where(done[None, :], x2, x2 - step[None, :] * d1)
            Z[:, active] = x_next
            delta = float(change.max()) if change.size else 0.0
            active = active[~done]
        self.iterations = it
        return Z

    def dense(self) -> np.ndarray:
        """Stacked explicit basis of all projectors."""
        return np.hstack([p.dense() for p in self.projectors]) if self.projectors else np.zeros((len(self.weights), 0))

    def degrees_of_freedom(self, exact_limit: int = 4_000_000) -> tuple[int, str]:
        """Rank of the fixed-effect span and the counting method used.

        Exact (dense rank) when ``rows x columns`` is at most ``exact_limit``.
        Otherwise per-term ranks minus redundancies: connected components for a
        pair of one-way factors, one shared level per extra term, and the
        time polynomial spanned both by a trend and by a factor on the time
        column. The approximation never undercounts for the term combinations
        it recognises and errs high (conservative) elsewhere.
        """
        if not self.projectors:
            return 0, "exact"
        pos = self.weights > 0
        n = int(pos.sum())
        plain = [p for p in self.projectors if p.basis is None]
        if len(self.projectors) == 2 and len(plain) == 2:
            # exact for two one-way factors
            rank = sum(p.rank for p in plain) - _components(plain[0].codes[pos], plain[1].codes[pos])
            return rank, "components"
        if n * self.n_params <= exact_limit:
            D = self.dense()[pos] * np.sqrt(self.weights[pos])[:, None]
            return int(np.linalg.matrix_rank(D)), "exact"
        ranks = [p.rank for p in self.projectors]
        total = sum(ranks)
        trends = [p for p in self.projectors if p.basis is not None]
        total -= len(self.projectors) - 1
        time_factor = any(t.kind in ("factor", "interact") and self.time in t.factors for t in self.terms)
        if time_factor:
            total -= sum(p.basis.shape[1] - 1 for p in trends)
        return total, "approximate"


def _components(a: np.ndarray, b: np.ndarray) -> int:
    """Connected components of the bipartite graph linking levels of two factors."""
    from scipy.sparse.csgraph import connected_components

    na, nb = int(a.max()) + 1, int(b.max()) + 1
    g = sp.coo_matrix((np.ones(a.size), (a, b + na)), shape=(na + nb, na + nb))
    return int(connected_components(g, directed=False)[0])
