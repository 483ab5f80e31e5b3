"""Design matrices and the two regression fitters every nuisance builds on.

Logistic regression is fitted by Newton/IRLS with step halving; linear
regression by weighted normal equations. Both drop collinear columns in
column order (their coefficients are reported as zero) and both accept
unit weights. The logistic fitter also takes a fixed offset, which is what
the fluctuation submodels need.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import (NumericalFailure, RankDeficientWarning, SchemaMismatch,
                     SeparationWarning, ValidationError)

LOGIT = "logit"
IDENTITY = "identity"

COEF_CLAMP = 40.0


@dataclass(frozen=True)
class DesignSpec:
    """Declarative description of a design matrix.

    Parameters
    ----------
    columns : names of main-effect columns.
    include_intercept : prepend a column of ones.
    interactions : pairs of numeric columns entered as products.
    link : ``"logit"`` or ``"identity"``.
    categorical : subset of ``columns`` expanded into level indicators
        (the first level is dropped when an intercept is present).
    saturated : replace everything by one indicator per observed joint
        level of ``columns``; the fit then reproduces cell means.
    """

    columns: tuple[str, ...] = ()
    include_intercept: bool = True
    interactions: tuple[tuple[str, str], ...] = ()
    link: str = LOGIT
    categorical: tuple[str, ...] = ()
    saturated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "categorical", tuple(self.categorical))
        object.__setattr__(self, "interactions",
                           tuple(tuple(p) for p in self.interactions))
        if self.link not in (LOGIT, IDENTITY):
            raise ValidationError(f"unknown link {self.link!r}")
        for pair in self.interactions:
            if len(pair) != 2:
                raise ValidationError(f"interaction {pair} must name two columns")
            for c in pair:
                if c not in self.columns:
                    raise ValidationError(f"interaction column {c!r} not in columns")
                if c in self.categorical:
                    raise ValidationError("interactions with categorical columns "
                                          "are not supported")
        for c in self.categorical:
            if c not in self.columns:
                raise ValidationError(f"categorical column {c!r} not in columns")
        if self.saturated and not self.columns:
            raise ValidationError("a saturated design needs at least one column")

    @property
    def required_columns(self) -> tuple[str, ...]:
        return self.columns

    def with_link(self, link: str) -> "DesignSpec":
        return replace(self, link=link)

    def drop(self, names: Sequence[str]) -> "DesignSpec":
        """Copy of the design without the given columns (and their interactions)."""
        names = set(names)
        return replace(
            self,
            columns=tuple(c for c in self.columns if c not in names),
            interactions=tuple(p for p in self.interactions if not set(p) & names),
            categorical=tuple(c for c in self.categorical if c not in names),
            saturated=self.saturated and bool(set(self.columns) - names),
        )

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "include_intercept": self.include_intercept,
                "interactions": [list(p) for p in self.interactions], "link": self.link,
                "categorical": list(self.categorical), "saturated": self.saturated}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "DesignSpec":
        known = {"columns", "include_intercept", "interactions", "link", "categorical",
                 "saturated"}
        extra = set(doc) - known
        if extra:
            raise ValidationError(f"unknown design keys {sorted(extra)}")
        return cls(columns=tuple(doc.get("columns", ())),
                   include_intercept=bool(doc.get("include_intercept", True)),
                   interactions=tuple(tuple(p) for p in doc.get("interactions", ())),
                   link=doc.get("link", LOGIT),
                   categorical=tuple(doc.get("categorical", ())),
                   saturated=bool(doc.get("saturated", False)))

    # -- matrix construction -------------------------------------------------
    def learn_levels(self, frame: Mapping[str, np.ndarray], rows=None) -> dict:
        """Levels of categorical columns (or joint cells when saturated)."""
        _require(frame, self.columns)
        pick = (lambda v: v) if rows is None else (lambda v: v[rows])
        if self.saturated:
            block = np.column_stack([pick(np.asarray(frame[c], float)) for c in self.columns])
            cells = np.unique(block, axis=0)
            return {"cells": [tuple(float(u) for u in row) for row in cells]}
        return {c: sorted(float(u) for u in np.unique(pick(np.asarray(frame[c], float))))
                for c in self.categorical}

    def matrix(self, frame: Mapping[str, np.ndarray], levels: Mapping) -> tuple[np.ndarray, list[str]]:
        _require(frame, self.columns)
        n = _frame_len(frame)
        if self.saturated:
            return _cell_indicators(frame, self.columns, levels["cells"], n)
        cols, names = [], []
        if self.include_intercept:
            cols.append(np.ones(n))
            names.append("(intercept)")
        for c in self.columns:
            v = np.asarray(frame[c], float)
            if c in self.categorical:
                lv = levels[c]
                for level in (lv[1:] if self.include_intercept else lv):
                    cols.append((v == level).astype(float))
                    names.append(f"{c}={level:g}")
            else:
                cols.append(v)
                names.append(c)
        for c1, c2 in self.interactions:
            cols.append(np.asarray(frame[c1], float) * np.asarray(frame[c2], float))
            names.append(f"{c1}:{c2}")
        if not cols:
            raise ValidationError("design has no columns")
        return np.column_stack(cols), names


def _frame_len(frame) -> int:
    for v in frame.values():
        return int(np.shape(v)[0])
    return 0


def _require(frame, columns):
    missing = [c for c in columns if c not in frame]
    if missing:
        raise SchemaMismatch(f"design columns absent from data: {missing}")


def _cell_indicators(frame, columns, cells, n):
    cells = np.asarray(cells, float).reshape(len(cells), len(columns))
    block = np.column_stack([np.asarray(frame[c], float) for c in columns])
    X = np.zeros((n, len(cells)))
    # rows matching no stored cell get an all-zero indicator row
    match = np.ones((n, len(cells)), bool)
    for j in range(len(columns)):
        match &= block[:, j][:, None] == cells[:, j][None, :]
    X[match] = 1.0
    names = ["[" + ",".join(f"{c}={v:g}" for c, v in zip(columns, cell)) + "]"
             for cell in cells]
    return X, names


@dataclass(frozen=True, eq=False)
class RegressionFit:
    """Fitted coefficients plus everything needed to predict on new rows."""

    coefficients: np.ndarray
    link: str = LOGIT
    design: DesignSpec | None = None
    levels: dict = field(default_factory=dict)
    converged: bool = True
    weighted: bool = False
    iterations: int = 0
    dropped: tuple[int, ...] = ()
    separated: bool = False
    # logit fits of a bounded outcome rescaled from [0,1] to (lo, hi)
    output_range: tuple[float, float] | None = None

    def linear_predictor(self, frame_or_matrix, offset=None) -> np.ndarray:
        X = self._matrix(frame_or_matrix)
        eta = X @ self.coefficients
        if offset is not None:
            eta = eta + offset
        return eta

    def predict(self, frame_or_matrix, offset=None) -> np.ndarray:
        """Mean prediction through the link (no truncation applied here)."""
        eta = self.linear_predictor(frame_or_matrix, offset)
        if self.link != LOGIT:
            return eta
        if self.output_range is None:
            return expit(eta)
        lo, hi = self.output_range
        return lo + (hi - lo) * expit(eta)

    def _matrix(self, frame_or_matrix):
        if isinstance(frame_or_matrix, np.ndarray):
            return frame_or_matrix
        if self.design is None:
            raise ValidationError("fit has no design; pass a matrix")
        return self.design.matrix(frame_or_matrix, self.levels)[0]

    def to_dict(self) -> dict:
        out = {"coefficients": [float(b) for b in self.coefficients], "link": self.link,
               "converged": self.converged, "weighted": self.weighted}
        if self.design is not None:
            out["design"] = self.design.to_dict()
        if self.output_range is not None:
            out["output_range"] = list(self.output_range)
        if self.levels:
            out["levels"] = {k: [list(c) if isinstance(c, tuple) else c for c in v]
                             for k, v in self.levels.items()}
        return out

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RegressionFit":
        design = DesignSpec.from_dict(doc["design"]) if "design" in doc else None
        levels = {k: [tuple(c) if isinstance(c, list) else c for c in v]
                  for k, v in doc.get("levels", {}).items()}
        link = doc.get("link", design.link if design else LOGIT)
        rng = doc.get("output_range")
        return cls(np.asarray(doc["coefficients"], float), link, design, levels,
                   bool(doc.get("converged", True)), bool(doc.get("weighted", False)),
                   output_range=None if rng is None else (float(rng[0]), float(rng[1])))


# -- fitters -----------------------------------------------------------------------

def _independent_columns(X: np.ndarray, w: np.ndarray, rtol: float = 1e-10) -> list[int]:
    """Indices of columns kept when dropping collinear ones in column order."""
    G = X.T @ (X * w[:, None])
    keep: list[int] = []
    for j in range(X.shape[1]):
        gjj = G[j, j]
        if gjj <= 0:
            continue
        if keep:
            K = np.array(keep)
            gk = G[K, j]
            try:
                resid = gjj - gk @ np.linalg.solve(G[np.ix_(K, K)], gk)
            except np.linalg.LinAlgError:
                continue
        else:
            resid = gjj
        if resid > rtol * gjj:
            keep.append(j)
    return keep


def _prepare(X, y, weights):
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, float)
    if y.shape[0] != X.shape[0]:
        raise ValidationError("design and response lengths differ")
    w = np.ones_like(y) if weights is None else np.asarray(weights, float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValidationError("weights must be >= 0 and not all zero")
    if not np.all(np.isfinite(X)):
        raise ValidationError("design matrix has non-finite entries")
    return X, y, w


def _loglik(X, y, w, off, beta):
    eta = X @ beta + off
    # log(1+exp(eta)) computed stably
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def fit_logistic(X, y, weights=None, offset=None, max_iter: int = 100,
                 tol: float = 1e-10, start=None) -> RegressionFit:
    """Weighted Bernoulli maximum likelihood by Newton-Raphson (IRLS).

    Responses may be fractional in [0, 1] (quasi-binomial), which is how
    bounded continuous outcomes are fluctuated. Iteration stops once the
    largest coefficient step is below ``tol``. Coefficients that run past
    ``|beta| = 40`` are clamped there and a :class:`SeparationWarning` is
    issued.
    """
    X, y, w = _prepare(X, y, weights)
    if np.any((y < 0) | (y > 1)):
        raise ValidationError("logistic responses must lie in [0, 1]")
    n, k = X.shape
    off = np.zeros(n) if offset is None else np.asarray(offset, float)
    pos = w > 0
    keep = _independent_columns(X[pos], w[pos])
    dropped = tuple(j for j in range(k) if j not in keep)
    if dropped:
        warnings.warn(f"dropped collinear design columns {list(dropped)}",
                      RankDeficientWarning, stacklevel=2)
    Xk = X[:, keep]
    beta = np.zeros(len(keep)) if start is None else np.asarray(start, float)[keep]
    free = np.ones(len(keep), bool)
    converged = separated = False
    it = 0
    ll = _loglik(Xk, y, w, off, beta)
    for it in range(1, max_iter + 1):
        eta = Xk @ beta + off
        p = expit(eta)
        grad = Xk.T @ (w * (y - p))
        hw = w * p * (1.0 - p)
        Xf = Xk[:, free]
        H = Xf.T @ (Xf * hw[:, None])
        try:
            step_f = np.linalg.solve(H, grad[free])
        except np.linalg.LinAlgError:
            step_f = np.linalg.lstsq(H + 1e-10 * np.eye(H.shape[0]), grad[free], rcond=None)[0]
        step = np.zeros_like(beta)
        step[free] = step_f
        # step halving keeps the log-likelihood monotone
        scale = 1.0
        for _ in range(40):
            cand = np.clip(beta + scale * step, -COEF_CLAMP, COEF_CLAMP)
            ll_new = _loglik(Xk, y, w, off, cand)
            if ll_new >= ll - 1e-12 * (1.0 + abs(ll)):
                break
            scale *= 0.5
        moved = cand - beta
        beta, ll = cand, ll_new
        hit = free & (np.abs(beta) >= COEF_CLAMP)
        if np.any(hit):
            separated = True
            free &= ~hit
        if not np.any(free) or np.max(np.abs(moved[free])) < tol:
            converged = True
            break
    # float saturation of expit stops Newton short of the clamp
    separated = separated or bool(np.any(np.abs(beta) > 30.0))
    if separated:
        warnings.warn("logistic fit separated; coefficients clamped at +/-40",
                      SeparationWarning, stacklevel=2)
    coef = np.zeros(k)
    coef[keep] = beta
    if not np.all(np.isfinite(coef)):
        raise NumericalFailure("logistic fit produced non-finite coefficients")
    return RegressionFit(coef, LOGIT, converged=converged,
                         weighted=weights is not None, iterations=it, dropped=dropped,
                         separated=separated)


def fit_linear(X, y, weights=None) -> RegressionFit:
    """Weighted least squares through the normal equations."""
    X, y, w = _prepare(X, y, weights)
    k = X.shape[1]
    pos = w > 0
    keep = _independent_columns(X[pos], w[pos])
    dropped = tuple(j for j in range(k) if j not in keep)
    if dropped:
        warnings.warn(f"dropped collinear design columns {list(dropped)}",
                      RankDeficientWarning, stacklevel=2)
    Xk = X[:, keep]
    XtW = (Xk * w[:, None]).T
    A = XtW @ Xk
    b = XtW @ y
    try:
        beta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        beta = np.linalg.solve(A + 1e-10 * np.eye(A.shape[0]), b)
    coef = np.zeros(k)
    coef[keep] = beta
    return RegressionFit(coef, IDENTITY, weighted=weights is not None, dropped=dropped)


def fit_design(design: DesignSpec, frame: Mapping[str, np.ndarray], y, rows=None,
               weights=None, offset=None) -> RegressionFit:
    """Fit ``design`` on the selected ``rows`` of ``frame``."""
    rows = np.ones(_frame_len(frame), bool) if rows is None else np.asarray(rows)
    levels = design.learn_levels(frame, rows)
    X = design.matrix(frame, levels)[0][rows]
    y = np.asarray(y, float)
    if y.shape[0] != X.shape[0]:
        y = y[rows]
    w = None if weights is None else np.asarray(weights, float)
    if w is not None and w.shape[0] != X.shape[0]:
        w = w[rows]
    off = None if offset is None else np.asarray(offset, float)
    if off is not None and off.shape[0] != X.shape[0]:
        off = off[rows]
    if design.link == LOGIT:
        fit = fit_logistic(X, y, w, off)
    else:
        if off is not None:
            y = y - off
        fit = fit_linear(X, y, w)
    return replace(fit, design=design, levels=levels)
