"""Clever covariates and the canonical gradient for the missing-outcome problem.

For arm ``a`` the gradient splits into three pieces with disjoint support::

    d_v  = I(S=0)/P(S=0) * (Qr(a,V) - psi_a)
    d_y  = C_Y(a) * (Y - Qbar(a,W))
    d_wv = C_WV * (Qbar(a,W) - Qr(a,V))

with ``C_Y(a) = I(A=a, Delta=1, S=1) / [P(S=1) g(a|W) p_Delta(1|W,a)] * r(V)``
and ``C_WV = I(S=1)/P(S=1) * r(V)``, ``r`` being the density ratio of V
between the target and source strata.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .nuisance import NuisanceFits


@dataclass(frozen=True, eq=False)
class EICDecomposition:
    """Per-unit gradient components (arrays of length n)."""

    d_v: np.ndarray
    d_y: np.ndarray
    d_wv: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.d_v + self.d_y + self.d_wv

    def __sub__(self, other: "EICDecomposition") -> "EICDecomposition":
        return EICDecomposition(self.d_v - other.d_v, self.d_y - other.d_y,
                                self.d_wv - other.d_wv)

    def mean(self) -> float:
        return float(np.mean(self.total))

    def sd(self) -> float:
        return float(np.std(self.total, ddof=1))

    def source_part(self) -> np.ndarray:
        """Source-stratum contribution d_y + d_wv (zero on target units)."""
        return self.d_y + self.d_wv

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["unit", "d_v", "d_y", "d_wv", "total"])
            for i, row in enumerate(zip(self.d_v, self.d_y, self.d_wv, self.total)):
                wr.writerow([i, *(repr(float(u)) for u in row)])


def outcome_weight(frame, fits: NuisanceFits, arm: int) -> np.ndarray:
    """``r(V) / [P(S=1) g(arm|W) p_Delta(1|W,arm)]``: C_Y without its indicator."""
    return fits.density_ratio(frame) / (fits.p_s1 * fits.g(frame, arm)
                                        * fits.p_observed(frame, arm))


def reduced_weight(frame, fits: NuisanceFits) -> np.ndarray:
    """``r(V) / P(S=1)``: C_WV without its indicator (a function of V only)."""
    return fits.density_ratio(frame) / fits.p_s1


def clever_covariate_y(ds: Dataset, fits: NuisanceFits, arm: int) -> np.ndarray:
    ind = (ds.s == 1) & (ds.a == arm) & (ds.delta == 1)
    out = np.zeros(ds.n)
    out[ind] = outcome_weight(_rows(ds.frame(), ind), fits, arm)
    return out


def clever_covariate_wv(ds: Dataset, fits: NuisanceFits, arm: int | None = None) -> np.ndarray:
    """Identical for both arms; ``arm`` is accepted for symmetry."""
    ind = ds.s == 1
    out = np.zeros(ds.n)
    out[ind] = reduced_weight(_rows(ds.frame(), ind), fits)
    return out


def _rows(frame, mask):
    return {k: v[mask] for k, v in frame.items()}


def eic_psi_a(ds: Dataset, fits: NuisanceFits, arm: int, psi_a: float,
              q_values=None, q_r_values=None) -> EICDecomposition:
    """Gradient of Psi_arm at the supplied nuisances and plug-in value.

    ``q_values`` (Qbar(arm, W) on source rows) and ``q_r_values``
    (Qr(arm, V) on all rows) default to the initial fits held in ``fits``;
    targeted values are passed in by the estimator. When V equals W the
    reduced regression is the outcome regression itself and d_wv vanishes.
    """
    src = ds.s == 1
    tgt = ~src
    frame = ds.frame()
    if q_values is None:
        q_values = np.full(ds.n, np.nan)
        q_values[src] = fits.q(_rows(frame, src), arm)
    if q_r_values is None:
        if ds.schema.v_equals_w:
            q_r_values = q_values.copy()
            q_r_values[tgt] = fits.q(_rows(frame, tgt), arm)
        elif fits.q_bar_r is not None:
            q_r_values = fits.q_bar_r[arm].predict(frame)
        else:
            raise ValueError("reduced regression values required when V is a strict subset of W")
    p_s0 = 1.0 - fits.p_s1
    d_v = np.where(tgt, (q_r_values - psi_a) / p_s0, 0.0)
    c_y = clever_covariate_y(ds, fits, arm)
    obs = c_y != 0
    d_y = np.zeros(ds.n)
    d_y[obs] = c_y[obs] * (ds.y[obs] - q_values[obs])
    c_wv = clever_covariate_wv(ds, fits)
    d_wv = np.zeros(ds.n)
    d_wv[src] = c_wv[src] * (q_values[src] - q_r_values[src])
    return EICDecomposition(d_v, d_y, d_wv)


def eic_ate(ds: Dataset, fits: NuisanceFits, psi1: float, psi0: float,
            q_values=None, q_r_values=None) -> EICDecomposition:
    """Componentwise difference of the arm-1 and arm-0 gradients.

    ``q_values`` / ``q_r_values`` may be dicts keyed by arm.
    """
    q_values = q_values or {}
    q_r_values = q_r_values or {}
    one = eic_psi_a(ds, fits, 1, psi1, q_values.get(1), q_r_values.get(1))
    zero = eic_psi_a(ds, fits, 0, psi0, q_values.get(0), q_r_values.get(0))
    return one - zero
