"""Brute-force reference computations, written without the package's
estimation code so the tests compare two independent routes."""
import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from transport_tmle.glm import DesignSpec


def saturated_missing_designs(ds):
    w, v = ds.w_columns, ds.v_columns
    return {"g_a": DesignSpec(w, saturated=True),
            "p_delta": DesignSpec((*w, "a"), saturated=True),
            "p_s_given_v": DesignSpec(v, saturated=True),
            "p_s_given_w": DesignSpec(w, saturated=True),
            "q_bar": DesignSpec((*w, "a"), saturated=True),
            "q_bar_r": DesignSpec(v, saturated=True, link="identity")}


def saturated_survival_designs(ds):
    w = ds.w_columns
    hz = DesignSpec(("t", *w, "a"), saturated=True)
    return {"lambda": hz, "alpha": hz, "g_a": DesignSpec(w, saturated=True),
            "r": DesignSpec(w, saturated=True)}


def npmle_missing(ds, arm):
    """Empirical plug-in of sum_v P(v|S=0) E[ E[Y|a,W,Delta=1,S=1] | v, S=1 ]."""
    src = ds.s == 1
    v_idx = [ds.w_columns.index(c) for c in ds.v_columns]
    cells = {}
    for i in np.flatnonzero(src & (ds.a == arm) & (ds.delta == 1)):
        cells.setdefault(tuple(ds.x[i]), []).append(ds.y[i])
    q = {k: np.mean(v) for k, v in cells.items()}
    reduced = {}
    for i in np.flatnonzero(src):
        reduced.setdefault(tuple(ds.x[i, v_idx]), []).append(q[tuple(ds.x[i])])
    reduced = {k: np.mean(v) for k, v in reduced.items()}
    return float(np.mean([reduced[tuple(ds.x[i, v_idx])] for i in np.flatnonzero(~src)]))


def npmle_survival(ds, arm, t0):
    """Per-covariate-cell Kaplan-Meier at t0, averaged over target units."""
    src = ds.s == 1
    cells = {}
    for i in np.flatnonzero(src & (ds.a == arm)):
        cells.setdefault(tuple(ds.x[i]), []).append(i)
    surv = {}
    for key, idx in cells.items():
        tt = ds.t_tilde[idx]
        ev = ds.event[idx]
        s = 1.0
        for t in range(1, t0 + 1):
            at_risk = tt >= t
            if at_risk.any():
                s *= 1.0 - np.sum(at_risk & (tt == t) & (ev == 1)) / at_risk.sum()
        surv[key] = s
    return float(np.mean([surv[tuple(ds.x[i])] for i in np.flatnonzero(~src)]))


def plain_survival_tmle_step(t_tilde, event, a, g1, lam, alpha, t0, arm):
    """One update of the textbook one-population discrete-time hazard TMLE.

    ``lam`` and ``alpha`` are n x tau hazard matrices under treatment ``arm``,
    ``g1`` is P(A=1|W). The submodel is ``logit lam_eps = logit lam + eps * H``
    with ``H(t, W) = -1/(g(arm|W) Gbar(t-)) * S(t0)/S(t) * I(t <= t0)``; epsilon
    solves the score on the person-time rows at risk with ``A = arm``.
    Returns (epsilon, updated hazard matrix).
    """
    n, tau = lam.shape
    grid = np.arange(1, tau + 1)
    at_risk = grid[None, :] <= t_tilde[:, None]
    d_n = (at_risk & (grid[None, :] == t_tilde[:, None]) & (event[:, None] == 1)).astype(float)
    g = g1 if arm == 1 else 1 - g1
    g_bar = np.hstack([np.ones((n, 1)), np.cumprod(1 - alpha, axis=1)[:, :-1]])
    ratio = np.zeros((n, tau))
    for t in range(1, t0 + 1):
        # S(t0)/S(t) is the product of (1 - lam) over periods t+1..t0
        ratio[:, t - 1] = np.prod(1 - lam[:, t:t0], axis=1)
    h = -ratio / (g[:, None] * g_bar)
    rows = at_risk & (a == arm)[:, None]
    off = logit(lam[rows])
    hh = h[rows]
    y = d_n[rows]

    def score(e):
        return np.sum(hh * (y - expit(off + e * hh)))

    lo, hi = -1.0, 1.0
    while score(lo) * score(hi) > 0:
        lo, hi = 2 * lo, 2 * hi
    eps = brentq(score, lo, hi, xtol=1e-14, rtol=1e-14)
    return eps, expit(logit(lam) + eps * h)


def induced_missing_dataset(ds):
    """Missing-outcome view of single-period survival data: V = W, every
    outcome observed, ``Y = I(T > 1) = 1 - delta_event``."""
    from transport_tmle.data import MISSING_OUTCOME, Dataset, Schema

    sch = Schema(ds.w_columns, ds.w_columns, MISSING_OUTCOME)
    src = ds.s == 1
    return Dataset.from_arrays(sch, ds.s, ds.x, ds.a, delta=np.where(src, 1.0, np.nan),
                               y=np.where(src, 1.0 - ds.event, np.nan))
