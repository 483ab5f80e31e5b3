"""Transported treatment-specific survival at a horizon t0 in discrete time.

The estimand is ``Psi_a = E[S(t0 | a, W, S=1) | S=0]`` with
``S(t | a, W) = prod_{s<=t} (1 - lambda(s | a, W))``. Its gradient has a
target-stratum part ``d_w`` and a source-stratum martingale part
``d_lambda = I(S=1)/P(S=1) R(W) sum_t H_a(t) (dN(t) - lambda(t))`` with
clever covariate

    H_a(t, W, A) = -I(A=a) / (g(a|W) Gbar(t-|a,W)) * S(t0|a,W)/S(t|a,W) * I(t<=t0).

All per-unit quantities are held as ``n x tau`` matrices, one per arm, and
are evaluated for target units too because the plug-in averages the
targeted survival curve over them.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .config import RunConfig
from .data import SURVIVAL, Dataset, person_time_expand
from .errors import ConvergenceWarning, PositivityWarning, ValidationError
from .glm import fit_logistic
from .nuisance import HazardFits, fit_hazards, logit_clip
from .report import EstimateReport, FluctuationResult, score_tolerance, wald

ARMS = (1, 0)


@dataclass(frozen=True, eq=False)
class SurvivalCurves:
    """Event hazard, censoring hazard and derived curves for one arm.

    ``survival[:, t]`` is S(t) for t = 0..tau and ``g_bar[:, t-1]`` is
    Gbar(t-) = prod_{s<t} (1 - alpha(s)) for t = 1..tau.
    """

    hazard: np.ndarray
    censoring: np.ndarray

    @property
    def tau(self) -> int:
        return self.hazard.shape[1]

    @property
    def survival(self) -> np.ndarray:
        n = self.hazard.shape[0]
        return np.hstack([np.ones((n, 1)), np.cumprod(1.0 - self.hazard, axis=1)])

    @property
    def g_bar(self) -> np.ndarray:
        n = self.censoring.shape[0]
        return np.hstack([np.ones((n, 1)), np.cumprod(1.0 - self.censoring, axis=1)[:, :-1]])

    def at(self, t0: int) -> np.ndarray:
        return np.prod(1.0 - self.hazard[:, :t0], axis=1)

    def ratio(self, t0: int) -> np.ndarray:
        """S(t0)/S(t) for t = 1..tau (zero beyond t0), as a product so it
        stays exact when S(t) is tiny."""
        n, tau = self.hazard.shape
        out = np.zeros((n, tau))
        tail = np.cumprod((1.0 - self.hazard[:, :t0])[:, ::-1], axis=1)[:, ::-1]
        out[:, :t0 - 1] = tail[:, 1:]
        out[:, t0 - 1] = 1.0
        return out


def curves_for(fits: HazardFits, frame, arm: int, hazard=None) -> SurvivalCurves:
    lam = fits.hazard(frame, arm) if hazard is None else hazard
    return SurvivalCurves(lam, fits.censoring(frame, arm))


def clever_covariate_h(curves: SurvivalCurves, g_arm: np.ndarray, t0: int,
                       treated=None, truncation: float = 0.0) -> np.ndarray:
    """``n x tau`` matrix of H_a(t, W, A) for t = 1..tau.

    ``g_arm`` is g(a|W) per unit and ``treated`` the indicator I(A=a)
    (omitted: the covariate as a function of W, used to update the hazard).
    ``Gbar(t-)`` is floored at ``truncation``.
    """
    g_bar = curves.g_bar
    if truncation > 0:
        g_bar = np.maximum(g_bar, truncation)
    h = -curves.ratio(t0) / (g_arm[:, None] * g_bar)
    if treated is not None:
        h = h * np.asarray(treated, float)[:, None]
    return h


@dataclass(frozen=True, eq=False)
class SurvivalEIC:
    d_w: np.ndarray
    d_lambda: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.d_w + self.d_lambda

    def __sub__(self, other: "SurvivalEIC") -> "SurvivalEIC":
        return SurvivalEIC(self.d_w - other.d_w, self.d_lambda - other.d_lambda)

    def source_part(self) -> np.ndarray:
        return self.d_lambda

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["unit", "d_w", "d_lambda", "total"])
            for i, row in enumerate(zip(self.d_w, self.d_lambda, self.total)):
                wr.writerow([i, *(repr(float(u)) for u in row)])


@dataclass(frozen=True, eq=False)
class _Observed:
    """Person-time data as n x tau matrices."""

    at_risk: np.ndarray
    d_event: np.ndarray
    arm: np.ndarray
    source: np.ndarray

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "_Observed":
        tau = int(ds.tau)
        src = ds.s == 1
        tt = np.where(src, np.nan_to_num(ds.t_tilde, nan=0.0), 0.0).astype(int)
        grid = np.arange(1, tau + 1)[None, :]
        at_risk = src[:, None] & (grid <= tt[:, None])
        ev = np.nan_to_num(ds.event, nan=0.0) == 1
        d_event = (at_risk & (grid == tt[:, None]) & ev[:, None]).astype(float)
        return cls(at_risk, d_event, np.nan_to_num(ds.a, nan=-1.0), src)


def _weight(fits: HazardFits, frame) -> np.ndarray:
    """``R(W)/P(S=1)``, the factor multiplying the hazard clever covariate."""
    return fits.density_ratio(frame) / fits.p_s1


def _d_lambda(obs: _Observed, weight, h, hazard, arm) -> np.ndarray:
    treated = obs.source & (obs.arm == arm)
    resid = np.where(obs.at_risk, obs.d_event - hazard, 0.0)
    return np.where(treated, weight * np.sum(h * resid, axis=1), 0.0)


def survival_eic(ds: Dataset, fits: HazardFits, arm: int, psi_a: float, t0: int | None = None,
                 curves: SurvivalCurves | None = None) -> SurvivalEIC:
    """Gradient of Psi_arm at the hazards in ``curves`` (default: ``fits``)."""
    t0 = int(ds.t0 if t0 is None else t0)
    frame = ds.frame()
    curves = curves or curves_for(fits, frame, arm)
    obs = _Observed.from_dataset(ds)
    h = clever_covariate_h(curves, fits.g(frame, arm), t0, truncation=fits.truncation)
    d_lambda = _d_lambda(obs, _weight(fits, frame), h, curves.hazard, arm)
    d_w = np.where(ds.s == 0, (curves.at(t0) - psi_a) / (1.0 - fits.p_s1), 0.0)
    return SurvivalEIC(d_w, d_lambda)


def ipctw_estimate(ds: Dataset, fits: HazardFits, arm: int, t0: int | None = None) -> float:
    """Inverse probability of censoring, treatment and selection weighted estimate.

    A source unit is known to survive past t0 when ``T~ > t0`` or when it is
    censored at t0 itself (the event is evaluated first within a period).
    That event has probability ``S(t0) Gbar(t0-)`` given (W, A), so it is
    weighted by ``R(W) / [P(S=1) g(a|W) Gbar(t0-)]``.
    """
    t0 = int(ds.t0 if t0 is None else t0)
    frame = ds.frame()
    src = ds.s == 1
    tt = np.nan_to_num(ds.t_tilde, nan=0.0)
    ev = np.nan_to_num(ds.event, nan=0.0)
    known = src & (np.nan_to_num(ds.a, nan=-1.0) == arm) & (
        (tt > t0) | ((tt == t0) & (ev == 0)))
    g_bar = curves_for(fits, frame, arm).g_bar[:, t0 - 1]
    if fits.truncation > 0:
        g_bar = np.maximum(g_bar, fits.truncation)
    w = fits.density_ratio(frame) / (fits.p_s1 * fits.g(frame, arm) * g_bar)
    return float(np.sum(np.where(known, w, 0.0)) / ds.n)


# -- targeting -------------------------------------------------------------------------

@dataclass(eq=False)
class TargetedHazard:
    """Targeted hazards (logit scale) per arm plus the iteration record."""

    logit_hazard: dict[int, np.ndarray]
    epsilons: list
    score_trace: list[float]
    iterations: int
    converged: bool
    targeting: str
    fluctuation: str

    def hazard(self, arm: int) -> np.ndarray:
        return expit(self.logit_hazard[arm])


def _sign(arm: int, targeting: str) -> float:
    return -1.0 if (targeting == "difference" and arm == 0) else 1.0


def fluctuation_covariates(fits: HazardFits, frame, arm: int, logit_hazard, t0: int,
                           targeting: str, fluctuation: str):
    """(covariate matrix, row weight) for one arm at the current hazard.

    Covariate mode puts ``R(W)/P(S=1)`` into the covariate; weight mode puts
    it into the likelihood weight.
    """
    curves = curves_for(fits, frame, arm, expit(logit_hazard))
    h = clever_covariate_h(curves, fits.g(frame, arm), t0, truncation=fits.truncation)
    m = _weight(fits, frame)
    sign = _sign(arm, targeting)
    if fluctuation == "weight":
        return sign * h, m
    return sign * m[:, None] * h, np.ones_like(m)


def update_hazard(logit_hazard, covariate, epsilon: float) -> np.ndarray:
    return logit_hazard + epsilon * covariate


def replay_targeting(fits: HazardFits, frame, epsilons, t0: int, targeting: str,
                     fluctuation: str) -> dict[int, np.ndarray]:
    """Re-apply recorded fluctuation steps to the units in ``frame``."""
    logit_hazard = {arm: logit_clip(fits.hazard(frame, arm)) for arm in ARMS}
    for step in epsilons:
        for arm in ARMS:
            eps = step[str(arm)]
            if eps == 0.0:
                continue
            cov, _ = fluctuation_covariates(fits, frame, arm, logit_hazard[arm], t0, targeting,
                                            fluctuation)
            logit_hazard[arm] = update_hazard(logit_hazard[arm], cov, eps)
    return logit_hazard


def _scores(ds, fits, obs, frame, logit_hazard, t0):
    """Per-arm gradients at the current hazards."""
    out = {}
    for arm in ARMS:
        curves = curves_for(fits, frame, arm, expit(logit_hazard[arm]))
        s_t0 = curves.at(t0)
        psi = float(np.mean(s_t0[ds.s == 0]))
        out[arm] = (survival_eic_from_curves(ds, fits, obs, frame, arm, psi, curves, t0), psi,
                    s_t0)
    return out


def survival_eic_from_curves(ds, fits, obs, frame, arm, psi, curves, t0) -> SurvivalEIC:
    h = clever_covariate_h(curves, fits.g(frame, arm), t0, truncation=fits.truncation)
    d_lambda = _d_lambda(obs, _weight(fits, frame), h, curves.hazard, arm)
    d_w = np.where(ds.s == 0, (curves.at(t0) - psi) / (1.0 - fits.p_s1), 0.0)
    return SurvivalEIC(d_w, d_lambda)


def _converged(eics, n, floor, targeting):
    ate = (eics[1] - eics[0]).total
    ok = abs(np.mean(ate)) <= score_tolerance(float(np.std(ate, ddof=1)), n, floor)
    if targeting != "difference":
        for arm in ARMS:
            tot = eics[arm].total
            ok = ok and abs(np.mean(tot)) <= score_tolerance(float(np.std(tot, ddof=1)), n,
                                                             floor)
    return bool(ok)


def target_hazard(ds: Dataset, fits: HazardFits, targeting: str = "separate",
                  fluctuation: str = "covariate", t0: int | None = None, max_iterations: int = 25,
                  score_floor: float = 1e-8) -> TargetedHazard:
    """Iterated logistic fluctuation of the event hazard.

    Each pass solves the score of the current clever covariate(s) on the
    at-risk person-time rows, updates every unit's hazard, then rebuilds the
    curves (H depends on the hazard through S(t0)/S(t)). At least one pass is
    always made; iteration stops once the gradient means are within the
    score tolerance or after ``max_iterations`` passes.
    """
    if targeting not in ("separate", "simultaneous", "difference"):
        raise ValidationError(f"unknown targeting {targeting!r}")
    if fluctuation not in ("covariate", "weight"):
        raise ValidationError("hazards are fluctuated in covariate or weight mode")
    t0 = int(ds.t0 if t0 is None else t0)
    frame = ds.frame()
    obs = _Observed.from_dataset(ds)
    n = ds.n
    logit_hazard = {arm: logit_clip(fits.hazard(frame, arm)) for arm in ARMS}
    rows = {arm: obs.at_risk & (obs.arm == arm)[:, None] for arm in ARMS}
    epsilons, trace = [], []
    state = _scores(ds, fits, obs, frame, logit_hazard, t0)
    trace.append(abs(float(np.mean((state[1][0] - state[0][0]).total))))
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        covs = {arm: fluctuation_covariates(fits, frame, arm, logit_hazard[arm], t0, targeting,
                                            fluctuation) for arm in ARMS}
        eps = _solve(covs, rows, obs, logit_hazard, targeting)
        for arm in ARMS:
            logit_hazard[arm] = update_hazard(logit_hazard[arm], covs[arm][0], eps[arm])
        epsilons.append({str(arm): eps[arm] for arm in ARMS})
        state = _scores(ds, fits, obs, frame, logit_hazard, t0)
        eics = {arm: state[arm][0] for arm in ARMS}
        trace.append(abs(float(np.mean((eics[1] - eics[0]).total))))
        if _converged(eics, n, score_floor, targeting):
            converged = True
            break
    if not converged:
        warnings.warn(f"hazard targeting stopped after {it} iterations above tolerance",
                      ConvergenceWarning, stacklevel=2)
    return TargetedHazard(logit_hazard, epsilons, trace, it, converged, targeting, fluctuation)


def _fit_eps(X, y, w, off):
    if X.shape[0] == 0 or not np.any(X != 0):
        return np.zeros(X.shape[1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = fit_logistic(X, y, w, off)
    return res.coefficients


def _solve(covs, rows, obs, logit_hazard, targeting) -> dict[int, float]:
    if targeting == "separate":
        out = {}
        for arm in ARMS:
            r = rows[arm]
            cov, w = covs[arm]
            wm = np.broadcast_to(w[:, None], cov.shape)
            out[arm] = float(_fit_eps(cov[r][:, None], obs.d_event[r], wm[r],
                                      logit_hazard[arm][r])[0])
        return out
    r1, r0 = rows[1], rows[0]
    y = np.concatenate([obs.d_event[r1], obs.d_event[r0]])
    off = np.concatenate([logit_hazard[1][r1], logit_hazard[0][r0]])
    w = np.concatenate([np.broadcast_to(covs[1][1][:, None], r1.shape)[r1],
                        np.broadcast_to(covs[0][1][:, None], r0.shape)[r0]])
    c1, c0 = covs[1][0][r1], covs[0][0][r0]
    if targeting == "simultaneous":
        X = np.zeros((c1.size + c0.size, 2))
        X[:c1.size, 0] = c1
        X[c1.size:, 1] = c0
        e = _fit_eps(X, y, w, off)
        return {1: float(e[0]), 0: float(e[1])}
    X = np.concatenate([c1, c0])[:, None]
    e = float(_fit_eps(X, y, w, off)[0])
    return {1: e, 0: e}


# -- estimator -------------------------------------------------------------------------

@dataclass(eq=False)
class SurvivalTMLEResult:
    report: EstimateReport
    fits: HazardFits
    eic: SurvivalEIC
    eic_arm: dict[int, SurvivalEIC]
    targeted: TargetedHazard
    survival_t0: dict[int, np.ndarray]
    config: RunConfig
    extras: dict = field(default_factory=dict)


def _horizon(ds: Dataset, config: RunConfig) -> int:
    t0 = config.t0 if config.t0 is not None else ds.t0
    if t0 is None:
        raise ValidationError("a horizon t0 is required")
    if config.tau is not None and int(config.tau) != int(ds.tau):
        raise ValidationError(f"config tau={config.tau} differs from data tau={ds.tau}")
    if not 1 <= int(t0) <= int(ds.tau):
        raise ValidationError("need 1 <= t0 <= tau")
    return int(t0)


def survival_from_fits(ds: Dataset, fits: HazardFits, config: RunConfig) -> SurvivalTMLEResult:
    """Targeting, plug-in and inference on already-fitted hazards."""
    if config.unit_ratio and not fits.unit_ratio:
        fits = replace(fits, unit_ratio=True)
    t0 = _horizon(ds, config)
    targeted = target_hazard(ds, fits, config.targeting, config.fluctuation, t0,
                             config.iteration_cap, config.score_floor)
    frame = ds.frame()
    obs = _Observed.from_dataset(ds)
    state = _scores(ds, fits, obs, frame, targeted.logit_hazard, t0)
    eic_arm = {arm: state[arm][0] for arm in ARMS}
    psi = {arm: state[arm][1] for arm in ARMS}
    eic = eic_arm[1] - eic_arm[0]
    total = eic.total
    ate = psi[1] - psi[0]
    sigma, lo, hi = wald(ate, total)
    hits = _positivity(fits, frame, t0)
    first = targeted.epsilons[0] if targeted.epsilons else {"1": 0.0, "0": 0.0}
    total_eps = {k: float(sum(step[k] for step in targeted.epsilons)) for k in ("1", "0")}
    method = "logistic-weighted" if config.fluctuation == "weight" else "logistic-covariate"
    if config.targeting == "difference":
        fl = {"ate": FluctuationResult(total_eps["1"], targeted.iterations,
                                       targeted.score_trace[0], targeted.score_trace[-1], method,
                                       targeted.converged)}
    else:
        fl = {str(arm): FluctuationResult(total_eps[str(arm)], targeted.iterations,
                                          targeted.score_trace[0], targeted.score_trace[-1],
                                          method, targeted.converged) for arm in ARMS}
    diagnostics = {"iterations": targeted.iterations, "score_trace": targeted.score_trace,
                   "first_epsilon": first, "t0": t0, "tau": int(ds.tau),
                   "eic_mean_psi1": float(np.mean(eic_arm[1].total)),
                   "eic_mean_psi0": float(np.mean(eic_arm[0].total))}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ip = {arm: ipctw_estimate(ds, fits, arm, t0) for arm in ARMS}
    diagnostics["ipctw"] = {"psi1": ip[1], "psi0": ip[0], "ate": ip[1] - ip[0]}
    report = EstimateReport(
        estimand=SURVIVAL, variant="less-aggressive" if fits.unit_ratio else "full",
        targeting=config.targeting, psi1=psi[1], psi0=psi[0], ate=ate, sigma_n=sigma,
        ci_lo=lo, ci_hi=hi, n=ds.n, n_source=ds.n_source, n_target=ds.n_target,
        eic_mean=abs(float(np.mean(total))),
        sigma_psi1=float(np.std(eic_arm[1].total, ddof=1)),
        sigma_psi0=float(np.std(eic_arm[0].total, ddof=1)),
        fluctuations=fl, positivity_warnings=hits, diagnostics=diagnostics)
    return SurvivalTMLEResult(report, fits, eic, eic_arm, targeted,
                              {arm: state[arm][2] for arm in ARMS}, config)


def _positivity(fits: HazardFits, frame, t0) -> int:
    lo = fits.truncation
    if lo <= 0:
        return 0
    hits = 0
    p1 = fits.g_a.predict(frame)
    hits += int(np.sum(np.minimum(p1, 1 - p1) <= lo))
    for arm in ARMS:
        hits += int(np.sum(curves_for(fits, frame, arm).g_bar[:, :t0] <= lo))
    if not fits.unit_ratio:
        hits += int(np.sum(fits.r_fit.predict(frame) <= lo))
    if hits:
        warnings.warn(f"{hits} nuisance predictions at the truncation bound {lo}",
                      PositivityWarning, stacklevel=3)
    return hits


def fit_survival_tmle(ds: Dataset, config: RunConfig | None = None) -> SurvivalTMLEResult:
    config = config or RunConfig(estimand=SURVIVAL)
    if ds.kind != SURVIVAL:
        raise ValidationError("fit_survival_tmle expects survival data")
    fits = fit_hazards(person_time_expand(ds), config.nuisance)
    return survival_from_fits(ds, fits, config)


def estimate_survival(ds: Dataset, config: RunConfig | None = None) -> EstimateReport:
    """Person-time expansion, hazard fits, iterated targeting, plug-in and Wald CI."""
    return fit_survival_tmle(ds, config).report


# -- exact remainder -------------------------------------------------------------------

def exact_remainder_mc(fits: HazardFits, dgp, mc_draws: int, seed: int = 0,
                       contrast: str = "ate") -> tuple[float, float]:
    """Monte-Carlo ``Psi(P) - Psi(P0) + P0 D*_P`` for hazard-based nuisances.

    ``P`` uses the true P(S=1) and the true law of W given S=0, so its
    ``d_w`` part has mean zero and ``Psi(P)`` is computed by enumeration.
    """
    from .dgp import generate, support, true_values

    truth = true_values(dgp)
    fits = replace(fits, p_s1=truth.p_s1)
    frame, prob = support(dgp)
    w_tgt = prob * (1.0 - dgp.selection.mean(frame))
    psi_p = {arm: float(np.sum(w_tgt * curves_for(fits, frame, arm).at(dgp.t0)) / np.sum(w_tgt))
             for arm in ARMS}
    draws = generate(dgp, mc_draws, seed)
    per_arm = {arm: survival_eic(draws, fits, arm, psi_p[arm], dgp.t0).total for arm in ARMS}
    truth_arm = {1: truth.psi1, 0: truth.psi0}
    if contrast == "ate":
        d = per_arm[1] - per_arm[0]
        gap = (psi_p[1] - psi_p[0]) - truth.ate
    else:
        arm = 1 if contrast == "psi1" else 0
        d = per_arm[arm]
        gap = psi_p[arm] - truth_arm[arm]
    return gap + float(np.mean(d)), float(np.std(d, ddof=1) / math.sqrt(mc_draws))
