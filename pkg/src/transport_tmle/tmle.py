"""TMLE of the transported treatment effect for an outcome subject to missingness.

Three stages per arm:

1. fluctuate the outcome regression ``Qbar(a, W)`` along the clever
   covariate ``C_Y(a)`` on source rows with an observed outcome;
2. regress the targeted ``Qbar*(a, W)`` on ``V`` over source rows and
   fluctuate that fit linearly along ``C_WV``;
3. average the targeted reduced regression over the target stratum.

The joint variant replaces stage 1 by a single fluctuation along
``C_Y(1) - C_Y(0)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from .config import RunConfig
from .data import MISSING_OUTCOME, Dataset
from .eic import EICDecomposition, eic_psi_a, outcome_weight, reduced_weight
from .errors import ConvergenceWarning, ValidationError
from .glm import RegressionFit, fit_logistic
from .nuisance import NuisanceFits, fit_nuisances, fit_reduced_regression
from .report import EstimateReport, FluctuationResult, score_tolerance, wald

ARMS = (1, 0)


def _rows(frame, mask):
    return {k: v[mask] for k, v in frame.items()}


def w_rows(ds: Dataset) -> np.ndarray:
    """Rows on which W is observed: the source stratum, or everyone when V=W."""
    if ds.schema.v_equals_w:
        return np.ones(ds.n, bool)
    return ds.s == 1


@dataclass(eq=False)
class TargetedOutcome:
    """Targeted outcome regression on the W-observed rows (outcome scale)."""

    q_star: dict[int, np.ndarray]
    epsilon: float | dict[int, float]
    results: dict[str, FluctuationResult]
    fluctuation: str
    targeting: str


def _submodel_covariate(weight: np.ndarray, arm: int, fluctuation: str, targeting: str):
    """Covariate multiplying epsilon when predicting Qbar*(arm, W)."""
    sign = 1.0 if (targeting == "separate" or arm == 1) else -1.0
    if fluctuation == "weight":
        return np.full_like(weight, sign)
    return sign * weight


def targeted_prediction(q_initial: np.ndarray, weight: np.ndarray, epsilon: float, arm: int,
                        fluctuation: str, targeting: str, y_bounds) -> np.ndarray:
    """Evaluate the fluctuated outcome regression for one arm.

    ``q_initial`` is Qbar(arm, W) on the outcome scale and ``weight`` the
    clever-covariate function ``r(V)/[P(S=1) g p_Delta]`` at the same rows.
    """
    cov = _submodel_covariate(weight, arm, fluctuation, targeting)
    if fluctuation == "linear":
        return q_initial + epsilon * cov
    lo, hi = y_bounds
    scaled = (q_initial - lo) / (hi - lo)
    return lo + (hi - lo) * expit(logit(scaled) + epsilon * cov)


def _score(weight, y, q, mask, n):
    return float(np.sum(weight[mask] * (y[mask] - q[mask])) / n)


def target_outcome_regression(ds: Dataset, fits: NuisanceFits, targeting: str = "separate",
                              fluctuation: str = "covariate",
                              q_initial: dict[int, np.ndarray] | None = None) -> TargetedOutcome:
    """Fluctuate Qbar so the outcome component of the gradient has mean zero.

    Covariate mode uses ``logit Qbar_eps = logit Qbar + eps * C``; weight
    mode uses an intercept (sign-adjusted in the joint variant) with weight
    ``|C|``; linear mode uses ``Qbar + eps * C`` with squared-error loss.
    """
    if targeting not in ("separate", "joint"):
        raise ValidationError(f"unknown targeting {targeting!r}")
    n = ds.n
    rows = w_rows(ds)
    fr = _rows(ds.frame(), rows)
    weight, q0 = {}, {}
    for arm in ARMS:
        weight[arm] = np.full(n, np.nan)
        weight[arm][rows] = outcome_weight(fr, fits, arm)
        if q_initial is not None:
            q0[arm] = q_initial[arm]
        else:
            q0[arm] = np.full(n, np.nan)
            q0[arm][rows] = fits.q(fr, arm)
    lo, hi = fits.y_bounds
    obs = (ds.s == 1) & (ds.delta == 1)
    y = np.where(obs, ds.y, 0.0)
    a = np.nan_to_num(ds.a, nan=-1.0)

    def fit_eps(mask, cov, weights, q_obs):
        if not np.any(mask):
            return 0.0, 0, True
        if fluctuation == "linear":
            denom = float(np.sum(weights[mask] * cov[mask] ** 2))
            eps = float(np.sum(weights[mask] * cov[mask] * (y[mask] - q_obs[mask]))) / denom \
                if denom > 0 else 0.0
            return eps, 1, True
        scaled_y = (y[mask] - lo) / (hi - lo)
        off = logit((q_obs[mask] - lo) / (hi - lo))
        res = fit_logistic(cov[mask][:, None], scaled_y, weights[mask], off)
        if not res.converged:
            warnings.warn("outcome fluctuation did not converge", ConvergenceWarning,
                          stacklevel=3)
        return float(res.coefficients[0]), res.iterations, res.converged

    q_star, results = {}, {}
    if targeting == "separate":
        eps_out = {}
        for arm in ARMS:
            mask = obs & (a == arm)
            before = _score(weight[arm], y, q0[arm], mask, n)
            cov = _submodel_covariate(weight[arm], arm, fluctuation, targeting)
            wts = weight[arm] if fluctuation == "weight" else np.ones(n)
            eps, its, conv = fit_eps(mask, cov, wts, q0[arm])
            q_star[arm] = np.full(n, np.nan)
            q_star[arm][rows] = targeted_prediction(q0[arm][rows], weight[arm][rows], eps, arm,
                                                    fluctuation, targeting, fits.y_bounds)
            after = _score(weight[arm], y, q_star[arm], mask, n)
            eps_out[arm] = eps
            results[str(arm)] = FluctuationResult(eps, its, abs(before), abs(after),
                                                  _method(fluctuation), conv)
        return TargetedOutcome(q_star, eps_out, results, fluctuation, targeting)

    # joint: one epsilon along C_Y(1) - C_Y(0)
    arm_of_row = np.where(a == 1, 1, 0)
    w_obs = np.where(arm_of_row == 1, weight[1], weight[0])
    q_obs = np.where(arm_of_row == 1, q0[1], q0[0])
    cov = np.where(arm_of_row == 1, _submodel_covariate(weight[1], 1, fluctuation, "joint"),
                   _submodel_covariate(weight[0], 0, fluctuation, "joint"))
    signed = np.where(arm_of_row == 1, w_obs, -w_obs)
    before = _score(signed, y, q_obs, obs, n)
    wts = w_obs if fluctuation == "weight" else np.ones(n)
    eps, its, conv = fit_eps(obs, cov, wts, q_obs)
    for arm in ARMS:
        q_star[arm] = np.full(n, np.nan)
        q_star[arm][rows] = targeted_prediction(q0[arm][rows], weight[arm][rows], eps, arm,
                                                fluctuation, "joint", fits.y_bounds)
    q_obs_star = np.where(arm_of_row == 1, q_star[1], q_star[0])
    after = _score(signed, y, q_obs_star, obs, n)
    results["ate"] = FluctuationResult(eps, its, abs(before), abs(after), _method(fluctuation),
                                       conv)
    return TargetedOutcome(q_star, eps, results, fluctuation, targeting)


def _method(fluctuation):
    return {"covariate": "logistic-covariate", "weight": "logistic-weighted",
            "linear": "linear-covariate"}[fluctuation]


@dataclass(eq=False)
class TargetedReduced:
    values: np.ndarray
    epsilon: float
    fit: RegressionFit | None
    note: str = ""


def target_reduced_regression(ds: Dataset, q_star: np.ndarray, fits: NuisanceFits, design=None
                              ) -> TargetedReduced:
    """Targeted Qr*(a, V) on every row.

    Least squares of ``q_star`` on V over source rows, then a linear
    fluctuation along ``r(V)/P(S=1)`` whose epsilon is the closed form
    ``sum(h * resid) / sum(h^2)``. When V equals W the regression is the
    identity and no fluctuation is needed.
    """
    if ds.schema.v_equals_w:
        return TargetedReduced(q_star.copy(), 0.0, None, "V equals W")
    from .nuisance import default_designs

    if design is None:
        design = default_designs(ds.schema)["q_bar_r"]
    src = ds.s == 1
    frame = ds.frame()
    fit = fit_reduced_regression(np.where(src, q_star, 0.0), frame, src, design)
    pred = fit.predict(frame)
    h = reduced_weight(frame, fits)
    resid = q_star[src] - pred[src]
    denom = float(np.sum(h[src] ** 2))
    if denom == 0.0:
        return TargetedReduced(pred, 0.0, fit, "zero clever-covariate variance")
    eps = float(np.sum(h[src] * resid)) / denom
    return TargetedReduced(pred + eps * h, eps, fit)


@dataclass(eq=False)
class TMLEResult:
    """Report plus the per-unit gradient and fitted pieces behind it."""

    report: EstimateReport
    fits: NuisanceFits
    eic: EICDecomposition
    eic_arm: dict[int, EICDecomposition]
    outcome: TargetedOutcome
    reduced: dict[int, TargetedReduced]
    epsilon_total: float | dict[int, float]
    config: RunConfig
    extras: dict = field(default_factory=dict)


def tmle_from_fits(ds: Dataset, fits: NuisanceFits, config: RunConfig) -> TMLEResult:
    """Run the targeting stages and inference on already-fitted nuisances."""
    if config.unit_ratio and not fits.unit_ratio:
        fits = replace(fits, unit_ratio=True)
    n = ds.n
    tgt = ds.s == 0
    design = config.nuisance.designs.get("q_bar_r")
    q_current = None
    eps_total: float | dict[int, float] = 0.0 if config.targeting == "joint" else {0: 0.0, 1: 0.0}
    first_results = None
    passes = []
    for repeat in range(1, config.iteration_cap + 1):
        outcome = target_outcome_regression(ds, fits, config.targeting, config.fluctuation,
                                            q_current)
        if first_results is None:
            first_results = outcome.results
        passes.append(outcome.epsilon)
        if config.targeting == "joint":
            eps_total += outcome.epsilon
        else:
            eps_total = {k: eps_total[k] + outcome.epsilon[k] for k in ARMS}
        reduced = {arm: target_reduced_regression(ds, outcome.q_star[arm], fits, design)
                   for arm in ARMS}
        psi = {arm: float(np.mean(reduced[arm].values[tgt])) if np.any(tgt) else math.nan
               for arm in ARMS}
        eic_arm = {arm: eic_psi_a(ds, fits, arm, psi[arm], outcome.q_star[arm],
                                  reduced[arm].values) for arm in ARMS}
        eic = eic_arm[1] - eic_arm[0]
        total = eic.total
        sigma = float(np.std(total, ddof=1))
        tol = score_tolerance(sigma, n, config.score_floor)
        if abs(float(np.mean(total))) <= tol:
            break
        q_current = outcome.q_star
    else:
        warnings.warn(f"EIC mean still above tolerance after {repeat} passes",
                      ConvergenceWarning, stacklevel=2)
    results = {k: FluctuationResult(
        epsilon=(eps_total if config.targeting == "joint" else eps_total[int(k)]),
        iterations=repeat, eic_residual_before=first_results[k].eic_residual_before,
        eic_residual_after=v.eic_residual_after, method=v.method, converged=v.converged)
        for k, v in outcome.results.items()}
    ate = psi[1] - psi[0]
    sigma, lo, hi = wald(ate, total)
    src_frame = _rows(ds.frame(), ds.s == 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        hits = fits.positivity_hits(src_frame, ds.frame()) if fits.truncation > 0 else 0
    report = EstimateReport(
        estimand=MISSING_OUTCOME, variant="less-aggressive" if fits.unit_ratio else "full",
        targeting=config.targeting, psi1=psi[1], psi0=psi[0], ate=ate, sigma_n=sigma,
        ci_lo=lo, ci_hi=hi, n=n, n_source=ds.n_source, n_target=ds.n_target,
        eic_mean=abs(float(np.mean(total))),
        sigma_psi1=float(np.std(eic_arm[1].total, ddof=1)),
        sigma_psi0=float(np.std(eic_arm[0].total, ddof=1)),
        fluctuations=results, positivity_warnings=hits,
        diagnostics={"stage_passes": repeat,
                     "epsilon_reduced": {str(a): reduced[a].epsilon for a in ARMS},
                     "score_tolerance": score_tolerance(sigma, n, config.score_floor),
                     "eic_mean_psi1": float(np.mean(eic_arm[1].total)),
                     "eic_mean_psi0": float(np.mean(eic_arm[0].total)),
                     "missing_rate": ds.missing_rate})
    return TMLEResult(report, fits, eic, eic_arm, outcome, reduced, eps_total, config,
                      {"epsilon_passes": passes})


def fit_tmle(ds: Dataset, config: RunConfig | None = None) -> TMLEResult:
    config = config or RunConfig()
    if ds.kind != MISSING_OUTCOME:
        raise ValidationError("fit_tmle expects missing-outcome data")
    return tmle_from_fits(ds, fit_nuisances(ds, config.nuisance), config)


def estimate(ds: Dataset, config: RunConfig | None = None) -> EstimateReport:
    """Full pipeline: nuisances, both targeting stages, plug-in and Wald CI."""
    return fit_tmle(ds, config).report


# -- exact remainder -------------------------------------------------------------------

def exact_remainder_mc(fits: NuisanceFits, dgp, mc_draws: int, seed: int = 0,
                       contrast: str = "ate") -> tuple[float, float]:
    """Monte-Carlo value of ``Psi(P) - Psi(P0) + P0 D*_P`` and its MC standard error.

    ``P`` is described by ``fits`` (which must carry ``q_bar_r`` unless V=W;
    hazard fits are handed to the survival version);
    its marginal of S and of V given S=0 are taken from ``dgp`` because the
    empirical versions of both are always consistent. ``contrast`` is
    ``"ate"``, ``"psi1"`` or ``"psi0"``.
    """
    from .dgp import generate, reduced_truth_values, true_values
    from .nuisance import HazardFits

    if isinstance(fits, HazardFits):
        from .survival import exact_remainder_mc as survival_remainder

        return survival_remainder(fits, dgp, mc_draws, seed, contrast)
    truth = true_values(dgp)
    fits = replace(fits, p_s1=truth.p_s1)
    psi_p = reduced_truth_values(dgp, fits)
    draws = generate(dgp, mc_draws, seed)
    per_arm = {}
    for arm in ARMS:
        q_r = None
        if not draws.schema.v_equals_w:
            q_r = fits.q_bar_r[arm].predict(draws.frame())
        per_arm[arm] = eic_psi_a(draws, fits, arm, psi_p[arm], q_r_values=q_r).total
    truth_arm = {1: truth.psi1, 0: truth.psi0}
    if contrast == "ate":
        d = per_arm[1] - per_arm[0]
        gap = (psi_p[1] - psi_p[0]) - (truth_arm[1] - truth_arm[0])
    else:
        arm = 1 if contrast == "psi1" else 0
        d = per_arm[arm]
        gap = psi_p[arm] - truth_arm[arm]
    return gap + float(np.mean(d)), float(np.std(d, ddof=1) / math.sqrt(mc_draws))
