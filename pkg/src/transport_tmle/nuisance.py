"""Parametric nuisance estimation for both estimation problems.

Missing outcome: treatment ``g_A``, missingness ``p_Delta``, selection
``P(S=1|V)`` (and ``P(S=1|W)`` when W is seen in both strata), outcome
regression ``Qbar(a, W)`` and the reduced regression ``Qbar^r(a, V)``.

Survival: pooled-logistic event hazard ``lambda(t|W,A)``, censoring hazard
``alpha(t|W,A)``, treatment ``g_A`` and selection ``P(S=1|W)``.

Probabilities entering denominators are truncated on the side that can
vanish: ``g_A`` to ``[lo, 1-lo]``, ``p_Delta`` and ``P(S=1|.)`` from below,
``1 - alpha`` from below.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy.special import logit

from .data import MISSING_OUTCOME, SURVIVAL, Dataset, PersonTimeTable, Schema
from .errors import PositivityWarning, TransportError, ValidationError
from .glm import IDENTITY, LOGIT, DesignSpec, RegressionFit, fit_design

MISSING_NUISANCES = ("g_a", "p_delta", "p_s_given_v", "p_s_given_w", "q_bar", "q_bar_r")
SURVIVAL_NUISANCES = ("g_a", "lambda", "alpha", "r")

HAZARD_FLOOR = 1e-12


def default_designs(schema: Schema, binary_outcome: bool = True) -> dict[str, DesignSpec]:
    w, v = schema.w_columns, schema.v_columns
    if schema.kind == SURVIVAL:
        hz = DesignSpec(("t", *w, "a"), categorical=("t",))
        return {"g_a": DesignSpec(w), "lambda": hz, "alpha": hz, "r": DesignSpec(w)}
    return {
        "g_a": DesignSpec(w),
        "p_delta": DesignSpec((*w, "a")),
        "p_s_given_v": DesignSpec(v),
        "p_s_given_w": DesignSpec(w),
        "q_bar": DesignSpec((*w, "a"), link=LOGIT if binary_outcome else IDENTITY),
        "q_bar_r": DesignSpec(v, link=IDENTITY),
    }


@dataclass(frozen=True)
class NuisanceConfig:
    """Designs per nuisance, injected fits, and truncation settings.

    ``fixed`` maps a nuisance name to a :class:`RegressionFit` that is used
    as-is (passthrough mode, e.g. true coefficients from a simulation).
    ``q_bar`` may also be fixed per arm under keys ``q_bar_1``/``q_bar_0``,
    and ``q_bar_r`` likewise.
    """

    designs: Mapping[str, DesignSpec] = field(default_factory=dict)
    fixed: Mapping[str, RegressionFit] = field(default_factory=dict)
    truncation: float = 0.005
    outcome_bound: float = 1e-5
    q_bar_by_arm: bool = False
    marginal_odds: bool = True
    y_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if not 0.0 <= self.truncation < 0.5:
            raise ValidationError("truncation must lie in [0, 0.5)")
        if not 0.0 <= self.outcome_bound < 0.5:
            raise ValidationError("outcome_bound must lie in [0, 0.5)")

    def design(self, name: str, schema: Schema, binary_outcome: bool = True) -> DesignSpec:
        if name in self.designs:
            return self.designs[name]
        return default_designs(schema, binary_outcome)[name]

    @classmethod
    def from_dict(cls, doc: Mapping) -> "NuisanceConfig":
        designs = {k: DesignSpec.from_dict(v) for k, v in doc.get("designs", {}).items()}
        fixed = {k: RegressionFit.from_dict(v) for k, v in doc.get("fixed", {}).items()}
        yb = doc.get("y_bounds")
        return cls(designs, fixed, float(doc.get("truncation", 0.005)),
                   float(doc.get("outcome_bound", 1e-5)),
                   bool(doc.get("q_bar_by_arm", False)),
                   bool(doc.get("density_ratio_includes_marginal_odds", True)),
                   None if yb is None else (float(yb[0]), float(yb[1])))


def predict(fit: RegressionFit, frame, offset=None, bounds: tuple[float, float] | None = None):
    """Prediction through the link, optionally clipped to ``bounds``."""
    out = fit.predict(frame, offset)
    if bounds is not None:
        out = np.clip(out, bounds[0], bounds[1])
    return out


def with_arm(frame: Mapping[str, np.ndarray], arm: int) -> dict[str, np.ndarray]:
    fr = dict(frame)
    n = len(next(iter(frame.values())))
    fr["a"] = np.full(n, float(arm))
    return fr


def _note_positivity(name, p, lo):
    if lo > 0:
        hits = int(np.sum(p <= lo))
        if hits:
            warnings.warn(f"{name}: {hits} predictions at truncation bound {lo}",
                          PositivityWarning, stacklevel=3)
        return hits
    return 0


@dataclass(frozen=True, eq=False)
class NuisanceFits:
    """Fitted nuisances for the missing-outcome problem with prediction helpers."""

    g_a: RegressionFit
    p_delta: RegressionFit
    p_s_given_v: RegressionFit
    q_bar: Mapping[int, RegressionFit]
    p_s1: float
    truncation: float = 0.005
    outcome_bound: float = 1e-5
    marginal_odds: bool = True
    y_bounds: tuple[float, float] = (0.0, 1.0)
    p_s_given_w: RegressionFit | None = None
    q_bar_r: Mapping[int, RegressionFit] | None = None
    unit_ratio: bool = False

    # -- probabilities -------------------------------------------------------
    def g(self, frame, arm: int) -> np.ndarray:
        """P(A=arm | W, S=1), truncated to [lo, 1-lo]."""
        p1 = self.g_a.predict(frame)
        p = p1 if arm == 1 else 1.0 - p1
        return np.clip(p, self.truncation, 1.0 - self.truncation)

    def p_observed(self, frame, arm: int) -> np.ndarray:
        """P(Delta=1 | W, A=arm, S=1), truncated from below."""
        return np.maximum(self.p_delta.predict(with_arm(frame, arm)), self.truncation)

    def density_ratio(self, frame) -> np.ndarray:
        """Estimate of p(V|S=0)/p(V|S=1) through the selection odds."""
        n = len(next(iter(frame.values())))
        if self.unit_ratio:
            return np.ones(n)
        ps1 = np.clip(self.p_s_given_v.predict(frame), self.truncation, 1.0)
        ratio = (1.0 - ps1) / ps1
        if self.marginal_odds:
            ratio = ratio * (self.p_s1 / (1.0 - self.p_s1))
        return ratio

    def positivity_hits(self, frame_source, frame_all) -> int:
        lo = self.truncation
        hits = 0
        p1 = self.g_a.predict(frame_source)
        hits += _note_positivity("g_A", np.minimum(p1, 1 - p1), lo)
        for arm in (0, 1):
            hits += _note_positivity("p_Delta", self.p_delta.predict(with_arm(frame_source, arm)), lo)
        if not self.unit_ratio:
            hits += _note_positivity("P(S=1|V)", self.p_s_given_v.predict(frame_all), lo)
        return hits

    # -- outcome regressions -------------------------------------------------
    def q(self, frame, arm: int) -> np.ndarray:
        """Initial outcome regression Qbar(arm, W) on the outcome scale."""
        fit = self.q_bar[arm]
        pred = fit.predict(with_arm(frame, arm))
        lo, hi = self.y_bounds
        span = hi - lo
        b = self.outcome_bound
        return np.clip(pred, lo + b * span, hi - b * span)

    def q_scaled(self, frame, arm: int) -> np.ndarray:
        lo, hi = self.y_bounds
        return (self.q(frame, arm) - lo) / (hi - lo)

    def to_dict(self) -> dict:
        out = {"g_a": self.g_a.to_dict(), "p_delta": self.p_delta.to_dict(),
               "p_s_given_v": self.p_s_given_v.to_dict(),
               "q_bar": {str(k): f.to_dict() for k, f in self.q_bar.items()},
               "p_s1": self.p_s1, "truncation": self.truncation,
               "outcome_bound": self.outcome_bound, "marginal_odds": self.marginal_odds,
               "y_bounds": list(self.y_bounds), "unit_ratio": self.unit_ratio}
        if self.p_s_given_w is not None:
            out["p_s_given_w"] = self.p_s_given_w.to_dict()
        if self.q_bar_r is not None:
            out["q_bar_r"] = {str(k): f.to_dict() for k, f in self.q_bar_r.items()}
        return out

    @classmethod
    def from_dict(cls, doc: Mapping) -> "NuisanceFits":
        rf = RegressionFit.from_dict
        return cls(rf(doc["g_a"]), rf(doc["p_delta"]), rf(doc["p_s_given_v"]),
                   {int(k): rf(v) for k, v in doc["q_bar"].items()}, float(doc["p_s1"]),
                   float(doc["truncation"]), float(doc["outcome_bound"]),
                   bool(doc["marginal_odds"]), tuple(doc["y_bounds"]),
                   rf(doc["p_s_given_w"]) if "p_s_given_w" in doc else None,
                   {int(k): rf(v) for k, v in doc["q_bar_r"].items()} if "q_bar_r" in doc
                   else None, bool(doc.get("unit_ratio", False)))


def outcome_bounds(ds: Dataset, config: NuisanceConfig) -> tuple[tuple[float, float], bool]:
    """(lo, hi) outcome range and whether the outcome is binary."""
    y = ds.y[ds.source & (ds.delta == 1)]
    y = y[~np.isnan(y)]
    binary = y.size > 0 and bool(np.all((y == 0) | (y == 1)))
    if config.y_bounds is not None:
        return config.y_bounds, binary
    if binary or y.size == 0:
        return (0.0, 1.0), binary
    lo, hi = float(np.min(y)), float(np.max(y))
    if hi <= lo:
        hi = lo + 1.0
    return (lo, hi), False


class NuisanceFitError(TransportError):
    """A fitter failed; ``nuisance`` names which one."""

    def __init__(self, nuisance, exc):
        self.nuisance = nuisance
        super().__init__(f"{nuisance}: {exc}")


def _fit(name, config, design, frame, y, rows, weights=None):
    if name in config.fixed:
        return config.fixed[name]
    try:
        return fit_design(design, frame, y, rows=rows, weights=weights)
    except (TransportError, ValueError, np.linalg.LinAlgError) as exc:
        raise NuisanceFitError(name, exc) from exc


def fit_nuisances(ds: Dataset, config: NuisanceConfig | None = None) -> NuisanceFits:
    """Fit every missing-outcome nuisance except the reduced regression."""
    config = config or NuisanceConfig()
    if ds.kind != MISSING_OUTCOME:
        raise ValidationError("fit_nuisances expects missing-outcome data")
    sch = ds.schema
    fr = ds.frame()
    src = ds.source
    bounds, binary = outcome_bounds(ds, config)
    d = lambda name: config.design(name, sch, binary)  # noqa: E731
    g_a = _fit("g_a", config, d("g_a"), fr, ds.a, src)
    p_delta = _fit("p_delta", config, d("p_delta"), fr, ds.delta, src)
    p_s_v = _fit("p_s_given_v", config, d("p_s_given_v"), fr, ds.s, None)
    p_s_w = None
    if sch.v_equals_w or "p_s_given_w" in config.fixed:
        p_s_w = _fit("p_s_given_w", config, d("p_s_given_w"), fr, ds.s, None)
    obs = src & (ds.delta == 1)
    y = np.where(obs, ds.y, 0.0)
    q_design = d("q_bar")
    if q_design.link == LOGIT and not binary:
        # continuous outcomes under a logit link are fitted on the [0,1] scale
        y_fit = (y - bounds[0]) / (bounds[1] - bounds[0])
    else:
        y_fit = y
    q_bar = {}
    for arm in (0, 1):
        key = f"q_bar_{arm}"
        if key in config.fixed:
            q_bar[arm] = config.fixed[key]
        elif "q_bar" in config.fixed:
            q_bar[arm] = config.fixed["q_bar"]
        elif config.q_bar_by_arm:
            q_bar[arm] = _fit(key, config, q_design, fr, y_fit, obs & (ds.a == arm))
        else:
            q_bar[arm] = q_bar.get(0) or _fit("q_bar", config, q_design, fr, y_fit, obs)
    if q_design.link == LOGIT and not binary and "q_bar" not in config.fixed:
        q_bar = {arm: _rescaled(f, bounds) for arm, f in q_bar.items()}
    q_bar_r = None
    if any(k in config.fixed for k in ("q_bar_r", "q_bar_r_0", "q_bar_r_1")):
        q_bar_r = {arm: config.fixed.get(f"q_bar_r_{arm}", config.fixed.get("q_bar_r"))
                   for arm in (0, 1)}
    return NuisanceFits(g_a, p_delta, p_s_v, q_bar, ds.n_source / ds.n, config.truncation,
                        config.outcome_bound, config.marginal_odds, bounds, p_s_w, q_bar_r)


def _rescaled(fit: RegressionFit, bounds) -> RegressionFit:
    return replace(fit, output_range=(float(bounds[0]), float(bounds[1])))


def fit_reduced_regression(values, frame, rows, design: DesignSpec) -> RegressionFit:
    """Least-squares regression of per-row ``values`` on V over ``rows``."""
    if design.link != IDENTITY:
        design = design.with_link(IDENTITY)
    return fit_design(design, frame, values, rows=rows)


# -- survival -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HazardFits:
    """Fitted hazards, treatment and selection model for survival data."""

    lambda_fit: RegressionFit
    alpha_fit: RegressionFit | None
    g_a: RegressionFit
    r_fit: RegressionFit
    p_s1: float
    tau: int
    truncation: float = 0.005
    marginal_odds: bool = True
    unit_ratio: bool = False

    def _grid(self, frame, arm):
        n = len(next(iter(frame.values())))
        fr = {k: np.repeat(np.asarray(v, float), self.tau) for k, v in frame.items()}
        fr["t"] = np.tile(np.arange(1, self.tau + 1, dtype=float), n)
        fr["a"] = np.full(n * self.tau, float(arm))
        return fr, n

    def hazard(self, frame, arm: int) -> np.ndarray:
        """n x tau matrix of lambda(t | W_i, A=arm)."""
        fr, n = self._grid(frame, arm)
        lam = self.lambda_fit.predict(fr).reshape(n, self.tau)
        return np.clip(lam, HAZARD_FLOOR, 1.0 - HAZARD_FLOOR)

    def censoring(self, frame, arm: int) -> np.ndarray:
        """n x tau matrix of alpha(t | W_i, A=arm) with 1-alpha >= lo."""
        n = len(next(iter(frame.values())))
        if self.alpha_fit is None:
            return np.zeros((n, self.tau))
        fr, _ = self._grid(frame, arm)
        al = self.alpha_fit.predict(fr).reshape(n, self.tau)
        return np.clip(al, 0.0, 1.0 - self.truncation)

    def g(self, frame, arm: int) -> np.ndarray:
        p1 = self.g_a.predict(frame)
        p = p1 if arm == 1 else 1.0 - p1
        return np.clip(p, self.truncation, 1.0 - self.truncation)

    def density_ratio(self, frame) -> np.ndarray:
        """R(W) = P(S=0|W)/P(S=1|W), times P(S=1)/P(S=0) unless disabled."""
        n = len(next(iter(frame.values())))
        if self.unit_ratio:
            return np.ones(n)
        ps1 = np.clip(self.r_fit.predict(frame), self.truncation, 1.0)
        ratio = (1.0 - ps1) / ps1
        if self.marginal_odds:
            ratio = ratio * (self.p_s1 / (1.0 - self.p_s1))
        return ratio

    def to_dict(self) -> dict:
        return {"lambda": self.lambda_fit.to_dict(),
                "alpha": None if self.alpha_fit is None else self.alpha_fit.to_dict(),
                "g_a": self.g_a.to_dict(), "r": self.r_fit.to_dict(), "p_s1": self.p_s1,
                "tau": self.tau, "truncation": self.truncation,
                "marginal_odds": self.marginal_odds, "unit_ratio": self.unit_ratio}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "HazardFits":
        rf = RegressionFit.from_dict
        return cls(rf(doc["lambda"]), None if doc.get("alpha") is None else rf(doc["alpha"]),
                   rf(doc["g_a"]), rf(doc["r"]), float(doc["p_s1"]), int(doc["tau"]),
                   float(doc["truncation"]), bool(doc["marginal_odds"]),
                   bool(doc.get("unit_ratio", False)))


def fit_hazards(pt: PersonTimeTable, config: NuisanceConfig | None = None) -> HazardFits:
    """Pooled logistic hazards on person-time plus g_A and P(S=1|W) on units.

    The event hazard uses every at-risk row; the censoring hazard uses rows
    that did not fail in the period and excludes period tau, where every
    survivor is administratively censored.
    """
    config = config or NuisanceConfig()
    ds = pt.dataset
    sch = ds.schema
    d = lambda name: config.design(name, sch)  # noqa: E731
    pfr = pt.frame()
    lam = _fit("lambda", config, d("lambda"), pfr, pt.d_event, None)
    alpha_rows = (pt.d_event == 0) & (pt.t < pt.tau)
    if "alpha" in config.fixed:
        alpha = config.fixed["alpha"]
    elif np.any(alpha_rows):
        alpha = _fit("alpha", config, d("alpha"), pfr, pt.d_censor, alpha_rows)
    else:
        alpha = None
    fr = ds.frame()
    g_a = _fit("g_a", config, d("g_a"), fr, ds.a, ds.source)
    r = _fit("r", config, d("r"), fr, ds.s, None)
    return HazardFits(lam, alpha, g_a, r, ds.n_source / ds.n, pt.tau, config.truncation,
                      config.marginal_odds)


def logit_clip(p, floor=HAZARD_FLOOR):
    return logit(np.clip(p, floor, 1.0 - floor))


__all__ = ["NuisanceConfig", "NuisanceFits", "HazardFits", "fit_nuisances", "fit_hazards",
           "fit_reduced_regression", "predict", "default_designs", "with_arm", "logit_clip"]
