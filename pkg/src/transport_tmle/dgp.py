"""Simulation designs with computable ground truth.

Covariates are independent discrete variables. Given W the structural
equations are logistic: selection ``S``, treatment ``A``, missingness
``Delta`` and a Bernoulli (or Gaussian) outcome; for survival data a
per-period event hazard and censoring hazard. Truth is obtained by exact
summation over the covariate support or by Monte Carlo.

Random numbers come from numpy's counter-based Philox generator, so a
``(spec, n, seed)`` triple gives identical data on every platform.
Replication ``i`` of a study with master seed ``s`` uses
``SeedSequence([s, i])``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .data import MISSING_OUTCOME, SURVIVAL, Dataset, Schema
from .errors import EnumerationInfeasible, ValidationError
from .glm import IDENTITY, LOGIT, DesignSpec, RegressionFit
from .nuisance import NuisanceConfig, NuisanceFits, with_arm

ENUMERATION_CAP = 10**6
SCENARIOS = ("both", "q_only", "g_only", "neither")


# -- building blocks -------------------------------------------------------------------

@dataclass(frozen=True)
class Covariate:
    name: str
    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.values) != len(self.probs) or not self.values:
            raise ValidationError(f"covariate {self.name}: values and probs must match")
        if any(p < 0 for p in self.probs) or not math.isclose(sum(self.probs), 1.0,
                                                              abs_tol=1e-12):
            raise ValidationError(f"covariate {self.name}: probabilities must sum to 1")


@dataclass(frozen=True)
class LogisticModel:
    """``expit(intercept + sum b_j x_j + sum b_jk x_j x_k [+ time_effects[t-1]])``.

    ``constant`` overrides everything with a fixed probability (or mean, for a
    Gaussian outcome), which is how degenerate designs are written.
    """

    intercept: float = 0.0
    coefficients: Mapping[str, float] = field(default_factory=dict)
    interactions: tuple[tuple[str, str, float], ...] = ()
    time_effects: tuple[float, ...] = ()
    constant: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "coefficients", dict(self.coefficients))
        object.__setattr__(self, "interactions",
                           tuple((str(a), str(b), float(c)) for a, b, c in self.interactions))
        object.__setattr__(self, "time_effects", tuple(float(v) for v in self.time_effects))

    @property
    def columns(self) -> tuple[str, ...]:
        cols = list(self.coefficients)
        for a, b, _ in self.interactions:
            cols += [c for c in (a, b) if c not in cols]
        return tuple(cols)

    def eta(self, frame: Mapping[str, np.ndarray]) -> np.ndarray:
        n = len(next(iter(frame.values())))
        out = np.full(n, float(self.intercept))
        for c, b in self.coefficients.items():
            out = out + b * np.asarray(frame[c], float)
        for c1, c2, b in self.interactions:
            out = out + b * np.asarray(frame[c1], float) * np.asarray(frame[c2], float)
        if self.time_effects:
            t = np.asarray(frame["t"], int)
            out = out + np.asarray(self.time_effects)[t - 1]
        return out

    def mean(self, frame, link: str = LOGIT) -> np.ndarray:
        n = len(next(iter(frame.values())))
        if self.constant is not None:
            return np.full(n, float(self.constant))
        eta = self.eta(frame)
        return expit(eta) if link == LOGIT else eta

    def design(self, link: str = LOGIT) -> DesignSpec:
        cols = self.columns
        if self.time_effects:
            cols = ("t",) + cols
        return DesignSpec(cols, interactions=tuple((a, b) for a, b, _ in self.interactions),
                          link=link, categorical=("t",) if self.time_effects else ())

    def as_fit(self, link: str = LOGIT) -> RegressionFit:
        """The model as a :class:`RegressionFit` on :meth:`design`."""
        if self.constant is not None:
            raise ValidationError("constant models have no regression form")
        design = self.design(link)
        coef = [self.intercept]
        levels = {}
        if self.time_effects:
            tau = len(self.time_effects)
            levels = {"t": [float(t) for t in range(1, tau + 1)]}
            coef[0] += self.time_effects[0]
            coef += [e - self.time_effects[0] for e in self.time_effects[1:]]
        cols = [c for c in design.columns if c != "t"]
        coef += [self.coefficients.get(c, 0.0) for c in cols]
        coef += [b for _, _, b in self.interactions]
        return RegressionFit(np.asarray(coef, float), link, design, levels)

    def to_dict(self) -> dict:
        out = {"intercept": self.intercept, "coefficients": dict(self.coefficients)}
        if self.interactions:
            out["interactions"] = [list(i) for i in self.interactions]
        if self.time_effects:
            out["time_effects"] = list(self.time_effects)
        if self.constant is not None:
            out["constant"] = self.constant
        return out

    @classmethod
    def from_dict(cls, doc: Mapping | None) -> "LogisticModel | None":
        if doc is None:
            return None
        return cls(float(doc.get("intercept", 0.0)), dict(doc.get("coefficients", {})),
                   tuple(tuple(i) for i in doc.get("interactions", ())),
                   tuple(doc.get("time_effects", ())), doc.get("constant"))


@dataclass(frozen=True)
class DGPSpec:
    """Structural model for one of the two estimation problems.

    ``selection`` is P(S=1|W); for the missing-outcome problem it should
    involve V-columns only, otherwise the identification formula and the
    counterfactual target differ. ``outcome_noise`` > 0 switches the outcome
    to Gaussian with mean given by the identity-link model; ``= 0`` with a
    Gaussian family gives a noiseless outcome. ``misspecify_q`` names the
    covariates the outcome (or event hazard) model drops when misspecified.
    """

    kind: str
    covariates: tuple[Covariate, ...]
    v_columns: tuple[str, ...]
    selection: LogisticModel
    treatment: LogisticModel
    outcome: LogisticModel | None = None
    missingness: LogisticModel | None = None
    outcome_family: str = "bernoulli"
    outcome_noise: float = 0.0
    event_hazard: LogisticModel | None = None
    censoring_hazard: LogisticModel | None = None
    t0: int | None = None
    tau: int | None = None
    misspecify_q: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "v_columns", tuple(self.v_columns))
        object.__setattr__(self, "misspecify_q", tuple(self.misspecify_q))
        if self.kind not in (MISSING_OUTCOME, SURVIVAL):
            raise ValidationError(f"unknown kind {self.kind!r}")
        if self.kind == MISSING_OUTCOME and self.outcome is None:
            raise ValidationError("missing-outcome designs need an outcome model")
        if self.kind == SURVIVAL:
            if self.event_hazard is None or self.t0 is None or self.tau is None:
                raise ValidationError("survival designs need event_hazard, t0 and tau")
            if not 1 <= self.t0 <= self.tau:
                raise ValidationError("need 1 <= t0 <= tau")
        if self.outcome_family not in ("bernoulli", "gaussian"):
            raise ValidationError("outcome_family must be bernoulli or gaussian")

    @property
    def w_columns(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    @property
    def schema(self) -> Schema:
        v = self.w_columns if self.kind == SURVIVAL else self.v_columns
        return Schema(v, self.w_columns, self.kind, self.t0, self.tau)

    @property
    def support_size(self) -> int:
        return int(np.prod([len(c.values) for c in self.covariates]))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "v_columns": list(self.v_columns),
               "covariates": [{"name": c.name, "values": list(c.values),
                               "probs": list(c.probs)} for c in self.covariates],
               "selection": self.selection.to_dict(), "treatment": self.treatment.to_dict(),
               "outcome_family": self.outcome_family, "outcome_noise": self.outcome_noise,
               "misspecify_q": list(self.misspecify_q), "seed": self.seed}
        for key in ("outcome", "missingness", "event_hazard", "censoring_hazard"):
            model = getattr(self, key)
            if model is not None:
                out[key] = model.to_dict()
        if self.t0 is not None:
            out["t0"], out["tau"] = self.t0, self.tau
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "DGPSpec":
        lm = LogisticModel.from_dict
        return cls(kind=doc["kind"],
                   covariates=tuple(Covariate(c["name"], tuple(c["values"]), tuple(c["probs"]))
                                    for c in doc["covariates"]),
                   v_columns=tuple(doc.get("v_columns", ())),
                   selection=lm(doc["selection"]), treatment=lm(doc["treatment"]),
                   outcome=lm(doc.get("outcome")), missingness=lm(doc.get("missingness")),
                   outcome_family=doc.get("outcome_family", "bernoulli"),
                   outcome_noise=float(doc.get("outcome_noise", 0.0)),
                   event_hazard=lm(doc.get("event_hazard")),
                   censoring_hazard=lm(doc.get("censoring_hazard")),
                   t0=doc.get("t0"), tau=doc.get("tau"),
                   misspecify_q=tuple(doc.get("misspecify_q", ())),
                   seed=int(doc.get("seed", 0)))

    @classmethod
    def load(cls, path) -> "DGPSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- default designs -------------------------------------------------------------------

def missing_outcome_dgp(v_equals_w: bool = False) -> DGPSpec:
    """Three discrete covariates; V=(W1, W2) unless ``v_equals_w``."""
    covs = (Covariate("w1", (0, 1), (0.5, 0.5)), Covariate("w2", (0, 1, 2), (0.3, 0.4, 0.3)),
            Covariate("w3", (0, 1), (0.6, 0.4)))
    v = ("w1", "w2", "w3") if v_equals_w else ("w1", "w2")
    sel = {"w1": -0.8, "w2": 0.4}
    if v_equals_w:
        sel["w3"] = 0.5
    return DGPSpec(
        kind=MISSING_OUTCOME, covariates=covs, v_columns=v,
        selection=LogisticModel(0.3, sel),
        treatment=LogisticModel(-0.2, {"w1": 0.6, "w2": 0.2, "w3": -1.0}),
        missingness=LogisticModel(1.5, {"w2": -0.5, "a": 0.3, "w3": 0.4}),
        outcome=LogisticModel(-0.5, {"w1": 0.8, "w2": -0.3, "w3": 1.0, "a": 0.6},
                              (("a", "w1", 0.4),)),
        misspecify_q=("w3",))


def survival_dgp(t0: int = 3, tau: int = 5) -> DGPSpec:
    covs = (Covariate("w1", (0, 1), (0.5, 0.5)), Covariate("w2", (0, 1, 2), (0.3, 0.4, 0.3)))
    base = (-2.0, -1.8, -1.6, -1.5, -1.4, -1.3, -1.2, -1.1)
    return DGPSpec(
        kind=SURVIVAL, covariates=covs, v_columns=("w1", "w2"),
        selection=LogisticModel(0.2, {"w1": -0.7, "w2": 0.3}),
        treatment=LogisticModel(-0.1, {"w1": 0.7, "w2": -0.3}),
        event_hazard=LogisticModel(0.0, {"w1": 0.6, "w2": 0.3, "a": -0.4},
                                   time_effects=tuple(base[:tau]) if tau <= len(base)
                                   else tuple(base) + (base[-1],) * (tau - len(base))),
        censoring_hazard=LogisticModel(-2.5, {"w1": 0.4, "w2": 0.5, "a": -0.3},
                                       time_effects=(0.0,) * tau),
        t0=t0, tau=tau, misspecify_q=("w1",))


# -- generation ------------------------------------------------------------------------

def rng_for(seed) -> np.random.Generator:
    """Philox stream for an integer seed or a sequence of integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def replication_seed(seed: int, i: int) -> list[int]:
    return [int(seed), int(i)]


def _draw_covariates(spec, n, rng):
    cols = {}
    for c in spec.covariates:
        idx = rng.choice(len(c.values), size=n, p=np.asarray(c.probs))
        cols[c.name] = np.asarray(c.values)[idx]
    return cols


def _bern(p, rng):
    return (rng.random(p.shape[0]) < p).astype(float)


def _outcome(spec, frame, rng):
    if spec.outcome_family == "bernoulli":
        return _bern(spec.outcome.mean(frame), rng)
    mu = spec.outcome.mean(frame, IDENTITY)
    if spec.outcome_noise > 0:
        mu = mu + spec.outcome_noise * rng.standard_normal(mu.shape[0])
    return mu


def generate(spec: DGPSpec, n: int, seed=0, require_both_strata: bool = True) -> Dataset:
    """Draw ``n`` observed units in causal order W, S, A, then Delta/Y or T/C."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = rng_for(seed)
    fr = _draw_covariates(spec, n, rng)
    s = _bern(spec.selection.mean(fr), rng)
    a = _bern(spec.treatment.mean(fr), rng)
    fr["a"] = a
    x = np.column_stack([fr[c] for c in spec.w_columns]).astype(float)
    src = s == 1
    a_obs = np.where(src, a, np.nan)
    if spec.kind == MISSING_OUTCOME:
        delta = np.ones(n) if spec.missingness is None else _bern(spec.missingness.mean(fr), rng)
        y = _outcome(spec, fr, rng)
        w_only = [j for j, c in enumerate(spec.w_columns) if c not in spec.v_columns]
        x[np.ix_(~src, w_only)] = np.nan
        delta_obs = np.where(src, delta, np.nan)
        y_obs = np.where(src & (delta == 1), y, np.nan)
        return Dataset.from_arrays(spec.schema, s, x, a_obs, delta_obs, y_obs,
                                   require_both_strata=require_both_strata)
    t_tilde, event = _draw_times(spec, fr, n, rng)
    return Dataset.from_arrays(spec.schema, s, x, a_obs, t_tilde=np.where(src, t_tilde, np.nan),
                               event=np.where(src, event, np.nan),
                               require_both_strata=require_both_strata)


def _hazard_matrix(model, fr, n, tau):
    if model is None:
        return np.zeros((n, tau))
    grid = {k: np.repeat(np.asarray(v, float), tau) for k, v in fr.items()}
    grid["t"] = np.tile(np.arange(1, tau + 1, dtype=float), n)
    return model.mean(grid).reshape(n, tau)


def _draw_times(spec, fr, n, rng, arm=None):
    tau = spec.tau
    fr = fr if arm is None else with_arm(fr, arm)
    lam = _hazard_matrix(spec.event_hazard, fr, n, tau)
    alpha = _hazard_matrix(spec.censoring_hazard, fr, n, tau)
    ev = rng.random((n, tau)) < lam
    ce = rng.random((n, tau)) < alpha
    # within a period the event is evaluated before censoring
    ce[:, tau - 1] = False
    stop = ev | ce
    any_stop = stop.any(axis=1)
    first = np.where(any_stop, stop.argmax(axis=1), tau - 1)
    event = ev[np.arange(n), first] & any_stop
    return (first + 1).astype(float), event.astype(float)


# -- enumeration -----------------------------------------------------------------------

def support(spec: DGPSpec, cap: int = ENUMERATION_CAP) -> tuple[dict, np.ndarray]:
    """All covariate cells (as a frame) with their probabilities."""
    if spec.support_size > cap:
        raise EnumerationInfeasible(f"support has {spec.support_size} points (cap {cap})")
    cells = list(itertools.product(*[range(len(c.values)) for c in spec.covariates]))
    idx = np.asarray(cells).reshape(len(cells), len(spec.covariates))
    frame = {c.name: np.asarray(c.values)[idx[:, j]] for j, c in enumerate(spec.covariates)}
    prob = np.ones(len(cells))
    for j, c in enumerate(spec.covariates):
        prob = prob * np.asarray(c.probs)[idx[:, j]]
    return frame, prob


def _q_true(spec, frame, arm):
    fr = with_arm(frame, arm)
    if spec.kind == SURVIVAL:
        lam = _hazard_matrix(spec.event_hazard, fr, len(fr["a"]), spec.tau)
        return np.prod(1.0 - lam[:, :spec.t0], axis=1)
    if spec.outcome_family == "bernoulli":
        return spec.outcome.mean(fr)
    return spec.outcome.mean(fr, IDENTITY)


def _v_groups(spec, frame):
    keys = np.column_stack([frame[c] for c in spec.schema.v_columns])
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    return inverse.reshape(-1)


def _reduce(values, weights, groups):
    """Weighted group means of ``values`` broadcast back to the cells."""
    num = np.bincount(groups, weights * values)
    den = np.bincount(groups, weights)
    return (num / np.where(den > 0, den, 1.0))[groups]


@dataclass(frozen=True)
class TruthReport:
    psi1: float
    psi0: float
    ate: float
    psi_f: float
    psi_f_r: float
    method: str
    draws: int = 0
    mc_se: float = 0.0
    p_s1: float = math.nan

    def to_dict(self) -> dict:
        return {"psi1": self.psi1, "psi0": self.psi0, "ate": self.ate, "psi_F": self.psi_f,
                "psi_F_r": self.psi_f_r, "method": self.method, "draws": self.draws,
                "mc_se": self.mc_se, "p_s1": self.p_s1}


def true_values(spec: DGPSpec, method: str = "enumeration", draws: int = 10**6, seed: int = 0,
                cap: int = ENUMERATION_CAP) -> TruthReport:
    """Statistical estimand and its counterfactual counterparts.

    Enumeration evaluates ``sum_v P(v|S=0) E[Qbar(a,W) | v, S=1]`` exactly.
    The Monte-Carlo mode estimates the counterfactual means from simulated
    potential outcomes of target units; its ``psi1``/``psi0`` equal the
    counterfactual ones, which is what the identification result promises.
    """
    if method == "enumeration":
        frame, prob = support(spec, cap)
        s1 = spec.selection.mean(frame)
        p_s1 = float(np.sum(prob * s1))
        w_src = prob * s1
        w_tgt = prob * (1.0 - s1)
        groups = _v_groups(spec, frame)
        psi, psi_f = {}, {}
        for arm in (0, 1):
            q = _q_true(spec, frame, arm)
            q_r = _reduce(q, w_src, groups)
            psi[arm] = float(np.sum(w_tgt * q_r) / np.sum(w_tgt))
            psi_f[arm] = float(np.sum(w_tgt * q) / np.sum(w_tgt))
        f = psi_f[1] - psi_f[0]
        return TruthReport(psi[1], psi[0], psi[1] - psi[0], f, f, "enumeration", 0, 0.0, p_s1)
    if method != "monte-carlo":
        raise ValidationError("method must be enumeration or monte-carlo")
    rng = rng_for(seed)
    fr = _draw_covariates(spec, draws, rng)
    s = _bern(spec.selection.mean(fr), rng)
    tgt = s == 0
    pot = {}
    for arm in (0, 1):
        fa = with_arm(fr, arm)
        if spec.kind == SURVIVAL:
            # T exceeds t0 when no event occurred by t0; censoring is irrelevant here
            pot[arm] = _uncensored_survival(spec, fa, draws, rng)
        else:
            pot[arm] = _outcome(spec, fa, rng)
    diff = pot[1][tgt] - pot[0][tgt]
    m = int(np.sum(tgt))
    psi1, psi0 = float(np.mean(pot[1][tgt])), float(np.mean(pot[0][tgt]))
    ate = float(np.mean(diff))
    # psi_F_r averages the CATE over target covariates
    cate = _q_true(spec, fr, 1)[tgt] - _q_true(spec, fr, 0)[tgt]
    return TruthReport(psi1, psi0, ate, ate, float(np.mean(cate)), "monte-carlo", draws,
                       float(np.std(diff, ddof=1) / math.sqrt(m)), float(np.mean(s)))


def _uncensored_survival(spec, fr, n, rng):
    lam = _hazard_matrix(spec.event_hazard, fr, n, spec.tau)
    ev = rng.random((n, spec.tau)) < lam
    return (~ev[:, :spec.t0].any(axis=1)).astype(float)


# -- true nuisances and misspecification ----------------------------------------------

def _selection_fit(spec, columns):
    """P(S=1 | columns) as a fit: logistic if the model uses only these columns,
    otherwise a saturated cell fit obtained by enumeration."""
    if set(spec.selection.columns) <= set(columns):
        return spec.selection.as_fit()
    frame, prob = support(spec)
    s1 = spec.selection.mean(frame)
    keys = np.column_stack([frame[c] for c in columns])
    cells, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    p = np.bincount(inverse, prob * s1) / np.bincount(inverse, prob)
    design = DesignSpec(tuple(columns), saturated=True, link=LOGIT)
    coef = np.log(p / (1.0 - p))
    return RegressionFit(coef, LOGIT, design, {"cells": [tuple(map(float, c)) for c in cells]})


def reduced_regression_fits(spec: DGPSpec, q_fits: Mapping[int, RegressionFit],
                            bounds=(0.0, 1.0), outcome_bound: float = 0.0
                            ) -> dict[int, RegressionFit]:
    """``E_0[Qbar(a, W) | V, S=1]`` for a given outcome regression, by enumeration.

    Returned as saturated identity-link fits on V.
    """
    frame, prob = support(spec)
    w_src = prob * spec.selection.mean(frame)
    keys = np.column_stack([frame[c] for c in spec.v_columns])
    cells, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    design = DesignSpec(spec.v_columns, saturated=True, link=IDENTITY)
    levels = {"cells": [tuple(map(float, c)) for c in cells]}
    out = {}
    lo, hi = bounds
    for arm in (0, 1):
        q = q_fits[arm].predict(with_arm(frame, arm))
        q = np.clip(q, lo + outcome_bound * (hi - lo), hi - outcome_bound * (hi - lo))
        coef = np.bincount(inverse, w_src * q) / np.bincount(inverse, w_src)
        out[arm] = RegressionFit(coef, IDENTITY, design, levels)
    return out


def reduced_truth_values(spec: DGPSpec, fits: NuisanceFits) -> dict[int, float]:
    """``Psi_a(P) = E_0[Qr_P(a, V) | S=0]``: the plug-in of ``fits`` under the
    true target law of V."""
    frame, prob = support(spec)
    w_tgt = prob * (1.0 - spec.selection.mean(frame))
    out = {}
    for arm in (0, 1):
        if spec.schema.v_equals_w:
            q_r = fits.q(frame, arm)
        else:
            q_r = fits.q_bar_r[arm].predict(frame)
        out[arm] = float(np.sum(w_tgt * q_r) / np.sum(w_tgt))
    return out


def true_designs(spec: DGPSpec) -> dict[str, DesignSpec]:
    """Correctly specified nuisance designs for ``spec``."""
    w = spec.w_columns
    if spec.kind == SURVIVAL:
        hz = DesignSpec(("t", *w, "a"), categorical=("t",))
        return {"lambda": hz, "alpha": hz, "g_a": DesignSpec(w), "r": DesignSpec(w)}
    q = spec.outcome
    link = LOGIT if spec.outcome_family == "bernoulli" else IDENTITY
    q_design = DesignSpec((*w, "a"), interactions=tuple((a, b) for a, b, _ in q.interactions),
                          link=link)
    v = spec.v_columns
    return {"g_a": DesignSpec(w), "p_delta": DesignSpec((*w, "a")),
            "p_s_given_v": DesignSpec(v, saturated=not set(spec.selection.columns) <= set(v)),
            "p_s_given_w": DesignSpec(w), "q_bar": q_design,
            "q_bar_r": DesignSpec(v, saturated=True, link=IDENTITY)}


def true_fits(spec: DGPSpec) -> dict[str, RegressionFit]:
    """True nuisance functions as fits (for passthrough injection)."""
    if spec.kind == SURVIVAL:
        out = {"lambda": spec.event_hazard.as_fit(), "g_a": spec.treatment.as_fit(),
               "r": _selection_fit(spec, spec.w_columns)}
        if spec.censoring_hazard is not None:
            out["alpha"] = spec.censoring_hazard.as_fit()
        return out
    link = LOGIT if spec.outcome_family == "bernoulli" else IDENTITY
    q = spec.outcome.as_fit(link)
    out = {"g_a": spec.treatment.as_fit(), "q_bar": q,
           "p_s_given_v": _selection_fit(spec, spec.v_columns),
           "p_s_given_w": _selection_fit(spec, spec.w_columns)}
    out["p_delta"] = (spec.missingness.as_fit() if spec.missingness is not None
                      else LogisticModel(40.0).as_fit())
    r = reduced_regression_fits(spec, {0: q, 1: q})
    out["q_bar_r_0"], out["q_bar_r_1"] = r[0], r[1]
    return out


def _wrong_fit(fit: RegressionFit, drop: Sequence[str]) -> RegressionFit:
    """Zero the coefficients of the dropped main effects and their interactions."""
    names = fit.design.matrix(_dummy_frame(fit.design), fit.levels)[1]
    coef = fit.coefficients.copy()
    for j, name in enumerate(names):
        parts = name.split(":")
        if any(p in drop for p in parts):
            coef[j] = 0.0
    return replace(fit, coefficients=coef)


def _dummy_frame(design):
    return {c: np.zeros(1) + (1.0 if c == "t" else 0.0) for c in design.columns}


def misspecify(spec: DGPSpec, scenario: str, mode: str = "design",
               base: NuisanceConfig | None = None) -> NuisanceConfig:
    """Nuisance configuration for one double-robustness scenario.

    ``scenario`` is one of ``both``, ``q_only`` (outcome block correct),
    ``g_only`` (treatment/missingness/selection/censoring block correct) or
    ``neither``. In ``design`` mode correct nuisances get the true design and
    wrong ones lose covariates: the outcome/hazard model drops
    ``spec.misspecify_q`` and every G-block model keeps its intercept only
    (and, for the censoring hazard, the period indicators). In ``truth`` mode
    correct nuisances are the true functions and wrong ones are the true
    functions with those coefficients set to zero.
    """
    if scenario not in SCENARIOS:
        raise ValidationError(f"scenario must be one of {SCENARIOS}")
    if mode not in ("design", "truth"):
        raise ValidationError("mode must be design or truth")
    base = base or NuisanceConfig()
    q_ok = scenario in ("both", "q_only")
    g_ok = scenario in ("both", "g_only")
    designs = true_designs(spec)
    if spec.kind == SURVIVAL:
        q_keys, g_keys = ("lambda",), ("g_a", "alpha", "r")
    else:
        q_keys, g_keys = ("q_bar",), ("g_a", "p_delta", "p_s_given_v", "p_s_given_w")
    if mode == "design":
        for k in q_keys:
            if not q_ok:
                designs[k] = designs[k].drop(spec.misspecify_q)
        for k in g_keys:
            if not g_ok:
                d = designs[k]
                designs[k] = d.drop([c for c in d.columns if c != "t"])
        return replace(base, designs=designs, fixed={})
    fits = true_fits(spec)
    if not q_ok:
        for k in q_keys:
            fits[k] = _wrong_fit(fits[k], spec.misspecify_q)
        if spec.kind == MISSING_OUTCOME:
            r = reduced_regression_fits(spec, {0: fits["q_bar"], 1: fits["q_bar"]})
            fits["q_bar_r_0"], fits["q_bar_r_1"] = r[0], r[1]
    if not g_ok:
        for k in g_keys:
            if k in fits:
                f = fits[k]
                fits[k] = _wrong_fit(f, [c for c in f.design.columns if c != "t"])
    return replace(base, designs=designs, fixed=fits)


def true_nuisance_fits(spec: DGPSpec, scenario: str = "both", truncation: float = 0.005,
                       outcome_bound: float = 1e-5, marginal_odds: bool = True):
    """Population-level :class:`NuisanceFits` (or ``HazardFits``) for a scenario.

    Uses the true P(S=1) rather than an empirical proportion.
    """
    from .nuisance import HazardFits

    cfg = misspecify(spec, scenario, "truth")
    f = cfg.fixed
    p_s1 = true_values(spec).p_s1
    if spec.kind == SURVIVAL:
        return HazardFits(f["lambda"], f.get("alpha"), f["g_a"], f["r"], p_s1, spec.tau,
                          truncation, marginal_odds)
    bounds = (0.0, 1.0)
    return NuisanceFits(f["g_a"], f["p_delta"], f["p_s_given_v"],
                        {0: f["q_bar"], 1: f["q_bar"]}, p_s1, truncation, outcome_bound,
                        marginal_odds, bounds, f["p_s_given_w"],
                        {0: f["q_bar_r_0"], 1: f["q_bar_r_1"]})
