"""Less aggressive TMLE (density ratio fixed at one) and its split workflow.

With ``R = 1`` the targeted outcome regression (or hazard) does not depend
on the target covariate law, so a source site can fit and target it alone,
then ship the targeted model together with its per-unit gradient
contributions. The target site averages the model over its own covariates
and pools its local gradient contributions with the shipped ones.

Bundle layout (format version 1)::

    {"format_version": 1, "model_kind": "outcome-regression" | "hazard",
     "schema": {...column names, kind, t0, tau...},
     "model": {...coefficients, designs, fluctuation epsilons, bounds...},
     "n_source": int, "p_s1": float,
     "eic_contributions": [n_source floats],
     "eic_contributions_arm": {"1": [...], "0": [...]},
     "fluctuations": {...}}

No field holds covariate, treatment or outcome values.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .config import RunConfig
from .data import MISSING_OUTCOME, SURVIVAL, Dataset, Schema
from .eic import outcome_weight, reduced_weight
from .errors import SchemaMismatch, ValidationError
from .glm import RegressionFit
from .nuisance import HazardFits, NuisanceFits
from .report import EstimateReport, FluctuationResult, wald

FORMAT_VERSION = 1
OUTCOME_MODEL = "outcome-regression"
HAZARD_MODEL = "hazard"
BUNDLE_KEYS = frozenset({"format_version", "model_kind", "schema", "model", "n_source", "p_s1",
                         "eic_contributions", "eic_contributions_arm", "fluctuations"})
ARMS = (1, 0)


@dataclass(frozen=True, eq=False)
class TargetedModelExport:
    """Targeted model plus source-side gradient contributions."""

    model_kind: str
    schema: Schema
    model: Mapping
    n_source: int
    p_s1: float
    eic_contributions: np.ndarray
    eic_contributions_arm: Mapping[int, np.ndarray] = field(default_factory=dict)
    fluctuations: Mapping = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.model_kind not in (OUTCOME_MODEL, HAZARD_MODEL):
            raise ValidationError(f"unknown model kind {self.model_kind!r}")
        if len(self.eic_contributions) != self.n_source:
            raise ValidationError("eic_contributions must have one entry per source unit")
        for v in self.eic_contributions_arm.values():
            if len(v) != self.n_source:
                raise ValidationError("per-arm contributions must have n_source entries")

    @property
    def required_columns(self) -> tuple[str, ...]:
        if self.model_kind == HAZARD_MODEL or self.schema.v_equals_w:
            return self.schema.w_columns
        return self.schema.v_columns

    def to_dict(self) -> dict:
        return {"format_version": self.format_version, "model_kind": self.model_kind,
                "schema": self.schema.to_dict(), "model": self.model,
                "n_source": int(self.n_source), "p_s1": float(self.p_s1),
                "eic_contributions": [float(v) for v in self.eic_contributions],
                "eic_contributions_arm": {str(k): [float(u) for u in v]
                                          for k, v in self.eic_contributions_arm.items()},
                "fluctuations": self.fluctuations}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TargetedModelExport":
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise ValidationError(f"unsupported bundle format version {version!r}")
        extra = set(doc) - BUNDLE_KEYS
        if extra:
            raise ValidationError(f"unknown bundle fields {sorted(extra)}")
        return cls(doc["model_kind"], Schema.from_dict(doc["schema"]), doc["model"],
                   int(doc["n_source"]), float(doc["p_s1"]),
                   np.asarray(doc["eic_contributions"], float),
                   {int(k): np.asarray(v, float)
                    for k, v in doc.get("eic_contributions_arm", {}).items()},
                   doc.get("fluctuations", {}), version)

    @classmethod
    def from_json(cls, text: str) -> "TargetedModelExport":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "TargetedModelExport":
        with open(path) as fh:
            return cls.from_json(fh.read())


# -- source side -----------------------------------------------------------------------

def _fluct_dict(report):
    return {k: {"epsilon": v.epsilon, "iterations": v.iterations,
                "eic_residual_before": v.eic_residual_before,
                "eic_residual_after": v.eic_residual_after, "method": v.method,
                "converged": v.converged} for k, v in report.fluctuations.items()}


def _outcome_model(result, v_equals_w: bool) -> dict:
    fits: NuisanceFits = result.fits
    cfg = result.config
    if not v_equals_w:
        return {"v_equals_w": False, "targeting": cfg.targeting,
                "reduced": {str(a): result.reduced[a].fit.to_dict() for a in ARMS},
                "epsilon_reduced": {str(a): result.reduced[a].epsilon for a in ARMS}}
    passes = result.extras["epsilon_passes"]
    return {"v_equals_w": True,
            "q_bar": {str(a): fits.q_bar[a].to_dict() for a in ARMS},
            "g_a": fits.g_a.to_dict(), "p_delta": fits.p_delta.to_dict(),
            "epsilon_passes": [p if isinstance(p, float) else {str(k): v for k, v in p.items()}
                               for p in passes],
            "fluctuation": cfg.fluctuation, "targeting": cfg.targeting,
            "y_bounds": list(fits.y_bounds), "truncation": fits.truncation,
            "outcome_bound": fits.outcome_bound}


def _hazard_model(result) -> dict:
    t = result.targeted
    return {"fits": result.fits.to_dict(), "epsilons": t.epsilons, "targeting": t.targeting,
            "fluctuation": t.fluctuation, "t0": int(result.report.diagnostics["t0"])}


def fit_less_aggressive(ds: Dataset, config: RunConfig | None = None, fits=None):
    """Less aggressive TMLE plus its export bundle.

    Returns ``(report, export)``. ``report`` is ``None`` when ``ds`` holds
    source units only; the bundle then carries ``p_s1 = 1`` and the target
    side rescales the contributions with its own proportion.
    """
    from .survival import fit_survival_tmle, survival_from_fits
    from .tmle import fit_tmle, tmle_from_fits

    config = (config or RunConfig(estimand=ds.kind)).less_aggressive()
    source_only = ds.n_target == 0
    with warnings.catch_warnings(), np.errstate(divide="ignore", invalid="ignore"):
        if source_only:
            warnings.simplefilter("ignore")
        if ds.kind == SURVIVAL:
            res = (survival_from_fits(ds, fits, config) if fits is not None
                   else fit_survival_tmle(ds, config))
            kind, model = HAZARD_MODEL, _hazard_model(res)
            contrib_arm = {a: res.eic_arm[a].d_lambda for a in ARMS}
            contrib = res.eic.d_lambda
        else:
            res = tmle_from_fits(ds, fits, config) if fits is not None else fit_tmle(ds, config)
            kind, model = OUTCOME_MODEL, _outcome_model(res, ds.schema.v_equals_w)
            contrib_arm = {a: res.eic_arm[a].source_part() for a in ARMS}
            contrib = res.eic.source_part()
    src = ds.s == 1
    export = TargetedModelExport(kind, ds.schema, model, ds.n_source, res.fits.p_s1,
                                 contrib[src], {a: contrib_arm[a][src] for a in ARMS},
                                 _fluct_dict(res.report))
    return (None if source_only else res.report), export


# -- target side -----------------------------------------------------------------------

def _target_frame(target, export: TargetedModelExport) -> dict[str, np.ndarray]:
    if isinstance(target, Dataset):
        if np.any(target.s != 0):
            target = target.subset(target.s == 0)
        frame = target.frame()
    else:
        frame = {k: np.asarray(v, float) for k, v in target.items()}
    missing = [c for c in export.required_columns if c not in frame]
    if missing:
        raise SchemaMismatch(f"target data lacks model columns {missing}")
    n = len(frame[export.required_columns[0]]) if export.required_columns else 0
    if n == 0:
        raise ValidationError("target data has no rows")
    for c in export.required_columns:
        if np.any(np.isnan(frame[c])):
            raise SchemaMismatch(f"target column {c!r} has empty cells")
    return frame


def _predict_outcome(model: Mapping, frame, p_s1: float) -> dict[int, np.ndarray]:
    from .tmle import targeted_prediction

    if not model["v_equals_w"]:
        dummy = NuisanceFits(None, None, None, {}, p_s1, unit_ratio=True)
        h = reduced_weight(frame, dummy)
        return {a: RegressionFit.from_dict(model["reduced"][str(a)]).predict(frame)
                + model["epsilon_reduced"][str(a)] * h for a in ARMS}
    rf = RegressionFit.from_dict
    fits = NuisanceFits(rf(model["g_a"]), rf(model["p_delta"]), None,
                        {a: rf(model["q_bar"][str(a)]) for a in ARMS}, p_s1,
                        float(model["truncation"]), float(model["outcome_bound"]), True,
                        tuple(model["y_bounds"]), unit_ratio=True)
    out = {}
    for a in ARMS:
        q = fits.q(frame, a)
        w = outcome_weight(frame, fits, a)
        for eps in model["epsilon_passes"]:
            e = eps if not isinstance(eps, Mapping) else eps[str(a)]
            q = targeted_prediction(q, w, float(e), a, model["fluctuation"], model["targeting"],
                                    fits.y_bounds)
        out[a] = q
    return out


def _predict_survival(model: Mapping, frame) -> dict[int, np.ndarray]:
    from scipy.special import expit

    from .survival import curves_for, replay_targeting

    fits = HazardFits.from_dict(model["fits"])
    t0 = int(model["t0"])
    logit_hazard = replay_targeting(fits, frame, model["epsilons"], t0, model["targeting"],
                                    model["fluctuation"])
    return {a: curves_for(fits, frame, a, expit(logit_hazard[a])).at(t0) for a in ARMS}


def apply_export(target, export: TargetedModelExport) -> EstimateReport:
    """Plug-in over target covariates and pooled-gradient Wald inference.

    ``target`` is a Dataset (only its S=0 rows are used) or a column mapping.
    Source contributions are rescaled from the bundle's P(S=1) to
    ``n_source / (n_source + n_target)``.
    """
    frame = _target_frame(target, export)
    n_t = len(frame[export.required_columns[0]])
    n = export.n_source + n_t
    p_s1 = export.n_source / n
    if export.model_kind == HAZARD_MODEL:
        pred = _predict_survival(export.model, frame)
        estimand = SURVIVAL
    else:
        pred = _predict_outcome(export.model, frame, export.p_s1)
        estimand = MISSING_OUTCOME
    psi = {a: float(np.mean(pred[a])) for a in ARMS}
    scale = export.p_s1 / p_s1
    p_s0 = 1.0 - p_s1

    def pooled(source, arm=None):
        if arm is None:
            local = ((pred[1] - psi[1]) - (pred[0] - psi[0])) / p_s0
        else:
            local = (pred[arm] - psi[arm]) / p_s0
        return np.concatenate([np.asarray(source) * scale, local])

    total = pooled(export.eic_contributions)
    ate = psi[1] - psi[0]
    sigma, lo, hi = wald(ate, total)
    arm_sd = {a: (float(np.std(pooled(export.eic_contributions_arm[a], a), ddof=1))
                  if a in export.eic_contributions_arm else math.nan) for a in ARMS}
    fl = {k: FluctuationResult(**v) for k, v in export.fluctuations.items()}
    return EstimateReport(
        estimand=estimand, variant="less-aggressive",
        targeting=export.model.get("targeting", "separate"), psi1=psi[1], psi0=psi[0],
        ate=ate, sigma_n=sigma, ci_lo=lo, ci_hi=hi, n=n, n_source=export.n_source,
        n_target=n_t, eic_mean=abs(float(np.mean(total))), sigma_psi1=arm_sd[1],
        sigma_psi0=arm_sd[0], fluctuations=fl, positivity_warnings=0,
        diagnostics={"split_workflow": True, "p_s1_bundle": export.p_s1,
                     "p_s1_local": p_s1})


def read_target_csv(path, export: TargetedModelExport) -> dict[str, np.ndarray]:
    """Covariate columns of a target-site file.

    Only the model's columns are read and, when an ``s`` column is present,
    only rows with ``s`` = 0, mirroring :func:`apply_export` on a Dataset.
    """
    import csv

    from .data import _parse

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValidationError(f"{path}: empty file")
        missing = [c for c in export.required_columns if c not in reader.fieldnames]
        if missing:
            raise SchemaMismatch(f"{path}: missing model columns {missing}")
        rows = list(reader)
    if "s" in reader.fieldnames:
        rows = [r for r in rows if _parse(r["s"]) == 0]
    return {c: np.array([_parse(r[c]) for r in rows], float) for c in export.required_columns}
