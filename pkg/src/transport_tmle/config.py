"""Run configuration shared by the estimators and the command line."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping

from .data import MISSING_OUTCOME, SURVIVAL
from .errors import ValidationError
from .nuisance import NuisanceConfig

FLUCTUATIONS = ("covariate", "weight", "linear")
MISSING_TARGETING = ("separate", "joint")
SURVIVAL_TARGETING = ("separate", "simultaneous", "difference")


@dataclass(frozen=True)
class RunConfig:
    """Everything an estimation run needs beyond the data.

    ``unit_ratio`` forces the density ratio R to 1 in every clever covariate
    and weight (the less aggressive TMLE). ``score_floor`` is the absolute
    floor of the score tolerance ``max(score_floor, sigma_n/(sqrt(n) log n))``.
    """

    estimand: str = MISSING_OUTCOME
    nuisance: NuisanceConfig = field(default_factory=NuisanceConfig)
    fluctuation: str = "covariate"
    targeting: str = "separate"
    unit_ratio: bool = False
    score_floor: float = 1e-8
    max_iterations: int | None = None
    t0: int | None = None
    tau: int | None = None
    seed: int = 0
    replications: int = 1

    def __post_init__(self):
        if self.estimand not in (MISSING_OUTCOME, SURVIVAL):
            raise ValidationError(f"unknown estimand {self.estimand!r}")
        if self.fluctuation not in FLUCTUATIONS:
            raise ValidationError(f"fluctuation must be one of {FLUCTUATIONS}")
        allowed = SURVIVAL_TARGETING if self.estimand == SURVIVAL else MISSING_TARGETING
        if self.targeting not in allowed:
            raise ValidationError(f"targeting must be one of {allowed} for {self.estimand}")
        if self.estimand == SURVIVAL and self.fluctuation == "linear":
            raise ValidationError("hazards are fluctuated on the logit scale only")
        if self.score_floor <= 0:
            raise ValidationError("score_floor must be > 0")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")

    @property
    def iteration_cap(self) -> int:
        if self.max_iterations is not None:
            return self.max_iterations
        return 25 if self.estimand == SURVIVAL else 10

    def less_aggressive(self) -> "RunConfig":
        return replace(self, unit_ratio=True)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RunConfig":
        known = {"estimand", "fluctuation", "targeting", "unit_ratio", "score_floor",
                 "max_iterations", "t0", "tau", "seed", "replications", "designs", "fixed",
                 "truncation", "outcome_bound", "q_bar_by_arm",
                 "density_ratio_includes_marginal_odds", "y_bounds", "v_columns",
                 "w_columns"}
        extra = set(doc) - known
        if extra:
            raise ValidationError(f"unknown config keys {sorted(extra)}")
        estimand = doc.get("estimand")
        if estimand is None:
            estimand = SURVIVAL if doc.get("tau") is not None else MISSING_OUTCOME
        return cls(estimand=estimand, nuisance=NuisanceConfig.from_dict(doc),
                   fluctuation=doc.get("fluctuation", "covariate"),
                   targeting=doc.get("targeting", "separate"),
                   unit_ratio=bool(doc.get("unit_ratio", False)),
                   score_floor=float(doc.get("score_floor", 1e-8)),
                   max_iterations=doc.get("max_iterations"), t0=doc.get("t0"),
                   tau=doc.get("tau"), seed=int(doc.get("seed", 0)),
                   replications=int(doc.get("replications", 1)))

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
