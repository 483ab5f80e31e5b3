"""Result containers shared by both estimators."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

Z_975 = 1.96


@dataclass
class FluctuationResult:
    epsilon: float
    iterations: int
    eic_residual_before: float
    eic_residual_after: float
    method: str
    converged: bool = True


@dataclass
class EstimateReport:
    """Point estimates, Wald inference and targeting diagnostics."""

    estimand: str
    variant: str
    targeting: str
    psi1: float
    psi0: float
    ate: float
    sigma_n: float
    ci_lo: float
    ci_hi: float
    n: int
    n_source: int
    n_target: int
    eic_mean: float
    sigma_psi1: float = math.nan
    sigma_psi0: float = math.nan
    fluctuations: dict[str, FluctuationResult] = field(default_factory=dict)
    positivity_warnings: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self) -> float:
        return self.sigma_n / math.sqrt(self.n)

    @property
    def score_tolerance(self) -> float:
        return score_tolerance(self.sigma_n, self.n)

    def covers(self, value: float) -> bool:
        return self.ci_lo <= value <= self.ci_hi

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")


def score_tolerance(sigma_n: float, n: int, floor: float = 1e-8) -> float:
    """``max(floor, sigma_n / (sqrt(n) log n))``."""
    if n < 2:
        return floor
    return max(floor, sigma_n / (math.sqrt(n) * math.log(n)))


def wald(ate: float, total_eic: np.ndarray) -> tuple[float, float, float]:
    """(sigma_n, lo, hi) from the sample sd of the per-unit gradient."""
    n = total_eic.shape[0]
    sigma = float(np.std(total_eic, ddof=1)) if n > 1 else 0.0
    half = Z_975 * sigma / math.sqrt(n)
    return sigma, ate - half, ate + half


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj
