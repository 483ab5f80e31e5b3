"""Replication harness for bias, variance and coverage studies.

Each replication draws one dataset, then for every scenario fits the
nuisances once and runs the full and the less aggressive TMLE on those
same fits. Replication ``i`` uses seed ``[seed, i]`` so results do not
depend on how replications are spread over worker processes.
"""
from __future__ import annotations

import csv
import io
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .config import RunConfig
from .data import SURVIVAL, person_time_expand
from .dgp import SCENARIOS, DGPSpec, generate, misspecify, true_values
from .errors import TransportError
from .nuisance import fit_hazards, fit_nuisances
from .report import score_tolerance

VARIANTS = ("full", "less-aggressive")


@dataclass(frozen=True)
class Replicate:
    replication: int
    scenario: str
    variant: str
    psi1: float
    psi0: float
    ate: float
    se: float
    ci_lo: float
    ci_hi: float
    covers: bool
    eic_mean: float
    tolerance: float
    failed: bool = False


@dataclass(frozen=True)
class Summary:
    scenario: str
    variant: str
    replications: int
    truth: float
    bias: float
    mc_se: float
    sd: float
    mean_se: float
    coverage: float
    mean_abs_eic: float
    score_solved: int
    failures: int

    @property
    def bias_in_mc_se(self) -> float:
        return abs(self.bias) / self.mc_se if self.mc_se > 0 else math.inf


@dataclass
class StudyResult:
    spec: DGPSpec
    n: int
    truth: dict
    replicates: list[Replicate]
    summaries: list[Summary]
    seconds: float

    def summary(self, scenario: str, variant: str = "full") -> Summary:
        for s in self.summaries:
            if s.scenario == scenario and s.variant == variant:
                return s
        raise KeyError((scenario, variant))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        fields = list(Summary.__dataclass_fields__)
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(fields)
        for s in self.summaries:
            wr.writerow([_fmt(getattr(s, f)) for f in fields])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def replicates_csv(self, path) -> None:
        fields = list(Replicate.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(fields)
            for r in self.replicates:
                wr.writerow([_fmt(getattr(r, f)) for f in fields])

    def table(self) -> str:
        head = (f"{'scenario':<9} {'variant':<16} {'bias':>9} {'mc_se':>8} {'sd':>8} "
                f"{'mean_se':>8} {'coverage':>8} {'|PnD*|':>9} {'solved':>7}")
        lines = [f"n={self.n}  truth ate={self.truth['ate']:.6f}", head, "-" * len(head)]
        for s in self.summaries:
            lines.append(f"{s.scenario:<9} {s.variant:<16} {s.bias:>9.5f} {s.mc_se:>8.5f} "
                         f"{s.sd:>8.5f} {s.mean_se:>8.5f} {s.coverage:>8.3f} "
                         f"{s.mean_abs_eic:>9.2e} {s.score_solved:>4}/{s.replications}")
        return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _one(args) -> list[Replicate]:
    spec, n, seed, i, scenarios, variants, base = args
    from .survival import survival_from_fits
    from .tmle import tmle_from_fits

    ds = generate(spec, n, [seed, i])
    out = []
    for sc in scenarios:
        cfg = replace(base, nuisance=misspecify(spec, sc, base=base.nuisance))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                if spec.kind == SURVIVAL:
                    fits = fit_hazards(person_time_expand(ds), cfg.nuisance)
                    runner = survival_from_fits
                else:
                    fits = fit_nuisances(ds, cfg.nuisance)
                    runner = tmle_from_fits
                reports = {v: runner(ds, fits, replace(cfg, unit_ratio=(v != "full"))).report
                           for v in variants}
        except (TransportError, ValueError, np.linalg.LinAlgError):
            for v in variants:
                out.append(Replicate(i, sc, v, *([math.nan] * 6), False, math.nan, math.nan,
                                     True))
            continue
        for v, r in reports.items():
            out.append(Replicate(i, sc, v, r.psi1, r.psi0, r.ate, r.se, r.ci_lo, r.ci_hi,
                                 r.covers(truth_cache(spec)), r.eic_mean,
                                 score_tolerance(r.sigma_n, r.n, base.score_floor)))
    return out


_TRUTH: dict = {}


def truth_cache(spec: DGPSpec) -> float:
    key = spec.to_json()
    if key not in _TRUTH:
        _TRUTH[key] = true_values(spec).ate
    return _TRUTH[key]


def summarize(replicates, truth: float, scenarios, variants) -> list[Summary]:
    out = []
    for sc in scenarios:
        for v in variants:
            rs = [r for r in replicates if r.scenario == sc and r.variant == v]
            ok = [r for r in rs if not r.failed]
            est = np.array([r.ate for r in ok])
            m = len(ok)
            sd = float(np.std(est, ddof=1)) if m > 1 else math.nan
            out.append(Summary(
                sc, v, m, truth, float(np.mean(est)) - truth if m else math.nan,
                sd / math.sqrt(m) if m > 1 else math.nan, sd,
                float(np.mean([r.se for r in ok])) if m else math.nan,
                float(np.mean([r.covers for r in ok])) if m else math.nan,
                float(np.mean([r.eic_mean for r in ok])) if m else math.nan,
                int(sum(r.eic_mean <= r.tolerance for r in ok)), len(rs) - m))
    return out


def run_study(spec: DGPSpec, n: int = 2000, replications: int = 100, seed: int = 0,
              scenarios=SCENARIOS, variants=VARIANTS, config: RunConfig | None = None,
              jobs: int = 1) -> StudyResult:
    """Replicate generate -> estimate across scenarios and both TMLE variants."""
    t_start = time.perf_counter()
    base = config or RunConfig(estimand=spec.kind)
    scenarios, variants = tuple(scenarios), tuple(variants)
    truth = true_values(spec)
    tasks = [(spec, n, seed, i, scenarios, variants, base) for i in range(replications)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_one, tasks, chunksize=max(1, replications // (4 * jobs))))
    else:
        chunks = [_one(t) for t in tasks]
    reps = [r for chunk in chunks for r in chunk]
    return StudyResult(spec, n, asdict(truth) | {"ate": truth.ate}, reps,
                       summarize(reps, truth.ate, scenarios, variants),
                       time.perf_counter() - t_start)
