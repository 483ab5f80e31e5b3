import math
from dataclasses import replace

import numpy as np
import pytest
from oracles import (induced_missing_dataset, npmle_survival, plain_survival_tmle_step,
                     saturated_survival_designs)

from transport_tmle.config import RunConfig
from transport_tmle.data import SURVIVAL, Dataset, Schema, person_time_expand
from transport_tmle.dgp import LogisticModel, generate, survival_dgp, true_nuisance_fits
from transport_tmle.errors import ValidationError
from transport_tmle.nuisance import NuisanceConfig, fit_hazards
from transport_tmle.survival import (SurvivalCurves, clever_covariate_h, estimate_survival,
                                     exact_remainder_mc, fit_survival_tmle, ipctw_estimate,
                                     replay_targeting, survival_eic, target_hazard)
from transport_tmle.tmle import fit_tmle

SURV = RunConfig(estimand=SURVIVAL)
TARGETING = [(t, f) for t in ("separate", "simultaneous", "difference")
             for f in ("covariate", "weight")]


def curves(lam, alpha=None):
    lam = np.atleast_2d(np.asarray(lam, float))
    alpha = np.zeros_like(lam) if alpha is None else np.atleast_2d(np.asarray(alpha, float))
    return SurvivalCurves(lam, alpha)


def test_clever_covariate_beyond_horizon_is_zero():
    h = clever_covariate_h(curves([0.2, 0.3, 0.4]), np.array([0.5]), t0=2, treated=[1])
    assert h[0, 2] == 0.0


def test_clever_covariate_at_horizon():
    h = clever_covariate_h(curves([0.2, 0.3, 0.4]), np.array([0.5]), t0=2, treated=[1])
    assert h[0, 1] == pytest.approx(-2.0, abs=1e-14)


def test_clever_covariate_survival_ratio():
    g = 0.4
    h = clever_covariate_h(curves([0.5, 0.5, 0.5]), np.array([g]), t0=2, treated=[1])
    assert h[0, 0] == pytest.approx(-1.0 / (g * 1.0) * (0.25 / 0.5), abs=1e-14)
    untreated = clever_covariate_h(curves([0.5, 0.5, 0.5]), np.array([g]), t0=2, treated=[0])
    assert np.all(untreated == 0.0)


def test_clever_covariate_censoring_factor():
    h = clever_covariate_h(curves([0.1, 0.1], [0.2, 0.2]), np.array([1.0]), t0=2)
    # Gbar(1-) = 1, Gbar(2-) = 0.8
    np.testing.assert_allclose(h[0], [-0.9, -1 / 0.8], atol=1e-14)


def test_ratio_stays_finite_for_tiny_survival():
    c = curves([1 - 1e-12, 0.5, 0.5])
    assert np.all(np.isfinite(c.ratio(3)))
    assert c.ratio(3)[0, 0] == pytest.approx(0.25)


def test_target_unit_gradient(surv_ds):
    fits = fit_hazards(person_time_expand(surv_ds))
    d = survival_eic(surv_ds, fits, 1, 0.5)
    tgt = surv_ds.s == 0
    s_t0 = np.prod(1 - fits.hazard(surv_ds.frame(), 1)[:, :surv_ds.t0], axis=1)
    np.testing.assert_allclose(d.d_w[tgt], (s_t0[tgt] - 0.5) / (1 - fits.p_s1), rtol=1e-12)
    assert np.all(d.d_lambda[tgt] == 0.0)
    assert np.all(d.d_w[~tgt] == 0.0)


@pytest.mark.parametrize("targeting, fluctuation", TARGETING)
def test_saturated_fit_equals_cellwise_kaplan_meier(surv_spec, targeting, fluctuation):
    ds = generate(surv_spec, 2000, 2)
    cfg = replace(SURV, nuisance=NuisanceConfig(designs=saturated_survival_designs(ds)),
                  targeting=targeting, fluctuation=fluctuation)
    rep = estimate_survival(ds, cfg)
    assert rep.psi1 == pytest.approx(npmle_survival(ds, 1, ds.t0), abs=1e-6)
    assert rep.psi0 == pytest.approx(npmle_survival(ds, 0, ds.t0), abs=1e-6)


@pytest.mark.parametrize("targeting, fluctuation", TARGETING)
def test_score_is_solved(surv_ds, targeting, fluctuation):
    rep = estimate_survival(surv_ds, replace(SURV, targeting=targeting, fluctuation=fluctuation))
    assert rep.eic_mean <= max(1e-8, rep.sigma_n / (math.sqrt(rep.n) * math.log(rep.n)))


def test_score_trace_does_not_increase(surv_spec):
    for seed in range(5):
        ds = generate(surv_spec, 2000, 100 + seed)
        fits = fit_hazards(person_time_expand(ds))
        t = target_hazard(ds, fits, "separate", "covariate", ds.t0, 25)
        assert t.converged
        assert all(b <= a + 1e-12 for a, b in zip(t.score_trace, t.score_trace[1:]))


def test_difference_mode_shares_epsilon(surv_ds):
    fits = fit_hazards(person_time_expand(surv_ds))
    t = target_hazard(surv_ds, fits, "difference")
    for step in t.epsilons:
        assert step["1"] == step["0"]


def test_replay_reproduces_targeted_hazards(surv_ds):
    res = fit_survival_tmle(surv_ds)
    again = replay_targeting(res.fits, surv_ds.frame(), res.targeted.epsilons, surv_ds.t0,
                             "separate", "covariate")
    for arm in (0, 1):
        np.testing.assert_allclose(again[arm], res.targeted.logit_hazard[arm], atol=1e-12)


def test_one_population_update_matches_plain_tmle(surv_spec):
    """With R = 1 and every unit in the source the transport update is the
    ordinary survival TMLE update."""
    spec = replace(surv_spec, selection=LogisticModel(constant=1.0))
    ds = generate(spec, 1500, 4, require_both_strata=False)
    assert ds.n_target == 0
    fits = fit_hazards(person_time_expand(ds), NuisanceConfig(truncation=0.0))
    fits = replace(fits, unit_ratio=True)
    assert fits.p_s1 == 1.0
    targeted = target_hazard(ds, fits, "separate", "covariate", ds.t0, max_iterations=1)
    fr = ds.frame()
    for arm in (0, 1):
        eps, lam = plain_survival_tmle_step(ds.t_tilde, ds.event, ds.a, fits.g_a.predict(fr),
                                            fits.hazard(fr, arm), fits.censoring(fr, arm),
                                            ds.t0, arm)
        assert targeted.epsilons[0][str(arm)] == pytest.approx(eps, abs=1e-8)
        np.testing.assert_allclose(targeted.hazard(arm), lam, atol=1e-8)


def test_single_period_reduces_to_missing_outcome():
    spec = survival_dgp(t0=1, tau=1)
    ds = generate(spec, 2000, 7)
    surv = fit_survival_tmle(ds)
    miss = fit_tmle(induced_missing_dataset(ds))
    for key in ("psi1", "psi0", "ate", "sigma_n"):
        assert getattr(surv.report, key) == pytest.approx(getattr(miss.report, key), abs=1e-8)
    np.testing.assert_allclose(surv.eic.total, miss.eic.total, atol=1e-10)


def test_ipctw_collapses_without_censoring(surv_spec):
    spec = replace(surv_spec, censoring_hazard=LogisticModel(constant=0.0),
                   treatment=LogisticModel(constant=1.0))
    ds = generate(spec, 3000, 5)
    fits = replace(fit_hazards(person_time_expand(ds), NuisanceConfig(truncation=0.0)),
                   unit_ratio=True)
    src = ds.s == 1
    expected = np.mean(ds.t_tilde[src] > ds.t0)
    assert ipctw_estimate(ds, fits, 1) == pytest.approx(expected, abs=1e-12)


def test_ipctw_hand_computed():
    sch = Schema(("w",), ("w",), SURVIVAL, t0=2, tau=3)
    nan = np.nan
    ds = Dataset.from_arrays(sch, s=[0, 1, 1, 1, 1], x=[[0], [0], [1], [1], [0]],
                             a=[nan, 1, 1, 0, 1], t_tilde=[nan, 3, 2, 3, 1],
                             event=[nan, 1, 0, 0, 1])
    fits = fit_hazards(person_time_expand(ds), NuisanceConfig(truncation=0.0))
    fr = ds.frame()
    g = fits.g(fr, 1)
    g_bar = 1 - fits.censoring(fr, 1)[:, 0]
    r = fits.density_ratio(fr)
    # units 1 (T~=3) and 2 (censored at t0=2) are known to survive past t0
    expected = sum(r[i] / (fits.p_s1 * g[i] * g_bar[i]) for i in (1, 2)) / ds.n
    assert ipctw_estimate(ds, fits, 1) == pytest.approx(expected, rel=1e-12)


def test_exact_remainder_at_truth(surv_spec):
    value, se = exact_remainder_mc(true_nuisance_fits(surv_spec), surv_spec, 100_000, 3)
    assert abs(value) <= 3 * se


def test_exact_remainder_neither_correct(surv_spec):
    value, se = exact_remainder_mc(true_nuisance_fits(surv_spec, "neither"), surv_spec,
                                   100_000, 3)
    assert abs(value) > 5 * se


def test_horizon_checks(surv_ds):
    with pytest.raises(ValidationError):
        estimate_survival(surv_ds, replace(SURV, t0=9))
    with pytest.raises(ValidationError):
        estimate_survival(surv_ds, replace(SURV, tau=4))
    with pytest.raises(ValidationError):
        RunConfig(estimand=SURVIVAL, fluctuation="linear")


def test_other_horizon(surv_ds):
    rep = estimate_survival(surv_ds, replace(SURV, t0=5))
    assert rep.diagnostics["t0"] == 5
    assert rep.psi1 < estimate_survival(surv_ds).psi1


def test_report_fields(surv_ds):
    rep = estimate_survival(surv_ds)
    assert rep.estimand == SURVIVAL and rep.variant == "full"
    assert set(rep.fluctuations) == {"0", "1"}
    assert 0 <= rep.psi1 <= 1 and 0 <= rep.psi0 <= 1
    ip = rep.diagnostics["ipctw"]
    assert abs(ip["ate"] - rep.ate) < 4 * rep.se
