import json
import math
from dataclasses import replace

import numpy as np
import pytest

from transport_tmle.config import RunConfig
from transport_tmle.data import SURVIVAL, Schema
from transport_tmle.dgp import LogisticModel, generate
from transport_tmle.errors import SchemaMismatch, ValidationError
from transport_tmle.federated import (FORMAT_VERSION, OUTCOME_MODEL, TargetedModelExport,
                                      apply_export, fit_less_aggressive, read_target_csv)
from transport_tmle.glm import DesignSpec, RegressionFit
from transport_tmle.survival import estimate_survival
from transport_tmle.tmle import estimate

REPORT_KEYS = ("psi1", "psi0", "ate", "sigma_n", "ci_lo", "ci_hi", "sigma_psi1", "sigma_psi0")


@pytest.fixture(params=["missing", "missing_vw", "survival"])
def any_ds(request, missing_ds, missing_vw_ds, surv_ds):
    return {"missing": missing_ds, "missing_vw": missing_vw_ds, "survival": surv_ds}[request.param]


def test_apply_matches_in_memory(any_ds):
    report, export = fit_less_aggressive(any_ds)
    applied = apply_export(any_ds, export)
    for key in REPORT_KEYS:
        assert getattr(applied, key) == pytest.approx(getattr(report, key), abs=1e-12)
    assert applied.n == report.n


def test_unit_ratio_pipeline_is_identical(any_ds):
    report, _ = fit_less_aggressive(any_ds)
    cfg = RunConfig(estimand=any_ds.kind, unit_ratio=True)
    run = estimate_survival if any_ds.kind == SURVIVAL else estimate
    assert run(any_ds, cfg).to_json() == report.to_json()


def test_bundle_round_trip(tmp_path, any_ds):
    _, export = fit_less_aggressive(any_ds)
    path = tmp_path / "bundle.json"
    export.write(path)
    back = TargetedModelExport.load(path)
    assert back.to_json() == export.to_json()
    np.testing.assert_array_equal(back.eic_contributions, export.eic_contributions)
    assert apply_export(any_ds, back).to_json() == apply_export(any_ds, export).to_json()


def test_source_only_export(any_ds):
    report, _ = fit_less_aggressive(any_ds)
    source = any_ds.subset(any_ds.s == 1)
    none, export = fit_less_aggressive(source, fits=None)
    assert none is None and export.p_s1 == 1.0
    applied = apply_export(any_ds.subset(any_ds.s == 0), export)
    for key in REPORT_KEYS:
        assert getattr(applied, key) == pytest.approx(getattr(report, key), abs=1e-12)


def test_bundle_holds_no_rows(missing_ds):
    _, export = fit_less_aggressive(missing_ds)
    doc = json.loads(export.to_json())
    assert set(doc) == {"format_version", "model_kind", "schema", "model", "n_source", "p_s1",
                        "eic_contributions", "eic_contributions_arm", "fluctuations"}
    assert len(doc["eic_contributions"]) == missing_ds.n_source
    assert doc["schema"]["w_columns"] == ["w1", "w2", "w3"]


def test_unknown_version_rejected(missing_ds):
    _, export = fit_less_aggressive(missing_ds)
    doc = export.to_dict()
    doc["format_version"] = FORMAT_VERSION + 1
    with pytest.raises(ValidationError, match="version"):
        TargetedModelExport.from_dict(doc)
    doc = export.to_dict()
    doc["rows"] = []
    with pytest.raises(ValidationError, match="unknown"):
        TargetedModelExport.from_dict(doc)


def test_missing_target_column(missing_ds, surv_ds):
    _, export = fit_less_aggressive(missing_ds)
    with pytest.raises(SchemaMismatch):
        apply_export({"w1": np.zeros(3)}, export)
    _, export = fit_less_aggressive(surv_ds)
    with pytest.raises(SchemaMismatch):
        apply_export({"w1": np.zeros(3)}, export)


def test_target_csv(tmp_path, missing_ds):
    report, export = fit_less_aggressive(missing_ds)
    full = tmp_path / "all.csv"
    missing_ds.to_csv(full)
    cols = read_target_csv(full, export)
    assert set(cols) == {"w1", "w2"}
    assert len(cols["w1"]) == missing_ds.n_target
    assert apply_export(cols, export).ate == pytest.approx(report.ate, abs=1e-12)
    bad = tmp_path / "bad.csv"
    bad.write_text("w1\n0\n")
    with pytest.raises(SchemaMismatch):
        read_target_csv(bad, export)


def test_constant_prediction_export():
    const = RegressionFit(np.array([0.3]), "identity", DesignSpec(("v",), link="identity"), {})
    const = replace(const, coefficients=np.array([0.3, 0.0]))
    model = {"v_equals_w": False, "targeting": "separate",
             "reduced": {"1": const.to_dict(), "0": const.to_dict()},
             "epsilon_reduced": {"1": 0.0, "0": 0.0}}
    contrib = np.array([0.5, -0.5, 1.0, -1.0])
    export = TargetedModelExport(OUTCOME_MODEL, Schema(("v",), ("v", "w")), model, 4, 0.5,
                                 contrib, {1: contrib, 0: np.zeros(4)})
    rep = apply_export({"v": np.array([0.0, 1.0, 2.0, 3.0])}, export)
    assert rep.psi1 == rep.psi0 == 0.3
    # target units contribute nothing, so the spread is the source part alone
    assert rep.sigma_psi0 == 0.0
    pooled = np.concatenate([contrib, np.zeros(4)])
    assert rep.sigma_psi1 == pytest.approx(np.std(pooled, ddof=1), rel=1e-12)


def test_one_population_variants_agree(missing_spec):
    spec = replace(missing_spec, selection=LogisticModel(0.2))
    ds = generate(spec, 3000, 14)
    full = estimate(ds)
    less, _ = fit_less_aggressive(ds)
    assert abs(full.ate - less.ate) <= 3 * full.sigma_n / math.sqrt(full.n)
    assert less.variant == "less-aggressive" and full.variant == "full"


def test_split_report_marks_workflow(missing_ds):
    _, export = fit_less_aggressive(missing_ds)
    rep = apply_export(missing_ds, export)
    assert rep.diagnostics["split_workflow"] is True
    assert rep.diagnostics["p_s1_local"] == pytest.approx(missing_ds.n_source / missing_ds.n)
