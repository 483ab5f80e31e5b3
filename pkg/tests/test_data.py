import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transport_tmle.data import (MISSING_OUTCOME, SURVIVAL, Dataset, Schema, person_time_expand,
                                 read_csv, stack_strata, validate_dataset)
from transport_tmle.errors import EmptyStratum, StructuralViolation, ValidationError

SCHEMA = Schema(("w1",), ("w1", "w2"), MISSING_OUTCOME)


def row(**kw):
    base = {"s": "", "w1": "", "w2": "", "a": "", "delta": "", "y": ""}
    base.update({k: str(v) for k, v in kw.items()})
    return base


def test_delta_zero_without_outcome_is_accepted():
    rows = [row(s=1, w1=1, w2=2, a=1, delta=0), row(s=0, w1=1)]
    ds = validate_dataset(rows, SCHEMA)
    assert ds.n == 2
    assert np.isnan(ds.y[0])


def test_target_row_with_treatment_is_rejected():
    rows = [row(s=1, w1=1, w2=2, a=1, delta=0), row(s=0, w1=1, a=1)]
    with pytest.raises(StructuralViolation) as err:
        validate_dataset(rows, SCHEMA)
    assert err.value.row == 1


def test_three_row_file(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("s,w1,w2,a,delta,y\n1,0,1,1,1,0.5\n1,1,0,0,0,\n0,1,,,,\n")
    ds = read_csv(path, SCHEMA)
    assert (ds.n, ds.n_target, ds.n_source) == (3, 1, 2)
    assert ds.missing_rate == 0.5


@pytest.mark.parametrize("bad, message", [
    (row(s=0, w1=1, w2=0), "W-only"),
    (row(s=1, w1=1, a=1, delta=1, y=1), "all W"),
    (row(s=1, w1=1, w2=0, a=1, delta=1), "requires y"),
    (row(s=1, w1=1, w2=0, a=2, delta=0), "a in {0,1}"),
    (row(s=2, w1=1), "0 or 1"),
    (row(s=1, w1=1, w2=0, a=1, delta=0, y=1), "delta=0"),
])
def test_structural_violations(bad, message):
    rows = [row(s=1, w1=0, w2=0, a=0, delta=1, y=0), row(s=0, w1=0), bad]
    with pytest.raises(StructuralViolation, match=message) as err:
        validate_dataset(rows, SCHEMA)
    assert err.value.row == 2


def test_empty_stratum():
    with pytest.raises(EmptyStratum):
        validate_dataset([row(s=1, w1=0, w2=0, a=0, delta=1, y=0)], SCHEMA)
    ds = validate_dataset([row(s=1, w1=0, w2=0, a=0, delta=1, y=0)], SCHEMA,
                          require_both_strata=False)
    assert ds.n_target == 0


def test_non_numeric_cell():
    with pytest.raises(StructuralViolation, match="non-numeric"):
        validate_dataset([row(s=1, w1="x", w2=0, a=0, delta=0), row(s=0, w1=0)], SCHEMA)


def test_header_mismatch(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("s,w2,w1,a,delta,y\n")
    with pytest.raises(ValidationError, match="header"):
        read_csv(path, SCHEMA)


def test_schema_checks():
    with pytest.raises(ValidationError):
        Schema(("z",), ("w1",))
    with pytest.raises(ValidationError):
        Schema(("w",), ("w",), SURVIVAL, t0=4, tau=3)
    with pytest.raises(ValidationError):
        Schema(("w",), ("w", "u"), SURVIVAL, t0=1, tau=3)
    sch = Schema.from_dict({"w_columns": ["a1", "a2"], "v_columns": ["a2"]})
    assert sch.w_only_columns == ("a1",)
    assert Schema.from_dict(sch.to_dict()) == sch


def test_csv_round_trip(tmp_path, missing_ds):
    path = tmp_path / "d.csv"
    missing_ds.to_csv(path)
    back = read_csv(path, missing_ds.schema)
    for name in ("s", "x", "a", "delta", "y"):
        np.testing.assert_array_equal(getattr(back, name), getattr(missing_ds, name))


def test_survival_csv_round_trip(tmp_path, surv_ds):
    path = tmp_path / "s.csv"
    surv_ds.to_csv(path)
    back = read_csv(path, surv_ds.schema)
    np.testing.assert_array_equal(back.t_tilde, surv_ds.t_tilde)
    np.testing.assert_array_equal(back.event, surv_ds.event)


def test_records_view(tiny_missing):
    recs = tiny_missing.records()
    assert recs[0].s == 0 and recs[0].w is None and recs[0].v == (0.0,)
    assert recs[4].delta == 0 and recs[4].y is None
    assert recs[2].w == (0.0, 0.0) and recs[2].y == 1.0


def test_survival_t_tilde_range():
    sch = Schema(("w",), ("w",), SURVIVAL, t0=1, tau=2)
    with pytest.raises(StructuralViolation, match="t_tilde"):
        Dataset.from_arrays(sch, [1, 0], [[0], [0]], [1, np.nan], t_tilde=[3, np.nan],
                            event=[1, np.nan])


# -- person-time ------------------------------------------------------------------------

def test_person_time_event_unit(tiny_survival):
    pt = person_time_expand(tiny_survival)
    rows = pt.unit == 1
    np.testing.assert_array_equal(pt.t[rows], [1, 2, 3])
    np.testing.assert_array_equal(pt.d_event[rows], [0, 0, 1])
    np.testing.assert_array_equal(pt.d_censor[rows], [0, 0, 0])


def test_person_time_censored_at_one(tiny_survival):
    pt = person_time_expand(tiny_survival)
    rows = pt.unit == 2
    np.testing.assert_array_equal(pt.t[rows], [1])
    np.testing.assert_array_equal(pt.d_event[rows], [0])
    np.testing.assert_array_equal(pt.d_censor[rows], [1])


def test_person_time_row_count(tiny_survival):
    pt = person_time_expand(tiny_survival)
    assert pt.n_rows == 3 + 1 + 2
    assert not np.any(pt.unit == 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 6), st.booleans()), min_size=1, max_size=30))
def test_person_time_counts(units):
    tau = 6
    sch = Schema(("w",), ("w",), SURVIVAL, t0=1, tau=tau)
    n = len(units)
    ds = Dataset.from_arrays(sch, np.ones(n), np.zeros((n, 1)), np.ones(n),
                             t_tilde=[u[0] for u in units], event=[u[1] for u in units],
                             require_both_strata=False)
    pt = person_time_expand(ds)
    assert pt.n_rows == sum(u[0] for u in units)
    # every unit ends with exactly one event or one censoring
    assert pt.d_event.sum() + pt.d_censor.sum() == n
    assert pt.d_event.sum() == sum(u[1] for u in units)


def test_stack_strata(missing_ds):
    parts = [missing_ds.subset(missing_ds.s == 1), missing_ds.subset(missing_ds.s == 0)]
    both = stack_strata(missing_ds.schema, parts)
    assert both.n == missing_ds.n
    assert both.n_source == missing_ds.n_source
