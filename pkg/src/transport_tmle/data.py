"""Observed-data records, dataset containers and CSV/JSON input.

Two observed-data structures are supported:

* missing outcome: ``O = (S, S*(W, A, Delta, Delta*Y), (1-S)*V)`` with ``V`` a
  named subset of the columns of ``W``;
* survival: ``O = (S, W, S*A, S*T~, S*Delta)`` on the discrete grid ``1..tau``.

Datasets are stored column-wise (numpy arrays, NaN for absent cells) and are
treated as immutable once validated.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyStratum, StructuralViolation, ValidationError

MISSING_OUTCOME = "missing-outcome"
SURVIVAL = "survival"


@dataclass(frozen=True)
class Schema:
    """Column roles and time grid for a dataset.

    ``w_columns`` lists every covariate column; ``v_columns`` is the subset
    observed in the target stratum. For survival data ``v_columns`` equals
    ``w_columns``.
    """

    v_columns: tuple[str, ...]
    w_columns: tuple[str, ...]
    kind: str = MISSING_OUTCOME
    t0: int | None = None
    tau: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "v_columns", tuple(self.v_columns))
        object.__setattr__(self, "w_columns", tuple(self.w_columns))
        if self.kind not in (MISSING_OUTCOME, SURVIVAL):
            raise ValidationError(f"unknown estimand kind {self.kind!r}")
        if not self.w_columns:
            raise ValidationError("w_columns must be non-empty")
        if len(set(self.w_columns)) != len(self.w_columns):
            raise ValidationError("duplicate names in w_columns")
        missing = [c for c in self.v_columns if c not in self.w_columns]
        if missing:
            raise ValidationError(f"v_columns not among w_columns: {missing}")
        if self.kind == SURVIVAL:
            if self.tau is None or self.t0 is None:
                raise ValidationError("survival schema requires t0 and tau")
            if set(self.v_columns) != set(self.w_columns):
                raise ValidationError("survival data observe all of W in both strata")
        if self.tau is not None and self.tau < 1:
            raise ValidationError("tau must be >= 1")
        if self.t0 is not None and self.tau is not None and not 1 <= self.t0 <= self.tau:
            raise ValidationError(f"t0={self.t0} must lie in 1..tau={self.tau}")

    @property
    def w_only_columns(self) -> tuple[str, ...]:
        return tuple(c for c in self.w_columns if c not in self.v_columns)

    @property
    def v_equals_w(self) -> bool:
        return set(self.v_columns) == set(self.w_columns)

    def header(self) -> list[str]:
        if self.kind == SURVIVAL:
            return ["s", *self.w_columns, "a", "t_tilde", "delta_event"]
        return ["s", *self.v_columns, *self.w_only_columns, "a", "delta", "y"]

    def to_dict(self) -> dict:
        out = {"estimand": self.kind, "v_columns": list(self.v_columns),
               "w_columns": list(self.w_columns)}
        if self.t0 is not None:
            out["t0"] = self.t0
        if self.tau is not None:
            out["tau"] = self.tau
        return out

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Schema":
        w = doc.get("w_columns")
        if w is None:
            raise ValidationError("schema needs w_columns")
        kind = doc.get("estimand")
        if kind is None:
            kind = SURVIVAL if doc.get("tau") is not None else MISSING_OUTCOME
        v = doc.get("v_columns", w)
        if kind == SURVIVAL:
            v = w
        return cls(v_columns=tuple(v), w_columns=tuple(w), kind=kind,
                   t0=doc.get("t0"), tau=doc.get("tau"))

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class ObservedRecord:
    s: int
    v: tuple[float, ...]
    w: tuple[float, ...] | None = None
    a: int | None = None
    delta: int | None = None
    y: float | None = None


@dataclass(frozen=True)
class SurvivalRecord:
    s: int
    w: tuple[float, ...]
    a: int | None = None
    t_tilde: int | None = None
    delta_event: int | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented container for one sample.

    ``x`` has one column per entry of ``schema.w_columns``; cells not observed
    (W-only columns for S=0 units) are NaN, as are ``a``, ``delta``, ``y``,
    ``t_tilde`` and ``event`` where absent.
    """

    schema: Schema
    s: np.ndarray
    x: np.ndarray
    a: np.ndarray
    delta: np.ndarray | None = None
    y: np.ndarray | None = None
    t_tilde: np.ndarray | None = None
    event: np.ndarray | None = None
    _frame: dict = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return int(self.s.shape[0])

    @property
    def n_source(self) -> int:
        return int(np.sum(self.s == 1))

    @property
    def n_target(self) -> int:
        return int(np.sum(self.s == 0))

    @property
    def kind(self) -> str:
        return self.schema.kind

    @property
    def v_columns(self):
        return self.schema.v_columns

    @property
    def w_columns(self):
        return self.schema.w_columns

    @property
    def t0(self):
        return self.schema.t0

    @property
    def tau(self):
        return self.schema.tau

    @property
    def source(self) -> np.ndarray:
        return self.s == 1

    @property
    def target(self) -> np.ndarray:
        return self.s == 0

    @property
    def missing_rate(self) -> float:
        """Share of source units with unobserved outcome (Delta=0)."""
        if self.kind != MISSING_OUTCOME or self.n_source == 0:
            return 0.0
        return float(np.mean(self.delta[self.source] == 0))

    def column(self, name: str) -> np.ndarray:
        return self.x[:, self.schema.w_columns.index(name)]

    def frame(self) -> dict[str, np.ndarray]:
        """Name -> column mapping used to build design matrices."""
        if self._frame is None:
            fr = {name: self.x[:, j] for j, name in enumerate(self.schema.w_columns)}
            fr["s"] = self.s.astype(float)
            fr["a"] = self.a
            object.__setattr__(self, "_frame", fr)
        return self._frame

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        opt = {k: (None if getattr(self, k) is None else getattr(self, k)[mask])
               for k in ("delta", "y", "t_tilde", "event")}
        return Dataset(self.schema, self.s[mask], self.x[mask], self.a[mask], **opt)

    def counts(self) -> dict:
        return {"n": self.n, "n_source": self.n_source, "n_target": self.n_target,
                "missing_rate": self.missing_rate}

    # -- record views -------------------------------------------------------
    def records(self) -> list:
        vidx = [self.schema.w_columns.index(c) for c in self.schema.v_columns]
        out = []
        for i in range(self.n):
            si = int(self.s[i])
            if self.kind == SURVIVAL:
                w = tuple(float(u) for u in self.x[i])
                if si == 1:
                    out.append(SurvivalRecord(1, w, int(self.a[i]), int(self.t_tilde[i]),
                                              int(self.event[i])))
                else:
                    out.append(SurvivalRecord(0, w))
                continue
            v = tuple(float(self.x[i, j]) for j in vidx)
            if si == 0:
                out.append(ObservedRecord(0, v))
            else:
                d = int(self.delta[i])
                out.append(ObservedRecord(1, v, tuple(float(u) for u in self.x[i]),
                                          int(self.a[i]), d,
                                          float(self.y[i]) if d == 1 else None))
        return out

    def to_rows(self) -> list[dict]:
        """Typed row dicts keyed by the CSV header (None marks an empty cell)."""
        header = self.schema.header()
        rows = []
        for i in range(self.n):
            row = {}
            for name in header:
                row[name] = _cell(self, name, i)
            rows.append(row)
        return rows

    def to_csv(self, path) -> None:
        header = self.schema.header()
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for row in self.to_rows():
                wr.writerow(["" if row[h] is None else _fmt(row[h]) for h in header])

    # -- construction -------------------------------------------------------
    @classmethod
    def from_arrays(cls, schema: Schema, s, x, a, delta=None, y=None,
                    t_tilde=None, event=None, require_both_strata=True) -> "Dataset":
        """Build a dataset from arrays, checking invariants vectorially.

        ``require_both_strata=False`` admits single-stratum data, e.g. the
        target-side file of the split workflow.
        """
        s = np.asarray(s, dtype=np.int8)
        x = np.asarray(x, dtype=float)
        a = np.asarray(a, dtype=float)
        n = s.shape[0]
        if x.shape != (n, len(schema.w_columns)):
            raise ValidationError(f"covariate block has shape {x.shape}, expected "
                                  f"({n}, {len(schema.w_columns)})")
        to_f = lambda z: None if z is None else np.asarray(z, dtype=float)  # noqa: E731
        ds = cls(schema, s, x, a, to_f(delta), to_f(y), to_f(t_tilde), to_f(event))
        _check_arrays(ds, require_both_strata)
        return ds


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _cell(ds: Dataset, name: str, i: int):
    sch = ds.schema
    if name == "s":
        return int(ds.s[i])
    if name in sch.w_columns:
        val = ds.x[i, sch.w_columns.index(name)]
        return None if math.isnan(val) else float(val)
    arr = {"a": ds.a, "delta": ds.delta, "y": ds.y, "t_tilde": ds.t_tilde,
           "delta_event": ds.event}[name]
    val = arr[i]
    if math.isnan(val):
        return None
    return float(val) if name == "y" else int(val)


def _violations(ds: Dataset) -> tuple[np.ndarray, str] | None:
    """Return (bad-row mask, message) for the first failing invariant."""
    sch = ds.schema
    s, x, a = ds.s, ds.x, ds.a
    src, tgt = s == 1, s == 0
    checks = [(~(src | tgt), "s must be 0 or 1")]
    vidx = [sch.w_columns.index(c) for c in sch.v_columns]
    oidx = [sch.w_columns.index(c) for c in sch.w_only_columns]
    nan = np.isnan
    checks.append((np.isnan(x[:, vidx]).any(axis=1) if vidx else np.zeros_like(src),
                   "target covariates V must be present"))
    if oidx:
        checks.append((src & nan(x[:, oidx]).any(axis=1), "s=1 requires all W columns"))
        checks.append((tgt & ~nan(x[:, oidx]).all(axis=1), "s=0 forbids W-only columns"))
    checks.append((tgt & ~nan(a), "s=0 forbids treatment fields"))
    checks.append((src & ~((a == 0) | (a == 1)), "s=1 requires a in {0,1}"))
    if sch.kind == MISSING_OUTCOME:
        d, y = ds.delta, ds.y
        checks.append((tgt & (~nan(d) | ~nan(y)), "s=0 forbids delta and y"))
        checks.append((src & ~((d == 0) | (d == 1)), "s=1 requires delta in {0,1}"))
        checks.append((src & (d == 1) & nan(y), "delta=1 requires y"))
        checks.append((src & (d == 0) & ~nan(y), "y present with delta=0"))
        checks.append((src & ~nan(y) & ~np.isfinite(np.where(nan(y), 0.0, y)),
                       "y must be finite"))
    else:
        tt, ev = ds.t_tilde, ds.event
        checks.append((tgt & (~nan(tt) | ~nan(ev)), "s=0 forbids t_tilde and delta_event"))
        checks.append((src & ~((ev == 0) | (ev == 1)), "s=1 requires delta_event in {0,1}"))
        ok_t = ~nan(tt) & (np.where(nan(tt), 0, tt) == np.round(np.where(nan(tt), 0, tt)))
        ok_t &= (np.where(nan(tt), 0, tt) >= 1) & (np.where(nan(tt), 0, tt) <= sch.tau)
        checks.append((src & ~ok_t, f"t_tilde must be an integer in 1..{sch.tau}"))
    for bad, msg in checks:
        if np.any(bad):
            return bad, msg
    return None


def _check_arrays(ds: Dataset, require_both_strata: bool = True) -> None:
    if ds.schema.kind == MISSING_OUTCOME and (ds.delta is None or ds.y is None):
        raise ValidationError("missing-outcome data need delta and y columns")
    if ds.schema.kind == SURVIVAL and (ds.t_tilde is None or ds.event is None):
        raise ValidationError("survival data need t_tilde and delta_event columns")
    found = _violations(ds)
    if found is not None:
        bad, msg = found
        raise StructuralViolation(int(np.flatnonzero(bad)[0]), msg)
    if ds.n < 1:
        raise EmptyStratum("dataset is empty")
    if require_both_strata and (ds.n_source == 0 or ds.n_target == 0):
        raise EmptyStratum(f"need both strata, got n_source={ds.n_source}, "
                           f"n_target={ds.n_target}")


def _parse(value) -> float:
    if value is None:
        return math.nan
    if isinstance(value, str):
        value = value.strip()
        if value == "" or value.upper() == "NA":
            return math.nan
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"non-numeric cell {value!r}") from None


def validate_dataset(rows: Iterable[Mapping], schema: Schema,
                     require_both_strata: bool = True) -> Dataset:
    """Parse raw rows (e.g. from :class:`csv.DictReader`) into a validated Dataset.

    Raises
    ------
    StructuralViolation
        A row breaks its stratum's observed-data pattern; ``.row`` is the
        zero-based index.
    EmptyStratum
        Either stratum is empty.
    """
    rows = list(rows)
    header = schema.header()
    cols = {h: np.full(len(rows), math.nan) for h in header}
    for i, row in enumerate(rows):
        unknown = set(row) - set(header)
        if unknown:
            raise StructuralViolation(i, f"unknown columns {sorted(unknown)}")
        for h in header:
            try:
                cols[h][i] = _parse(row.get(h))
            except ValidationError as exc:
                raise StructuralViolation(i, str(exc)) from None
    if np.any(np.isnan(cols["s"])):
        raise StructuralViolation(int(np.flatnonzero(np.isnan(cols["s"]))[0]), "s missing")
    x = np.column_stack([cols[c] for c in schema.w_columns]) if rows else \
        np.empty((0, len(schema.w_columns)))
    if schema.kind == SURVIVAL:
        return Dataset.from_arrays(schema, cols["s"], x, cols["a"],
                                   t_tilde=cols["t_tilde"], event=cols["delta_event"],
                                   require_both_strata=require_both_strata)
    return Dataset.from_arrays(schema, cols["s"], x, cols["a"], delta=cols["delta"],
                               y=cols["y"], require_both_strata=require_both_strata)


def read_csv(path, schema: Schema, require_both_strata: bool = True) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValidationError(f"{path}: empty file")
        expected = schema.header()
        if list(reader.fieldnames) != expected:
            raise ValidationError(f"{path}: header {reader.fieldnames} != {expected}")
        return validate_dataset(reader, schema, require_both_strata)


# -- person-time ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PersonTimeTable:
    """One row per (source unit, period t) with t = 1..T~.

    ``unit`` indexes rows of the originating dataset. ``d_event`` is dN(t)
    and ``d_censor`` is dA_c(t); units still at risk at tau are coded as
    censored at tau.
    """

    unit: np.ndarray
    t: np.ndarray
    d_event: np.ndarray
    d_censor: np.ndarray
    tau: int
    dataset: Dataset

    @property
    def n_rows(self) -> int:
        return int(self.unit.shape[0])

    def frame(self) -> dict[str, np.ndarray]:
        base = self.dataset.frame()
        fr = {k: v[self.unit] for k, v in base.items()}
        fr["t"] = self.t.astype(float)
        return fr


def person_time_expand(ds: Dataset) -> PersonTimeTable:
    if ds.kind != SURVIVAL:
        raise ValidationError("person-time expansion needs survival data")
    src = np.flatnonzero(ds.source)
    tt = ds.t_tilde[src].astype(int)
    unit = np.repeat(src, tt)
    # t runs 1..T~ within each unit
    starts = np.repeat(np.cumsum(tt) - tt, tt)
    t = np.arange(unit.shape[0]) - starts + 1
    last = t == np.repeat(tt, tt)
    ev = np.repeat(ds.event[src], tt) == 1
    d_event = (last & ev).astype(float)
    d_censor = (last & ~ev).astype(float)
    return PersonTimeTable(unit, t, d_event, d_censor, int(ds.tau), ds)


def load_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def stack_strata(schema: Schema, parts: Sequence[Dataset]) -> Dataset:
    """Concatenate datasets sharing a schema (used to re-join split data)."""
    opt = {}
    for k in ("delta", "y", "t_tilde", "event"):
        arrs = [getattr(p, k) for p in parts]
        opt[k] = None if arrs[0] is None else np.concatenate(arrs)
    return Dataset.from_arrays(schema, np.concatenate([p.s for p in parts]),
                               np.vstack([p.x for p in parts]),
                               np.concatenate([p.a for p in parts]), **opt,
                               require_both_strata=False)
