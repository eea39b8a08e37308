"""Flattening: project resource bundles onto a fixed tabular schema.

The projection spec is the cross-station contract: an ordered column list
(name, path expression, conversion) plus the outcome derivation. Stations
load the identical JSON document, so column order, encodings, and outcome
semantics cannot diverge. Rows that cannot be projected cleanly go to a
rejects report; nothing is silently coerced.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import List, Optional

from .cdf import IsoDate
from .fhirpath import PathExpr, eval_path, normalize_path, parse_path
from .profiles import ResourceBundle

DAYS_PER_YEAR = 365.25


class ProjectionSpecError(Exception):
    """Malformed or internally inconsistent projection spec."""


@dataclass(frozen=True)
class ColumnSpec:
    """One model input: where it comes from and how it becomes a number.

    ``convert`` is "number" (cell must already be numeric), "code" (cell is
    mapped through ``encoding``), or "age_at_baseline" (cell is a date,
    converted to whole years elapsed up to the bundle's baseline date).
    ``missing_as`` optionally fills no-match cells with a constant.
    """

    name: str
    expr: PathExpr
    convert: str = "number"
    encoding: Optional[dict] = None
    missing_as: Optional[float] = None

    @property
    def categorical(self) -> bool:
        return self.encoding is not None


@dataclass(frozen=True)
class OutcomeSpec:
    """How event time and indicator derive from the bundle.

    The composite event is the earliest onset among the event expressions.
    Follow-up is administratively censored at the horizon; an onset exactly at
    the horizon still counts as an event (closed horizon).
    """

    baseline_expr: PathExpr
    last_follow_up_expr: PathExpr
    event_exprs: tuple
    horizon_years: float = 10.0


@dataclass
class ProjectionSpec:
    columns: List[ColumnSpec]
    outcome: OutcomeSpec

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(names) != len(set(names)):
            raise ProjectionSpecError("column names must be unique")

    @property
    def column_names(self) -> list:
        return [c.name for c in self.columns]

    def expression_texts(self) -> list:
        """Canonical text of every expression the stations must allow."""
        texts = [str(c.expr) for c in self.columns]
        texts.append(str(self.outcome.baseline_expr))
        texts.append(str(self.outcome.last_follow_up_expr))
        texts.extend(str(e) for e in self.outcome.event_exprs)
        return texts

    @classmethod
    def from_json_obj(cls, obj) -> "ProjectionSpec":
        columns = []
        for c in obj["columns"]:
            columns.append(
                ColumnSpec(
                    name=c["name"],
                    expr=parse_path(c["expr"]),
                    convert=c.get("convert", "number"),
                    encoding=c.get("encoding"),
                    missing_as=c.get("missing_as"),
                )
            )
        out = obj["outcome"]
        outcome = OutcomeSpec(
            baseline_expr=parse_path(out["baseline"]),
            last_follow_up_expr=parse_path(out["last_follow_up"]),
            event_exprs=tuple(parse_path(e) for e in out["events"]),
            horizon_years=float(out.get("horizon_years", 10.0)),
        )
        return cls(columns=columns, outcome=outcome)

    @classmethod
    def load(cls, path) -> "ProjectionSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_obj(json.load(fh))

    def spec_hash(self) -> str:
        """Stable digest over canonical expression texts and encodings."""
        import hashlib

        payload = json.dumps(
            {
                "columns": [
                    {
                        "name": c.name,
                        "expr": str(c.expr),
                        "convert": c.convert,
                        "encoding": c.encoding,
                        "missing_as": c.missing_as,
                    }
                    for c in self.columns
                ],
                "outcome": self.expression_texts()[len(self.columns):],
                "horizon": self.outcome.horizon_years,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class Reject:
    bundle_id: str
    column: Optional[str]
    reason: str


@dataclass
class FlatTable:
    """Fixed-schema rows ready for modeling: optional floats plus outcomes."""

    columns: List[str]
    rows: list  # list of list[Optional[float]]
    time: list  # follow-up years
    event: list  # bool
    ids: list = field(default_factory=list)
    categorical: list = field(default_factory=list)  # per-column bool

    def __post_init__(self):
        if not self.categorical:
            self.categorical = [False] * len(self.columns)
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError("row width does not match column count")
        if any(t < 0 for t in self.time):
            raise ValueError("event_time must be non-negative")

    def __len__(self):
        return len(self.rows)

    @property
    def n_columns(self):
        return len(self.columns)

    def subset(self, indices) -> "FlatTable":
        return FlatTable(
            columns=list(self.columns),
            rows=[self.rows[i] for i in indices],
            time=[self.time[i] for i in indices],
            event=[self.event[i] for i in indices],
            ids=[self.ids[i] for i in indices] if self.ids else [],
            categorical=list(self.categorical),
        )


def years_between(a: IsoDate, b: IsoDate) -> float:
    """Elapsed years from a to b on day counts (365.25-day years)."""
    return (b.as_date() - a.as_date()).days / DAYS_PER_YEAR


def _convert_cell(raw, col: ColumnSpec, baseline: IsoDate):
    """Numeric cell value, or a reject reason string."""
    if col.convert == "number":
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            return None, f"column {col.name!r}: expected a number, got {raw!r}"
        return float(raw), None
    if col.convert == "code":
        if col.encoding is None:
            return None, f"column {col.name!r}: code conversion without an encoding"
        key = raw if isinstance(raw, str) else str(raw)
        if key not in col.encoding:
            return None, f"column {col.name!r}: value {raw!r} not in encoding"
        return float(col.encoding[key]), None
    if col.convert == "age_at_baseline":
        if not isinstance(raw, IsoDate):
            return None, f"column {col.name!r}: expected a date, got {raw!r}"
        return float(int(years_between(raw, baseline))), None
    return None, f"column {col.name!r}: unknown conversion {col.convert!r}"


def _derive_outcome(bundle: ResourceBundle, outcome: OutcomeSpec):
    """(event_time, event) or a reject reason."""
    baselines = eval_path(outcome.baseline_expr, bundle)
    if not baselines or not isinstance(baselines[0], IsoDate):
        return None, None, "missing baseline assessment date"
    baseline = baselines[0]
    last = eval_path(outcome.last_follow_up_expr, bundle)
    if not last or not isinstance(last[0], IsoDate):
        return None, None, "missing last follow-up date"
    follow_up_years = years_between(baseline, last[0])
    if follow_up_years < 0:
        return None, None, "last follow-up precedes baseline"

    onsets = []
    for expr in outcome.event_exprs:
        for v in eval_path(expr, bundle):
            if isinstance(v, IsoDate):
                onsets.append(v)
    if onsets:
        earliest = min(onsets, key=lambda d: d.as_date())
        event_years = years_between(baseline, earliest)
        if event_years < 0:
            return None, None, "condition onset precedes baseline (prevalent case)"
        if event_years <= outcome.horizon_years:
            return event_years, True, None
    return min(outcome.horizon_years, follow_up_years), False, None


def flatten(bundles, spec: ProjectionSpec):
    """Project bundles to a FlatTable plus a rejects report.

    Cell (i, j) is the first match of column j's expression on bundle i,
    converted per the column spec; no-match yields the column's missing_as
    fill (or an empty cell). A conversion failure rejects the whole row.
    """
    columns = spec.column_names
    rows, times, events, ids = [], [], [], []
    rejects: List[Reject] = []
    for bundle in bundles:
        event_time, event, reason = _derive_outcome(bundle, spec.outcome)
        if reason is not None:
            rejects.append(Reject(bundle.subject_id, None, reason))
            continue
        baseline = eval_path(spec.outcome.baseline_expr, bundle)[0]
        row = []
        row_reject = None
        for col in spec.columns:
            matches = eval_path(col.expr, bundle)
            if not matches:
                row.append(None if col.missing_as is None else float(col.missing_as))
                continue
            value, problem = _convert_cell(matches[0], col, baseline)
            if problem is not None:
                row_reject = Reject(bundle.subject_id, col.name, problem)
                break
            row.append(value)
        if row_reject is not None:
            rejects.append(row_reject)
            continue
        rows.append(row)
        times.append(event_time)
        events.append(event)
        ids.append(bundle.subject_id)
    table = FlatTable(
        columns=columns,
        rows=rows,
        time=times,
        event=events,
        ids=ids,
        categorical=[c.categorical for c in spec.columns],
    )
    return table, rejects


# -- on-disk forms -----------------------------------------------------------


def table_to_csv(table: FlatTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id"] + table.columns + ["event_time", "event"])
    for i, row in enumerate(table.rows):
        cells = [table.ids[i] if table.ids else str(i)]
        cells += ["" if v is None else repr(float(v)) for v in row]
        cells += [repr(float(table.time[i])), "1" if table.event[i] else "0"]
        writer.writerow(cells)
    return buf.getvalue()


def table_from_csv(text: str, categorical=None) -> FlatTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header[:1] != ["id"] or header[-2:] != ["event_time", "event"]:
        raise ValueError("expected header: id, <columns...>, event_time, event")
    columns = header[1:-2]
    rows, times, events, ids = [], [], [], []
    for line in reader:
        if not line:
            continue
        ids.append(line[0])
        rows.append([None if c == "" else float(c) for c in line[1:-2]])
        times.append(float(line[-2]))
        events.append(line[-1] == "1")
    return FlatTable(
        columns=columns,
        rows=rows,
        time=times,
        event=events,
        ids=ids,
        categorical=list(categorical) if categorical else [],
    )


def save_table(table: FlatTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(table_to_csv(table))


def load_table(path) -> FlatTable:
    with open(path, "r", encoding="utf-8") as fh:
        return table_from_csv(fh.read())


def save_rejects(rejects, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            [{"id": r.bundle_id, "column": r.column, "reason": r.reason} for r in rejects],
            fh,
            indent=2,
        )
