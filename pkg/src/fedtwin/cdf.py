"""Cohort Data Format (CDF): per-participant variable-by-wave value store.

Concrete syntax is UTF-8 JSON lines, one participant per line:

    {"id": "LL-000001", "values": {"AGE": {"1A": 50}, "DATE": {"1A": "2008-03-15"}}}

A JSON ``null`` cell means "asked, no answer"; an absent wave key means "not
collected at that wave". Both read back as an absent value. Canonical
serialization orders participants by id and all object keys lexicographically,
so ``serialize(parse(x))`` is byte-identical to the canonicalized input.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from datetime import date as _date
from typing import Iterable, Iterator, Optional, Union


class CdfError(Exception):
    """Base class for CDF parsing and construction failures."""


class CdfParseError(CdfError):
    """Malformed CDF syntax; carries a line locator."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CdfSemanticError(CdfError):
    """Well-formed syntax violating a dataset invariant (e.g. duplicate id)."""


class WaveFileError(CdfError):
    """Bad wave CSV input: missing id column or conflicting cell values."""


_YEAR_RE = re.compile(r"^\d{4}$")
_YEAR_MONTH_RE = re.compile(r"^\d{4}-\d{2}$")
_FULL_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


@dataclass(frozen=True)
class IsoDate:
    """ISO-8601 date with explicit precision: year, year-month, or full date.

    Round-trips losslessly through its string form. No timezone handling;
    cohort assessments are date-granular. Ordering compares (year, month, day)
    with absent parts low, so 2008 < 2008-01 < 2008-01-02.
    """

    year: int
    month: Optional[int] = None
    day: Optional[int] = None

    def _key(self):
        return (self.year, self.month or 0, self.day or 0)

    def __lt__(self, other: "IsoDate") -> bool:
        return self._key() < other._key()

    def __le__(self, other: "IsoDate") -> bool:
        return self._key() <= other._key()

    def __gt__(self, other: "IsoDate") -> bool:
        return self._key() > other._key()

    def __ge__(self, other: "IsoDate") -> bool:
        return self._key() >= other._key()

    def __post_init__(self):
        if self.day is not None and self.month is None:
            raise ValueError("day precision requires a month")
        if self.month is not None and not 1 <= self.month <= 12:
            raise ValueError(f"month out of range: {self.month}")
        if self.day is not None:
            # delegates day-of-month validation (incl. leap years)
            _date(self.year, self.month, self.day)

    @property
    def precision(self) -> str:
        if self.day is not None:
            return "day"
        if self.month is not None:
            return "month"
        return "year"

    @classmethod
    def parse(cls, text: str) -> "IsoDate":
        if _YEAR_RE.match(text):
            return cls(int(text))
        if _YEAR_MONTH_RE.match(text):
            return cls(int(text[:4]), int(text[5:7]))
        if _FULL_DATE_RE.match(text):
            return cls(int(text[:4]), int(text[5:7]), int(text[8:10]))
        raise ValueError(f"not an ISO-8601 date: {text!r}")

    @classmethod
    def from_date(cls, d: _date) -> "IsoDate":
        return cls(d.year, d.month, d.day)

    def as_date(self) -> _date:
        """Coerce to a calendar date, filling missing parts with 1."""
        return _date(self.year, self.month or 1, self.day or 1)

    def __str__(self) -> str:
        if self.day is not None:
            return f"{self.year:04d}-{self.month:02d}-{self.day:02d}"
        if self.month is not None:
            return f"{self.year:04d}-{self.month:02d}"
        return f"{self.year:04d}"


class _Missing:
    """Present-but-empty marker (JSON null): asked, no answer."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MISSING"


MISSING = _Missing()

#: Stored cell values. ``MISSING`` is present-but-empty; plain absence of the
#: (variable, wave) key is "not collected".
Value = Union[str, int, float, IsoDate, _Missing]


def _is_valid_date_text(text: str) -> bool:
    try:
        IsoDate.parse(text)
        return True
    except ValueError:
        return False


def parse_scalar(raw, *, line: Optional[int] = None) -> Value:
    """Interpret a JSON scalar as a CDF value.

    Strings matching a valid ISO-8601 year / year-month / full date become
    dates; other strings stay text. Booleans and containers are rejected.
    """
    if raw is None:
        return MISSING
    if isinstance(raw, bool):
        raise CdfParseError("boolean cell values are not supported", line or 0)
    if isinstance(raw, (int, float)):
        return raw
    if isinstance(raw, str):
        if _is_valid_date_text(raw):
            return IsoDate.parse(raw)
        return raw
    raise CdfParseError(f"unsupported cell value of type {type(raw).__name__}", line or 0)


def scalar_to_json(v: Value):
    if v is MISSING:
        return None
    if isinstance(v, IsoDate):
        return str(v)
    return v


@dataclass
class ParticipantRecord:
    """One participant's pseudonymized id plus (variable, wave) -> value map."""

    id: str
    cells: dict = field(default_factory=dict)  # (variable, wave) -> Value

    def value(self, variable: str, wave: str) -> Optional[Value]:
        """Stored value at exactly (variable, wave), or None when absent.

        Absence covers both "not collected" and "asked, no answer": mapping
        logic treats the two uniformly as undefined.
        """
        v = self.cells.get((variable, wave))
        if v is MISSING:
            return None
        return v

    def values(self, variable: str, waves: list) -> list:
        """Element-wise ``value`` over an ordered wave list."""
        if not waves:
            raise ValueError("waves must be non-empty")
        return [self.value(variable, w) for w in waves]

    def waves_used(self) -> set:
        return {wave for (_, wave) in self.cells}

    def variables(self) -> set:
        return {var for (var, _) in self.cells}


@dataclass
class CohortDataset:
    """Immutable-after-construction cohort: ordered participants plus wave catalog."""

    participants: list = field(default_factory=list)
    wave_order: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for p in self.participants:
            if p.id in seen:
                raise CdfSemanticError(f"duplicate participant id: {p.id}")
            seen.add(p.id)
        referenced = set()
        for p in self.participants:
            referenced |= p.waves_used()
        if not self.wave_order:
            self.wave_order = sorted(referenced)
        else:
            missing = referenced - set(self.wave_order)
            if missing:
                raise CdfSemanticError(f"waves not in wave_order: {sorted(missing)}")
        self._index = {p.id: p for p in self.participants}

    def __len__(self) -> int:
        return len(self.participants)

    def __iter__(self) -> Iterator[ParticipantRecord]:
        return iter(self.participants)

    def get(self, participant_id: str) -> Optional[ParticipantRecord]:
        return self._index.get(participant_id)

    @property
    def variable_catalog(self) -> set:
        names = set()
        for p in self.participants:
            names |= p.variables()
        return names


def _record_from_json(obj, line: int) -> ParticipantRecord:
    if not isinstance(obj, dict):
        raise CdfParseError("record must be a JSON object", line)
    pid = obj.get("id")
    if not isinstance(pid, str) or not pid:
        raise CdfParseError("record is missing a non-empty string 'id'", line)
    values = obj.get("values", {})
    if not isinstance(values, dict):
        raise CdfParseError("'values' must be an object of variable -> wave map", line)
    cells = {}
    for var, wave_map in values.items():
        if not isinstance(wave_map, dict):
            raise CdfParseError(f"variable {var!r} must map waves to scalars", line)
        for wave, raw in wave_map.items():
            cells[(var, wave)] = parse_scalar(raw, line=line)
    return ParticipantRecord(id=pid, cells=cells)


def parse_cdf(source) -> CohortDataset:
    """Parse a CDF JSON-lines document from bytes, text, or a file object.

    Raises ``CdfParseError`` with a line locator on malformed syntax and
    ``CdfSemanticError`` naming the id on duplicates.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")

    participants = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CdfParseError(f"invalid JSON ({exc.msg})", lineno) from exc
        record = _record_from_json(obj, lineno)
        if record.id in seen:
            raise CdfSemanticError(f"duplicate participant id: {record.id}")
        seen.add(record.id)
        participants.append(record)
    return CohortDataset(participants=participants)


def load_cdf(path) -> CohortDataset:
    with open(path, "rb") as fh:
        return parse_cdf(fh)


def record_to_json_obj(p: ParticipantRecord) -> dict:
    values: dict = {}
    for (var, wave), v in p.cells.items():
        values.setdefault(var, {})[wave] = scalar_to_json(v)
    return {"id": p.id, "values": values}


def serialize_cdf(dataset: CohortDataset) -> str:
    """Canonical form: participants sorted by id, keys lexicographic, one line each."""
    lines = []
    for p in sorted(dataset.participants, key=lambda r: r.id):
        obj = record_to_json_obj(p)
        lines.append(json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":")))
    return "".join(line + "\n" for line in lines)


def save_cdf(dataset: CohortDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_cdf(dataset))


def _parse_csv_cell(text: str) -> Value:
    if text == "":
        return MISSING
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if _is_valid_date_text(text):
        return IsoDate.parse(text)
    return text


def from_wave_files(files: Iterable) -> CohortDataset:
    """Merge per-wave CSV tables (``(wave id, byte/text stream)`` pairs) into one dataset.

    Each table needs a leading ``id`` column; remaining headers are variable
    names. Conflicting values for the same (id, variable, wave) across files
    raise ``WaveFileError`` naming the triple.
    """
    records: dict = {}
    order: list = []
    waves = []
    for wave, stream in files:
        waves.append(wave)
        data = stream.read() if hasattr(stream, "read") else stream
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        reader = csv.reader(io.StringIO(data))
        try:
            header = next(reader)
        except StopIteration:
            raise WaveFileError(f"wave {wave!r}: empty file, header row required")
        if not header or header[0] != "id":
            raise WaveFileError(f"wave {wave!r}: first column must be 'id'")
        variables = header[1:]
        for row in reader:
            if not row:
                continue
            pid = row[0]
            if pid not in records:
                records[pid] = {}
                order.append(pid)
            cells = records[pid]
            for var, raw in zip(variables, row[1:]):
                v = _parse_csv_cell(raw)
                key = (var, wave)
                if key in cells and cells[key] != v:
                    raise WaveFileError(
                        f"conflicting value for ({pid}, {var}, {wave}): "
                        f"{cells[key]!r} vs {v!r}"
                    )
                cells[key] = v
    participants = [ParticipantRecord(id=pid, cells=records[pid]) for pid in order]
    return CohortDataset(participants=participants, wave_order=sorted(set(waves)))
