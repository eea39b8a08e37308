"""Pairing rules: executable mappings from cohort (CDF) values to canonical
health-record fields, plus the golden-test harness used to develop them
test-first.

Every evaluator is pure and total: when its inputs are undefined it returns
None rather than raising, so a batch run never aborts on sparse records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date as _date, timedelta
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple

from .cdf import IsoDate, ParticipantRecord, parse_scalar

GENDER_SYSTEM = "urn:fedtwin:gender"
OBSERVATION_SYSTEM = "urn:fedtwin:observation"
CONDITION_SYSTEM = "urn:fedtwin:condition"
SMOKING_SYSTEM = "urn:fedtwin:smoking"

#: Chronological assessment waves. The follow-up scan order is configuration:
#: rule configs default to this chronological order.
DEFAULT_WAVE_ORDER = ["1A", "1B", "1C", "2A", "2B", "3A", "3B"]

UMOL_PER_MGDL_CREATININE = 88.42


class RuleError(Exception):
    """Rule catalog misuse: unknown rule name or bad registration."""


@dataclass(frozen=True)
class MappedValue:
    """A canonical-field value produced by a rule: scalar plus optional unit/code."""

    value: object = None
    unit: Optional[str] = None
    code: Optional[Tuple[str, str]] = None

    def to_json_obj(self):
        from .cdf import scalar_to_json

        obj = {}
        if self.value is not None:
            obj["value"] = scalar_to_json(self.value)
        if self.unit is not None:
            obj["unit"] = self.unit
        if self.code is not None:
            obj["code"] = list(self.code)
        return obj

    @classmethod
    def from_json_obj(cls, obj) -> "MappedValue":
        value = obj.get("value")
        if isinstance(value, str):
            value = parse_scalar(value)
        code = obj.get("code")
        return cls(value=value, unit=obj.get("unit"), code=tuple(code) if code else None)


@dataclass(frozen=True)
class PairingRule:
    """Named mapping from a participant record to one canonical field.

    ``output_target`` is ``(resource selector, field path)`` where the selector
    is either a bare resource type ("Patient") or type/kind ("Observation/egfr").
    The evaluator must be deterministic, side-effect free, and return None when
    its inputs are undefined.
    """

    name: str
    output_target: Tuple[str, str]
    evaluator: Callable[[ParticipantRecord], Optional[MappedValue]]


class RuleCatalog:
    """Immutable-after-registration set of pairing rules."""

    def __init__(self, rules: Sequence[PairingRule] = ()):
        self._rules: dict = {}
        for rule in rules:
            self.register(rule)

    def register(self, rule: PairingRule) -> None:
        if rule.name in self._rules:
            raise RuleError(f"rule already registered: {rule.name}")
        self._rules[rule.name] = rule

    def __contains__(self, name: str) -> bool:
        return name in self._rules

    def __iter__(self):
        return iter(self._rules.values())

    def __len__(self):
        return len(self._rules)

    def get(self, name: str) -> PairingRule:
        if name not in self._rules:
            raise RuleError(f"unknown rule: {name}")
        return self._rules[name]


def evaluate_rule(catalog: RuleCatalog, name: str, p: ParticipantRecord) -> Optional[MappedValue]:
    """Dispatch through the catalog; raises RuleError for unknown names."""
    return catalog.get(name).evaluator(p)


# -- date helpers ----------------------------------------------------------


def mean_date(a, b):
    """Calendar midpoint of [a, b] on day counts, rounded down to a whole day.

    Accepts IsoDate (coerced via as_date) or datetime.date; returns
    datetime.date. a must not be after b.
    """
    da = a.as_date() if isinstance(a, IsoDate) else a
    db = b.as_date() if isinstance(b, IsoDate) else b
    if da > db:
        raise ValueError(f"mean_date requires a <= b, got {da} > {db}")
    return da + timedelta(days=(db - da).days // 2)


def report_interval(flags: Sequence, dates: Sequence, *, positive="yes", negative="no"):
    """Locate the interval bracketing the first positive follow-up report.

    Returns (date of the assessment immediately before the first positive
    report, date of that positive report), or None. The pre-positive history
    must be fully observed: every earlier assessment needs an explicit
    negative flag and a defined date, otherwise no interval is fabricated.
    """
    if len(flags) != len(dates):
        raise ValueError(f"flags and dates differ in length: {len(flags)} vs {len(dates)}")
    first_positive = None
    for i, flag in enumerate(flags):
        if flag == positive:
            first_positive = i
            break
    if first_positive is None or first_positive == 0:
        return None
    if dates[first_positive] is None:
        return None
    for j in range(first_positive):
        if flags[j] != negative or dates[j] is None:
            return None
    return (dates[first_positive - 1], dates[first_positive])


@dataclass(frozen=True)
class OnsetRuleConfig:
    """Variable wiring for condition-onset approximation.

    ``follow_up_waves`` is the ordered scan list; empty means the condition is
    only assessed as baseline history (no incident detection).
    """

    presence_variable: str
    start_age_variable: str
    follow_up_variable: str
    date_variable: str
    baseline_wave: str = "1A"
    age_variable: str = "AGE"
    follow_up_waves: Tuple[str, ...] = tuple(DEFAULT_WAVE_ORDER)
    positive_value: str = "yes"
    negative_value: str = "no"


def approximate_onset_date(p: ParticipantRecord, cfg: OnsetRuleConfig):
    """Approximate when a reported condition started.

    Baseline-prevalent branch: presence at the baseline wave is positive, and
    the onset year is reconstructed as
    ``year(baseline date) - age at baseline + reported start age`` (returned
    with year precision); undefined when either age is missing.

    Incident branch: scan the configured follow-up waves, bracket the first
    positive report between the last explicitly-negative dated assessment and
    the report date, and return the day-count midpoint as a full date.
    """
    if p.value(cfg.presence_variable, cfg.baseline_wave) == cfg.positive_value:
        baseline_date = p.value(cfg.date_variable, cfg.baseline_wave)
        age = p.value(cfg.age_variable, cfg.baseline_wave)
        start_age = p.value(cfg.start_age_variable, cfg.baseline_wave)
        if baseline_date is None or age is None or start_age is None:
            return None
        if not isinstance(baseline_date, IsoDate):
            return None
        return IsoDate(int(baseline_date.year - age + start_age))
    if not cfg.follow_up_waves:
        return None
    waves = list(cfg.follow_up_waves)
    flags = p.values(cfg.follow_up_variable, waves)
    dates = p.values(cfg.date_variable, waves)
    interval = report_interval(
        flags, dates, positive=cfg.positive_value, negative=cfg.negative_value
    )
    if interval is None:
        return None
    midpoint = mean_date(interval[0], interval[1])
    return IsoDate.from_date(midpoint)


# -- kidney function -------------------------------------------------------


def egfr_ckd_epi_2009(creatinine_umol_l: float, age_years: float, sex: str) -> float:
    """Estimated GFR (mL/min/1.73 m2) from the 2009 CKD-EPI creatinine equation.

    Serum creatinine arrives in umol/L (cohort convention) and is converted to
    mg/dL by dividing by 88.42. Sex-specific constants: kappa 0.7 / alpha
    -0.329 and a 1.018 multiplier for females; kappa 0.9 / alpha -0.411 for
    males. The race coefficient is omitted: the source cohorts carry no such
    variable.
    """
    if creatinine_umol_l <= 0:
        raise ValueError(f"creatinine must be positive, got {creatinine_umol_l}")
    if age_years <= 0:
        raise ValueError(f"age must be positive, got {age_years}")
    if sex not in ("male", "female"):
        raise ValueError(f"sex must be 'male' or 'female', got {sex!r}")
    scr = creatinine_umol_l / UMOL_PER_MGDL_CREATININE
    if sex == "female":
        kappa, alpha, sex_factor = 0.7, -0.329, 1.018
    else:
        kappa, alpha, sex_factor = 0.9, -0.411, 1.0
    ratio = scr / kappa
    return 141.0 * min(ratio, 1.0) ** alpha * max(ratio, 1.0) ** -1.209 * 0.993 ** age_years * sex_factor


# -- standard CVD rule catalog ----------------------------------------------

#: Observation kinds with their canonical units.
OBSERVATION_UNITS = {
    "systolic-bp": "mmHg",
    "diastolic-bp": "mmHg",
    "hdl-cholesterol": "mmol/L",
    "ldl-cholesterol": "mmol/L",
    "total-cholesterol": "mmol/L",
    "hba1c": "mmol/mol",
    "creatinine": "umol/L",
    "egfr": "mL/min/1.73m2",
    "albumin": "g/L",
    "smoking-quantity": "count",
}

#: CDF variable feeding each quantity observation.
_QUANTITY_VARIABLES = {
    "systolic-bp": "SBP",
    "diastolic-bp": "DBP",
    "hdl-cholesterol": "HDL",
    "ldl-cholesterol": "LDL",
    "total-cholesterol": "TCHOL",
    "hba1c": "HBA1C",
    "creatinine": "CREATININE",
    "albumin": "ALBUMIN",
    "smoking-quantity": "SMOKING_QUANTITY",
}

CONDITION_KINDS = ("stroke", "mi", "hf", "hypertension", "t2d")

#: Conditions assessed only as baseline history (predictors, not outcomes).
_BASELINE_ONLY_CONDITIONS = ("hypertension", "t2d")


def onset_config_for(kind: str, baseline_wave: str = "1A") -> OnsetRuleConfig:
    prefix = kind.upper()
    follow_up = () if kind in _BASELINE_ONLY_CONDITIONS else tuple(DEFAULT_WAVE_ORDER)
    return OnsetRuleConfig(
        presence_variable=f"{prefix}_PRESENCE",
        start_age_variable=f"{prefix}_STARTAGE",
        follow_up_variable=f"{prefix}_FOLLOWUP",
        date_variable="DATE",
        baseline_wave=baseline_wave,
        follow_up_waves=follow_up,
    )


def _quantity_rule(kind: str, variable: str, wave: str) -> PairingRule:
    unit = OBSERVATION_UNITS[kind]

    def evaluator(p: ParticipantRecord):
        v = p.value(variable, wave)
        if v is None or not isinstance(v, (int, float)):
            return None
        return MappedValue(value=float(v), unit=unit)

    return PairingRule(name=kind.replace("-", "_"), output_target=(f"Observation/{kind}", "value"), evaluator=evaluator)


def _sex_rule(wave: str) -> PairingRule:
    def evaluator(p: ParticipantRecord):
        v = p.value("GENDER", wave)
        if v not in ("male", "female"):
            return None
        return MappedValue(code=(GENDER_SYSTEM, v))

    return PairingRule(name="sex", output_target=("Patient", "sex"), evaluator=evaluator)


def _birth_date_rule(wave: str) -> PairingRule:
    def evaluator(p: ParticipantRecord):
        assessed = p.value("DATE", wave)
        age = p.value("AGE", wave)
        if not isinstance(assessed, IsoDate) or age is None:
            return None
        return MappedValue(value=IsoDate(int(assessed.year - age)))

    return PairingRule(name="birth_date", output_target=("Patient", "birthDate"), evaluator=evaluator)


def _baseline_date_rule(wave: str) -> PairingRule:
    def evaluator(p: ParticipantRecord):
        v = p.value("DATE", wave)
        if not isinstance(v, IsoDate):
            return None
        return MappedValue(value=v)

    return PairingRule(name="baseline_date", output_target=("Patient", "baselineDate"), evaluator=evaluator)


def _last_follow_up_rule() -> PairingRule:
    def evaluator(p: ParticipantRecord):
        last = None
        for wave in DEFAULT_WAVE_ORDER:
            v = p.value("DATE", wave)
            if isinstance(v, IsoDate):
                last = v
        if last is None:
            return None
        return MappedValue(value=last)

    return PairingRule(
        name="last_follow_up_date", output_target=("Patient", "lastFollowUpDate"), evaluator=evaluator
    )


def _smoking_status_rule(wave: str) -> PairingRule:
    def evaluator(p: ParticipantRecord):
        v = p.value("SMOKING_STATUS", wave)
        if v not in ("never", "ex", "current"):
            return None
        return MappedValue(code=(SMOKING_SYSTEM, v))

    return PairingRule(
        name="smoking_status", output_target=("Observation/smoking-status", "value"), evaluator=evaluator
    )


def _egfr_rule(wave: str) -> PairingRule:
    def evaluator(p: ParticipantRecord):
        creatinine = p.value("CREATININE", wave)
        age = p.value("AGE", wave)
        sex = p.value("GENDER", wave)
        if creatinine is None or age is None or sex not in ("male", "female"):
            return None
        if not isinstance(creatinine, (int, float)) or creatinine <= 0 or age <= 0:
            return None
        return MappedValue(value=egfr_ckd_epi_2009(float(creatinine), float(age), sex), unit=OBSERVATION_UNITS["egfr"])

    return PairingRule(name="egfr", output_target=("Observation/egfr", "value"), evaluator=evaluator)


def _condition_presence_rule(kind: str, cfg: OnsetRuleConfig) -> PairingRule:
    def evaluator(p: ParticipantRecord):
        if p.value(cfg.presence_variable, cfg.baseline_wave) == cfg.positive_value:
            return MappedValue(code=(CONDITION_SYSTEM, kind))
        for wave in cfg.follow_up_waves:
            if p.value(cfg.follow_up_variable, wave) == cfg.positive_value:
                return MappedValue(code=(CONDITION_SYSTEM, kind))
        return None

    return PairingRule(name=f"{kind}_presence", output_target=(f"Condition/{kind}", "code"), evaluator=evaluator)


def _condition_onset_rule(kind: str, cfg: OnsetRuleConfig) -> PairingRule:
    def evaluator(p: ParticipantRecord):
        onset = approximate_onset_date(p, cfg)
        if onset is None:
            return None
        return MappedValue(value=onset)

    return PairingRule(name=f"{kind}_onset", output_target=(f"Condition/{kind}", "onsetDate"), evaluator=evaluator)


def standard_rule_catalog(baseline_wave: str = "1A") -> RuleCatalog:
    """The CVD predictor + outcome catalog used by the harmonization batch."""
    rules = [
        _sex_rule(baseline_wave),
        _birth_date_rule(baseline_wave),
        _baseline_date_rule(baseline_wave),
        _last_follow_up_rule(),
        _smoking_status_rule(baseline_wave),
        _egfr_rule(baseline_wave),
    ]
    for kind, variable in _QUANTITY_VARIABLES.items():
        rules.append(_quantity_rule(kind, variable, baseline_wave))
    for kind in CONDITION_KINDS:
        cfg = onset_config_for(kind, baseline_wave)
        rules.append(_condition_presence_rule(kind, cfg))
        rules.append(_condition_onset_rule(kind, cfg))
    return RuleCatalog(rules)


# -- golden-test harness -----------------------------------------------------


@dataclass(frozen=True)
class RuleTestCase:
    """Self-contained fixture: rule name, partial participant record, expectation."""

    rule: str
    input: ParticipantRecord
    expected: Optional[MappedValue]
    label: str = ""

    @classmethod
    def from_json_obj(cls, obj) -> "RuleTestCase":
        cells = {}
        for var, wave_map in obj.get("input", {}).get("values", {}).items():
            for wave, raw in wave_map.items():
                cells[(var, wave)] = parse_scalar(raw)
        record = ParticipantRecord(id=obj.get("input", {}).get("id", "fixture"), cells=cells)
        expected = obj.get("expected")
        return cls(
            rule=obj["rule"],
            input=record,
            expected=MappedValue.from_json_obj(expected) if expected is not None else None,
            label=obj.get("label", ""),
        )


@dataclass
class CaseResult:
    rule: str
    label: str
    status: str  # "pass" | "fail" | "error"
    expected: Optional[MappedValue] = None
    actual: Optional[MappedValue] = None
    message: str = ""

    def diff(self) -> str:
        if self.status != "fail":
            return self.message
        parts = []
        exp = self.expected
        act = self.actual
        if (exp is None) != (act is None):
            parts.append(f"expected {exp}, got {act}")
        else:
            for fld in ("value", "unit", "code"):
                e, a = getattr(exp, fld), getattr(act, fld)
                if e != a:
                    parts.append(f"{fld}: expected {e!r}, got {a!r}")
        return "; ".join(parts)


@dataclass
class TestReport:
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.status == "pass" for r in self.results)

    @property
    def counts(self):
        from collections import Counter

        return Counter(r.status for r in self.results)

    def lines(self):
        for r in self.results:
            tag = {"pass": "PASS", "fail": "FAIL", "error": "ERROR"}[r.status]
            label = f" [{r.label}]" if r.label else ""
            detail = f" :: {r.diff()}" if r.status != "pass" else ""
            yield f"{tag} {r.rule}{label}{detail}"


def _values_equal(expected: Optional[MappedValue], actual: Optional[MappedValue]) -> bool:
    if expected is None or actual is None:
        return expected is None and actual is None
    if expected.unit != actual.unit or expected.code != actual.code:
        return False
    e, a = expected.value, actual.value
    if isinstance(e, float) and isinstance(a, (int, float)):
        return abs(e - a) <= 1e-9 * max(1.0, abs(e))
    return e == a


def run_rule_tests(catalog: RuleCatalog, suite: Sequence[RuleTestCase]) -> TestReport:
    """Execute every case; unknown rules report as erroring cases, never crash."""
    report = TestReport()
    for case in suite:
        if case.rule not in catalog:
            report.results.append(
                CaseResult(rule=case.rule, label=case.label, status="error", message="unknown rule")
            )
            continue
        actual = evaluate_rule(catalog, case.rule, case.input)
        if _values_equal(case.expected, actual):
            report.results.append(
                CaseResult(rule=case.rule, label=case.label, status="pass", expected=case.expected, actual=actual)
            )
        else:
            report.results.append(
                CaseResult(rule=case.rule, label=case.label, status="fail", expected=case.expected, actual=actual)
            )
    return report


def load_suite_file(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        cases = json.load(fh)
    return [RuleTestCase.from_json_obj(obj) for obj in cases]


def load_suite_dir(path) -> list:
    suite = []
    for file in sorted(Path(path).glob("*.json")):
        suite.extend(load_suite_file(file))
    return suite
