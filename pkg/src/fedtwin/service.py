"""Model packaging and the what-if risk service.

A package is self-describing: architecture and weights, one input descriptor
per model column (name, path-expression text, encoding, unit, guard range,
training median), global normalization bounds, and a baseline cumulative
hazard table. Inference evaluates the package's own expressions against a
patient bundle, so training and prediction cannot drift apart.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .cdf import IsoDate
from .fhirpath import eval_path, parse_path
from .preprocess import NormalizationBounds
from .projection import ColumnSpec, FlatTable, ProjectionSpec, years_between
from .profiles import ResourceBundle, bundle_from_json_obj
from .survival import ModelWeights, forward

PACKAGE_FORMAT = "fedtwin-model/1"

#: Physiological plausibility limits for override values, per input name.
GUARD_RANGES: Dict[str, Tuple[float, float]] = {
    "age": (18.0, 100.0),
    "systolic_bp": (60.0, 260.0),
    "diastolic_bp": (30.0, 160.0),
    "hdl_cholesterol": (0.1, 5.0),
    "ldl_cholesterol": (0.1, 10.0),
    "total_cholesterol": (1.0, 15.0),
    "hba1c": (10.0, 150.0),
    "creatinine": (20.0, 400.0),
    "egfr": (1.0, 200.0),
    "albumin": (10.0, 70.0),
    "smoking_quantity": (0.0, 100.0),
}

DEFAULT_UNITS: Dict[str, str] = {
    "systolic_bp": "mmHg",
    "diastolic_bp": "mmHg",
    "hdl_cholesterol": "mmol/L",
    "ldl_cholesterol": "mmol/L",
    "total_cholesterol": "mmol/L",
    "hba1c": "mmol/mol",
    "creatinine": "umol/L",
    "egfr": "mL/min/1.73m2",
    "albumin": "g/L",
    "age": "years",
    "smoking_quantity": "count",
}


class ExportError(Exception):
    pass


class InputError(Exception):
    """The patient bundle cannot feed the model (e.g. no Patient resource)."""


class RequestError(Exception):
    """A malformed scenario request: unknown override or out-of-guard value."""


@dataclass(frozen=True)
class InputDescriptor:
    name: str
    expression: str
    convert: str = "number"
    encoding: Optional[dict] = None
    unit: Optional[str] = None
    guard_range: Optional[Tuple[float, float]] = None
    median: float = 0.0
    missing_as: Optional[float] = None  # declared encoding of absence, not imputation

    def to_json_obj(self):
        return {
            "name": self.name,
            "expression": self.expression,
            "convert": self.convert,
            "encoding": self.encoding,
            "unit": self.unit,
            "guard_range": list(self.guard_range) if self.guard_range else None,
            "median": self.median,
            "missing_as": self.missing_as,
        }

    @classmethod
    def from_json_obj(cls, obj):
        guard = obj.get("guard_range")
        missing_as = obj.get("missing_as")
        return cls(
            name=obj["name"],
            expression=obj["expression"],
            convert=obj.get("convert", "number"),
            encoding=obj.get("encoding"),
            unit=obj.get("unit"),
            guard_range=tuple(guard) if guard else None,
            median=float(obj.get("median", 0.0)),
            missing_as=None if missing_as is None else float(missing_as),
        )


@dataclass
class ModelPackage:
    name: str
    version: str
    weights: ModelWeights
    inputs: List[InputDescriptor]
    bounds: NormalizationBounds
    baseline_hazard: List[Tuple[float, float]]  # (years, cumulative hazard)
    baseline_expr: str
    horizon_years: float = 10.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.weights.input_dim
        if len(self.inputs) != p:
            raise ExportError(f"{len(self.inputs)} descriptors for a {p}-input model")
        if len(self.bounds) != p:
            raise ExportError(f"bounds length {len(self.bounds)} != input dimension {p}")
        for descriptor in self.inputs:
            parse_path(descriptor.expression)  # must be parseable metadata
        hazards = [h for _, h in self.baseline_hazard]
        if any(b < a for a, b in zip(hazards, hazards[1:])):
            raise ExportError("baseline cumulative hazard must be non-decreasing")

    @property
    def architecture(self) -> list:
        return self.weights.architecture

    def hazard_at(self, t: float) -> float:
        value = 0.0
        for knot, h in self.baseline_hazard:
            if knot <= t:
                value = h
        return value

    def to_json_obj(self) -> dict:
        return {
            "format": PACKAGE_FORMAT,
            "name": self.name,
            "version": self.version,
            "architecture": self.architecture,
            "weights": self.weights.to_json_obj(),
            "inputs": [d.to_json_obj() for d in self.inputs],
            "bounds": self.bounds.to_json_obj(),
            "baseline_hazard": [[t, h] for t, h in self.baseline_hazard],
            "baseline_expr": self.baseline_expr,
            "horizon_years": self.horizon_years,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json_obj(cls, obj) -> "ModelPackage":
        if obj.get("format") != PACKAGE_FORMAT:
            raise ExportError(f"unsupported package format {obj.get('format')!r}")
        return cls(
            name=obj["name"],
            version=obj["version"],
            weights=ModelWeights.from_json_obj(obj["weights"]),
            inputs=[InputDescriptor.from_json_obj(d) for d in obj["inputs"]],
            bounds=NormalizationBounds.from_json_obj(obj["bounds"]),
            baseline_hazard=[(float(t), float(h)) for t, h in obj["baseline_hazard"]],
            baseline_expr=obj["baseline_expr"],
            horizon_years=float(obj.get("horizon_years", 10.0)),
            provenance=obj.get("provenance", {}),
        )


def breslow_baseline_hazard(eta, time, event, knots) -> List[Tuple[float, float]]:
    """Cumulative baseline hazard at the given time knots.

    H0(t) = sum over distinct event times s <= t of d(s) / sum_{j: t_j >= s}
    exp(eta_j), the standard nonparametric estimate on the calibration data.
    """
    eta = np.asarray(eta, dtype=float)
    t = np.asarray(time, dtype=float)
    e = np.asarray(event, dtype=bool)
    order = np.argsort(t, kind="stable")
    t_sorted, e_sorted, eta_sorted = t[order], e[order], eta[order]
    m = float(eta_sorted.max()) if len(eta_sorted) else 0.0
    exp_shift = np.exp(eta_sorted - m)
    suffix = np.cumsum(exp_shift[::-1])[::-1]
    group_start = np.searchsorted(t_sorted, t_sorted, side="left")

    event_times = t_sorted[e_sorted]
    distinct, counts = np.unique(event_times, return_counts=True)
    increments = []
    for s, d in zip(distinct, counts):
        i = int(np.searchsorted(t_sorted, s, side="left"))
        denom = suffix[group_start[i]] * np.exp(m)
        increments.append((float(s), float(d / denom)))
    out = []
    for knot in knots:
        h = sum(inc for s, inc in increments if s <= knot)
        out.append((float(knot), float(h)))
    return out


def _guard_for(col: ColumnSpec, bounds: NormalizationBounds, j: int):
    if col.encoding is not None:
        values = sorted(float(v) for v in col.encoding.values())
        if col.missing_as is not None:
            values.append(float(col.missing_as))
        return (min(values), max(values))
    if col.name in GUARD_RANGES:
        return GUARD_RANGES[col.name]
    lo, hi = bounds.minima[j], bounds.maxima[j]
    span = (hi - lo) or 1.0
    return (lo - 0.25 * span, hi + 0.25 * span)


def export_model(
    weights: ModelWeights,
    spec: ProjectionSpec,
    bounds: NormalizationBounds,
    calibration: FlatTable,
    name: str = "cvd-10y-composite",
    version: str = "0.1.0",
    provenance: Optional[dict] = None,
) -> bytes:
    """Serialize a self-describing package; byte-identical for identical inputs.

    The calibration table (raw-scale, complete) supplies training medians and
    the Breslow baseline hazard evaluated with this package's normalization.
    """
    if len(spec.columns) != weights.input_dim:
        raise ExportError(
            f"projection has {len(spec.columns)} columns, model expects {weights.input_dim}"
        )
    if len(bounds) != weights.input_dim:
        raise ExportError(f"bounds length {len(bounds)} != input dimension {weights.input_dim}")
    if any(v is None for row in calibration.rows for v in row):
        raise ExportError("calibration table must be complete (impute first)")
    X_raw = np.array(calibration.rows, dtype=float)
    lo = np.array(bounds.minima)
    hi = np.array(bounds.maxima)
    span = np.where(hi - lo == 0.0, 1.0, hi - lo)
    X = (X_raw - lo) / span
    X[:, hi - lo == 0.0] = 0.0
    eta = forward(weights, X, mode="infer")
    knots = [float(k) for k in range(0, int(spec.outcome.horizon_years) + 1)]
    hazard = breslow_baseline_hazard(eta, calibration.time, calibration.event, knots)

    descriptors = []
    for j, col in enumerate(spec.columns):
        descriptors.append(
            InputDescriptor(
                name=col.name,
                expression=str(col.expr),
                convert=col.convert,
                encoding=col.encoding,
                unit=DEFAULT_UNITS.get(col.name),
                guard_range=_guard_for(col, bounds, j),
                median=float(np.median(X_raw[:, j])),
                missing_as=None if col.missing_as is None else float(col.missing_as),
            )
        )
    package = ModelPackage(
        name=name,
        version=version,
        weights=weights,
        inputs=descriptors,
        bounds=bounds,
        baseline_hazard=hazard,
        baseline_expr=str(spec.outcome.baseline_expr),
        horizon_years=spec.outcome.horizon_years,
        provenance=dict(provenance or {}),
    )
    return json.dumps(package.to_json_obj(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def load_model(data: bytes) -> ModelPackage:
    return ModelPackage.from_json_obj(json.loads(data.decode("utf-8")))


def load_model_file(path) -> ModelPackage:
    with open(path, "rb") as fh:
        return load_model(fh.read())


# -- prediction -----------------------------------------------------------------


@dataclass
class ScenarioRequest:
    bundle: ResourceBundle
    overrides: Dict[str, object] = field(default_factory=dict)


@dataclass
class RiskReport:
    baseline_risk: float
    scenario_risk: Optional[float]
    eta: float
    imputed_inputs: List[str]
    model_version: str

    def to_json_obj(self):
        return {
            "baseline_risk": self.baseline_risk,
            "scenario_risk": self.scenario_risk,
            "eta": self.eta,
            "imputed_inputs": self.imputed_inputs,
            "model_version": self.model_version,
        }


def _raw_cell(descriptor: InputDescriptor, bundle: ResourceBundle, baseline: Optional[IsoDate]):
    """First expression match converted to the descriptor's numeric scale."""
    matches = eval_path(parse_path(descriptor.expression), bundle)
    if not matches:
        return None
    raw = matches[0]
    return _convert_raw(descriptor, raw, baseline)


def _convert_raw(descriptor: InputDescriptor, raw, baseline: Optional[IsoDate]):
    if descriptor.convert == "code":
        key = raw if isinstance(raw, str) else str(raw)
        if descriptor.encoding and key in descriptor.encoding:
            return float(descriptor.encoding[key])
        return None
    if descriptor.convert == "age_at_baseline":
        if isinstance(raw, IsoDate) and baseline is not None:
            return float(int(years_between(raw, baseline)))
        return None
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        return None
    return float(raw)


def _apply_override(descriptor: InputDescriptor, value) -> float:
    if descriptor.encoding is not None:
        if isinstance(value, str):
            if value not in descriptor.encoding:
                raise RequestError(
                    f"override {descriptor.name!r}: {value!r} is not one of "
                    f"{sorted(descriptor.encoding)}"
                )
            return float(descriptor.encoding[value])
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            allowed = {float(v) for v in descriptor.encoding.values()}
            if float(value) not in allowed:
                raise RequestError(
                    f"override {descriptor.name!r}: {value} is not an encoded level "
                    f"of {sorted(allowed)}"
                )
            return float(value)
        raise RequestError(f"override {descriptor.name!r}: unsupported value {value!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RequestError(f"override {descriptor.name!r}: expected a number, got {value!r}")
    value = float(value)
    if descriptor.guard_range is not None:
        lo, hi = descriptor.guard_range
        if not lo <= value <= hi:
            raise RequestError(
                f"override {descriptor.name!r}: {value} outside plausible range [{lo}, {hi}]"
            )
    return value


def _assemble(pkg: ModelPackage, bundle: ResourceBundle, overrides: Dict[str, object]):
    """(normalized input vector, imputed input names) for one scenario."""
    baselines = eval_path(parse_path(pkg.baseline_expr), bundle)
    baseline = baselines[0] if baselines and isinstance(baselines[0], IsoDate) else None
    raw = np.zeros(len(pkg.inputs))
    imputed = []
    for j, descriptor in enumerate(pkg.inputs):
        if descriptor.name in overrides:
            raw[j] = _apply_override(descriptor, overrides[descriptor.name])
            continue
        cell = _raw_cell(descriptor, bundle, baseline)
        if cell is not None:
            raw[j] = cell
        elif descriptor.missing_as is not None:
            # absence has a declared meaning (e.g. no condition on record = 0)
            raw[j] = descriptor.missing_as
        else:
            raw[j] = descriptor.median
            imputed.append(descriptor.name)
    normalized = np.array([pkg.bounds.apply_value(j, raw[j]) for j in range(len(raw))])
    return normalized, imputed


def risk_from_eta(pkg: ModelPackage, eta: float) -> float:
    """Absolute risk over the package horizon: 1 - exp(-H0 * exp(eta))."""
    h0 = pkg.hazard_at(pkg.horizon_years)
    return float(1.0 - np.exp(-h0 * np.exp(eta)))


def normalized_row(pkg: ModelPackage, row) -> np.ndarray:
    """Package preprocessing for an already-flattened row (raw scale)."""
    values = np.array(
        [pkg.inputs[j].median if v is None else float(v) for j, v in enumerate(row)]
    )
    return np.array([pkg.bounds.apply_value(j, values[j]) for j in range(len(values))])


def predict(pkg: ModelPackage, req: ScenarioRequest) -> RiskReport:
    """Baseline risk from the bundle, plus scenario risk when overrides exist."""
    if not req.bundle.of_type("Patient"):
        raise InputError("bundle has no Patient resource")
    known = {d.name for d in pkg.inputs}
    for key in req.overrides:
        if key not in known:
            raise RequestError(f"unknown override input {key!r}")

    x_base, imputed = _assemble(pkg, req.bundle, {})
    eta_base = float(forward(pkg.weights, x_base, mode="infer"))
    baseline_risk = risk_from_eta(pkg, eta_base)

    if req.overrides:
        x_scen, _ = _assemble(pkg, req.bundle, req.overrides)
        eta_scen = float(forward(pkg.weights, x_scen, mode="infer"))
        scenario_risk = risk_from_eta(pkg, eta_scen)
        eta = eta_scen
    else:
        scenario_risk = None
        eta = eta_base
    return RiskReport(
        baseline_risk=baseline_risk,
        scenario_risk=scenario_risk,
        eta=eta,
        imputed_inputs=imputed,
        model_version=pkg.version,
    )


# -- HTTP surface ------------------------------------------------------------------


def create_app(pkg: ModelPackage):
    """FastAPI app exposing metadata, prediction, and health endpoints."""
    from fastapi import FastAPI
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse

    app = FastAPI(title=pkg.name, version=pkg.version)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["GET", "POST"],
        allow_headers=["*"],
    )

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/model/metadata")
    def metadata():
        return {
            "name": pkg.name,
            "version": pkg.version,
            "architecture": pkg.architecture,
            "horizon_years": pkg.horizon_years,
            "inputs": [d.to_json_obj() for d in pkg.inputs],
        }

    @app.post("/predict")
    def predict_endpoint(body: dict):
        if "bundle" not in body:
            return JSONResponse(status_code=400, content={"error": "missing 'bundle'"})
        try:
            bundle = bundle_from_json_obj(body["bundle"])
        except (KeyError, TypeError, ValueError) as exc:
            return JSONResponse(status_code=400, content={"error": f"bad bundle: {exc}"})
        req = ScenarioRequest(bundle=bundle, overrides=body.get("overrides") or {})
        try:
            report = predict(pkg, req)
        except RequestError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        except InputError as exc:
            return JSONResponse(status_code=422, content={"error": str(exc)})
        return report.to_json_obj()

    return app


def serve(package_path, host: str = "127.0.0.1", port: int = 8000):
    """Run the service until interrupted. Stateless: no request is stored."""
    import uvicorn

    pkg = load_model_file(package_path)
    uvicorn.run(create_app(pkg), host=host, port=port, log_level="info")
