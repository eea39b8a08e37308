"""Canonical health-record resources and their conformance checks.

A minimal profile schema stands in for the full exchange-profile catalogs:
it constrains required fields, cardinalities, value types, the unit each
quantity must carry, and the code set each coded field may use. Bundles are
built per participant from the pairing-rule catalog and validated before they
leave the harmonization batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .cdf import IsoDate
from .pairing import MappedValue, RuleCatalog

RESOURCE_TYPES = ("Patient", "Observation", "Condition")


class ProfileConfigError(Exception):
    """Rule catalog and schema disagree; raised before any data is processed."""


@dataclass(frozen=True)
class Quantity:
    value: float
    unit: str


@dataclass(frozen=True)
class Coded:
    system: str
    code: str


@dataclass
class Resource:
    """One typed record: Patient, Observation, or Condition."""

    resource_type: str
    id: str
    body: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.resource_type or not self.id:
            raise ValueError("resource_type and id must be non-empty")


@dataclass
class ResourceBundle:
    """All resources generated for one subject."""

    subject_id: str
    resources: list = field(default_factory=list)

    def of_type(self, resource_type: str) -> list:
        return [r for r in self.resources if r.resource_type == resource_type]


def _node_to_json(node):
    if isinstance(node, Quantity):
        return {"value": node.value, "unit": node.unit}
    if isinstance(node, Coded):
        return {"system": node.system, "code": node.code}
    if isinstance(node, IsoDate):
        return str(node)
    if isinstance(node, dict):
        return {k: _node_to_json(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_node_to_json(v) for v in node]
    return node


def bundle_to_json_obj(bundle: ResourceBundle) -> dict:
    return {
        "subject": bundle.subject_id,
        "resources": [
            {"resourceType": r.resource_type, "id": r.id, **_node_to_json(r.body)}
            for r in bundle.resources
        ],
    }


def serialize_bundle(bundle: ResourceBundle) -> str:
    return json.dumps(bundle_to_json_obj(bundle), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _node_from_json(key, raw):
    if isinstance(raw, dict):
        if set(raw) == {"value", "unit"}:
            return Quantity(value=raw["value"], unit=raw["unit"])
        if set(raw) == {"system", "code"}:
            return Coded(system=raw["system"], code=raw["code"])
        return {k: _node_from_json(k, v) for k, v in raw.items()}
    if isinstance(raw, list):
        return [_node_from_json(key, v) for v in raw]
    if isinstance(raw, str):
        try:
            return IsoDate.parse(raw)
        except ValueError:
            return raw
    return raw


def bundle_from_json_obj(obj: dict) -> ResourceBundle:
    resources = []
    for r in obj.get("resources", []):
        body = {
            k: _node_from_json(k, v)
            for k, v in r.items()
            if k not in ("resourceType", "id")
        }
        resources.append(Resource(resource_type=r["resourceType"], id=r["id"], body=body))
    return ResourceBundle(subject_id=obj["subject"], resources=resources)


def load_bundles(path) -> list:
    bundles = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                bundles.append(bundle_from_json_obj(json.loads(line)))
    return bundles


def save_bundles(bundles, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for bundle in bundles:
            fh.write(serialize_bundle(bundle) + "\n")


# -- profile schema -----------------------------------------------------------


@dataclass(frozen=True)
class FieldSpec:
    type: str  # "code" | "date" | "quantity" | "reference" | "text" | "decimal"
    min: int = 0
    max: int = 1
    system: Optional[str] = None  # for code fields: key into code_systems


@dataclass
class ProfileSchema:
    """Conformance rules per resource type.

    ``value_by_code`` refines the polymorphic Observation ``value`` field:
    keyed by the observation kind, each entry demands either a quantity with a
    specific unit or a coded value from a named code system.
    """

    code_systems: dict
    resources: dict  # resource_type -> {"fields": {name: FieldSpec}, "value_by_code": {...}}

    @classmethod
    def from_json_obj(cls, obj) -> "ProfileSchema":
        resources = {}
        for rtype, spec in obj["resources"].items():
            fields = {
                name: FieldSpec(
                    type=f["type"],
                    min=f.get("card", [0, 1])[0],
                    max=f.get("card", [0, 1])[1],
                    system=f.get("system"),
                )
                for name, f in spec["fields"].items()
            }
            resources[rtype] = {
                "fields": fields,
                "value_by_code": spec.get("value_by_code", {}),
            }
        return cls(code_systems=obj["code_systems"], resources=resources)

    @classmethod
    def load(cls, path) -> "ProfileSchema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_obj(json.load(fh))

    def fields_for(self, resource_type: str) -> dict:
        return self.resources[resource_type]["fields"]

    def value_constraint(self, resource_type: str, code: str) -> Optional[dict]:
        return self.resources[resource_type].get("value_by_code", {}).get(code)

    def codes_in(self, system: str) -> list:
        return self.code_systems.get(system, [])


@dataclass(frozen=True)
class Violation:
    """One conformance failure: where it is and which rule it breaks."""

    resource_id: str
    path: str
    rule: str  # missing-required | cardinality | type | unit | code
    message: str


# -- building -----------------------------------------------------------------


def _parse_target(target: Tuple[str, str]):
    selector, field_path = target
    if "/" in selector:
        rtype, kind = selector.split("/", 1)
    else:
        rtype, kind = selector, None
    return rtype, kind, field_path


def check_catalog_against_schema(catalog: RuleCatalog, schema: ProfileSchema) -> None:
    """Fail fast when any rule targets a field the schema does not define."""
    for rule in catalog:
        rtype, kind, field_path = _parse_target(rule.output_target)
        if rtype not in schema.resources:
            raise ProfileConfigError(f"rule {rule.name!r} targets unknown resource type {rtype!r}")
        if field_path not in schema.fields_for(rtype):
            raise ProfileConfigError(
                f"rule {rule.name!r} targets unknown field {rtype}.{field_path}"
            )
        if kind is not None:
            spec = schema.fields_for(rtype).get("code")
            allowed = schema.codes_in(spec.system) if spec and spec.system else []
            if kind not in allowed:
                raise ProfileConfigError(
                    f"rule {rule.name!r} targets {rtype} kind {kind!r} outside the profile code set"
                )


_TYPE_RANK = {"Patient": 0, "Observation": 1, "Condition": 2}


def build_bundle(p, catalog: RuleCatalog, schema: ProfileSchema) -> ResourceBundle:
    """Evaluate every rule for one participant and assemble its bundle.

    Rules returning None contribute nothing; a keyed resource that gathers no
    fields is not emitted. Output order is deterministic: Patient, then
    Observations and Conditions sorted by kind.
    """
    check_catalog_against_schema(catalog, schema)
    patient_body: dict = {}
    keyed: dict = {}  # (rtype, kind) -> body
    for rule in catalog:
        mapped = rule.evaluator(p)
        if mapped is None:
            continue
        rtype, kind, field_path = _parse_target(rule.output_target)
        if rtype == "Patient":
            patient_body[field_path] = _field_node(mapped)
        else:
            body = keyed.setdefault((rtype, kind), {})
            body[field_path] = _field_node(mapped)

    resources = [Resource("Patient", p.id, patient_body)]
    for (rtype, kind) in sorted(keyed, key=lambda k: (_TYPE_RANK[k[0]], k[1])):
        body = keyed[(rtype, kind)]
        body.setdefault("code", Coded(system=_system_for(schema, rtype), code=kind))
        body["subject"] = p.id
        resources.append(Resource(rtype, f"{p.id}-{kind}", body))
    return ResourceBundle(subject_id=p.id, resources=resources)


def _system_for(schema: ProfileSchema, rtype: str) -> str:
    spec = schema.fields_for(rtype).get("code")
    return spec.system if spec else ""


def _field_node(mapped: MappedValue):
    if mapped.code is not None:
        return Coded(system=mapped.code[0], code=mapped.code[1])
    if mapped.unit is not None:
        return Quantity(value=mapped.value, unit=mapped.unit)
    return mapped.value


# -- validation -----------------------------------------------------------------


def _type_ok(node, expected: str) -> bool:
    if expected == "date":
        return isinstance(node, IsoDate)
    if expected == "quantity":
        return isinstance(node, Quantity)
    if expected == "code":
        return isinstance(node, Coded)
    if expected == "reference" or expected == "text":
        return isinstance(node, str)
    if expected == "decimal":
        return isinstance(node, (int, float)) and not isinstance(node, bool)
    return False


def validate(bundle: ResourceBundle, schema: ProfileSchema) -> list:
    """All conformance violations in the bundle; empty means conforming."""
    violations = []
    patients = bundle.of_type("Patient")
    if len(patients) != 1:
        violations.append(
            Violation(
                resource_id=bundle.subject_id,
                path="Patient",
                rule="cardinality",
                message=f"bundle must contain exactly one Patient, found {len(patients)}",
            )
        )
    for resource in bundle.resources:
        violations.extend(_validate_resource(resource, bundle.subject_id, schema))
    return violations


def _validate_resource(resource: Resource, subject_id: str, schema: ProfileSchema) -> list:
    out = []
    if resource.resource_type not in schema.resources:
        return [
            Violation(resource.id, resource.resource_type, "type", "unknown resource type")
        ]
    fields = schema.fields_for(resource.resource_type)
    for name, spec in fields.items():
        present = resource.body.get(name)
        count = len(present) if isinstance(present, list) else (0 if present is None else 1)
        if count < spec.min:
            out.append(
                Violation(resource.id, f"{resource.resource_type}.{name}", "missing-required",
                          f"field requires at least {spec.min} value(s), found {count}")
            )
            continue
        if count > spec.max:
            out.append(
                Violation(resource.id, f"{resource.resource_type}.{name}", "cardinality",
                          f"field allows at most {spec.max} value(s), found {count}")
            )
            continue
        if count == 0:
            continue
        nodes = present if isinstance(present, list) else [present]
        for node in nodes:
            out.extend(_validate_node(resource, name, node, spec, schema, subject_id))
    for name in resource.body:
        if name not in fields:
            out.append(
                Violation(resource.id, f"{resource.resource_type}.{name}", "type",
                          "field not defined by the profile")
            )
    return out


def _validate_node(resource, name, node, spec: FieldSpec, schema: ProfileSchema, subject_id) -> list:
    path = f"{resource.resource_type}.{name}"
    if spec.type == "quantity-or-code":
        return _validate_observation_value(resource, name, node, schema)
    if not _type_ok(node, spec.type):
        return [Violation(resource.id, path, "type", f"expected {spec.type}, got {type(node).__name__}")]
    if spec.type == "reference" and node != subject_id:
        return [Violation(resource.id, path, "type", f"must reference bundle subject {subject_id!r}")]
    if spec.type == "code":
        allowed = schema.codes_in(spec.system)
        if node.system != spec.system or node.code not in allowed:
            return [Violation(resource.id, path, "code",
                              f"({node.system}, {node.code}) not in system {spec.system!r}")]
    return []


def _validate_observation_value(resource, name, node, schema: ProfileSchema) -> list:
    path = f"{resource.resource_type}.{name}"
    code_node = resource.body.get("code")
    if not isinstance(code_node, Coded):
        # the missing/invalid code is reported by its own field check
        return []
    constraint = schema.value_constraint(resource.resource_type, code_node.code)
    if constraint is None:
        # an out-of-system code is already reported at the code field itself
        return []
    if constraint["type"] == "quantity":
        if not isinstance(node, Quantity):
            return [Violation(resource.id, path, "type", f"expected quantity, got {type(node).__name__}")]
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            return [Violation(resource.id, path, "type", "quantity value must be numeric")]
        if node.unit != constraint["unit"]:
            return [Violation(resource.id, path, "unit",
                              f"expected unit {constraint['unit']!r}, got {node.unit!r}")]
        return []
    if constraint["type"] == "code":
        if not isinstance(node, Coded):
            return [Violation(resource.id, path, "type", f"expected coded value, got {type(node).__name__}")]
        allowed = schema.codes_in(constraint["system"])
        if node.system != constraint["system"] or node.code not in allowed:
            return [Violation(resource.id, path, "code",
                              f"({node.system}, {node.code}) not in system {constraint['system']!r}")]
        return []
    return [Violation(resource.id, path, "type", f"unknown constraint type {constraint['type']!r}")]
