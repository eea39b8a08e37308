import copy

import pytest

from fedtwin.cdf import IsoDate, ParticipantRecord
from fedtwin.pairing import MappedValue, PairingRule, RuleCatalog, standard_rule_catalog
from fedtwin.profiles import (
    Coded,
    ProfileConfigError,
    Quantity,
    Resource,
    ResourceBundle,
    build_bundle,
    bundle_from_json_obj,
    bundle_to_json_obj,
    serialize_bundle,
    validate,
)


def minimal_participant(extra=None):
    cells = {
        ("GENDER", "1A"): "female",
        ("AGE", "1A"): 50,
        ("DATE", "1A"): IsoDate(2008, 3, 1),
    }
    cells.update(extra or {})
    return ParticipantRecord("P1", cells)


def full_participant():
    return minimal_participant(
        {
            ("SBP", "1A"): 125.0,
            ("DBP", "1A"): 78.0,
            ("HDL", "1A"): 1.5,
            ("LDL", "1A"): 3.2,
            ("TCHOL", "1A"): 5.1,
            ("HBA1C", "1A"): 36.0,
            ("CREATININE", "1A"): 76.0,
            ("ALBUMIN", "1A"): 45.0,
            ("SMOKING_STATUS", "1A"): "current",
            ("SMOKING_QUANTITY", "1A"): 12.0,
            ("STROKE_PRESENCE", "1A"): "no",
            ("STROKE_FOLLOWUP", "1A"): "no",
            ("STROKE_FOLLOWUP", "1B"): "yes",
            ("DATE", "1B"): IsoDate(2009, 9, 1),
            ("HYPERTENSION_PRESENCE", "1A"): "yes",
            ("HYPERTENSION_STARTAGE", "1A"): 45,
        }
    )


def test_minimal_bundle_is_single_patient(profile_schema):
    bundle = build_bundle(minimal_participant(), standard_rule_catalog(), profile_schema)
    assert len(bundle.of_type("Patient")) == 1
    assert bundle.of_type("Observation") == []
    assert bundle.of_type("Condition") == []
    patient = bundle.of_type("Patient")[0]
    assert patient.body["sex"] == Coded("urn:fedtwin:gender", "female")
    assert patient.body["birthDate"] == IsoDate(1958)


def test_blood_pressure_observation_carries_unit(profile_schema):
    p = minimal_participant({("SBP", "1A"): 125.0})
    bundle = build_bundle(p, standard_rule_catalog(), profile_schema)
    (obs,) = bundle.of_type("Observation")
    assert obs.body["code"] == Coded("urn:fedtwin:observation", "systolic-bp")
    assert obs.body["value"] == Quantity(125.0, "mmHg")
    assert obs.body["subject"] == "P1"


def test_condition_carries_onset_date(profile_schema):
    bundle = build_bundle(full_participant(), standard_rule_catalog(), profile_schema)
    by_code = {r.body["code"].code: r for r in bundle.of_type("Condition")}
    assert set(by_code) == {"stroke", "hypertension"}
    assert by_code["stroke"].body["onsetDate"].precision == "day"
    assert by_code["hypertension"].body["onsetDate"] == IsoDate(2003)  # 2008 - 50 + 45


def test_full_participant_bundle_validates(profile_schema):
    bundle = build_bundle(full_participant(), standard_rule_catalog(), profile_schema)
    assert validate(bundle, profile_schema) == []


def test_rule_targeting_unknown_field_fails_fast(profile_schema):
    catalog = standard_rule_catalog()
    catalog.register(
        PairingRule("bogus", ("Patient", "shoeSize"), lambda p: MappedValue(value=43))
    )
    with pytest.raises(ProfileConfigError, match="shoeSize"):
        build_bundle(minimal_participant(), catalog, profile_schema)


def test_rule_targeting_unknown_kind_fails_fast(profile_schema):
    catalog = RuleCatalog(
        [PairingRule("bogus", ("Observation/shoe-size", "value"), lambda p: None)]
    )
    with pytest.raises(ProfileConfigError, match="shoe-size"):
        build_bundle(minimal_participant(), catalog, profile_schema)


def test_build_is_deterministic(profile_schema):
    one = build_bundle(full_participant(), standard_rule_catalog(), profile_schema)
    two = build_bundle(full_participant(), standard_rule_catalog(), profile_schema)
    assert serialize_bundle(one) == serialize_bundle(two)


def test_bundle_json_round_trip(profile_schema):
    bundle = build_bundle(full_participant(), standard_rule_catalog(), profile_schema)
    back = bundle_from_json_obj(bundle_to_json_obj(bundle))
    assert serialize_bundle(back) == serialize_bundle(bundle)


# -- validate ------------------------------------------------------------------


def conforming_bundle(profile_schema):
    return build_bundle(full_participant(), standard_rule_catalog(), profile_schema)


def test_validate_conforming_bundle_is_empty(profile_schema):
    assert validate(conforming_bundle(profile_schema), profile_schema) == []


def test_missing_unit_is_single_unit_violation(profile_schema):
    bundle = conforming_bundle(profile_schema)
    obs = bundle.of_type("Observation")[0]
    obs.body["value"] = Quantity(obs.body["value"].value, "furlongs")
    violations = validate(bundle, profile_schema)
    assert len(violations) == 1
    assert violations[0].rule == "unit"
    assert violations[0].path == "Observation.value"


def test_missing_required_field_reported(profile_schema):
    bundle = conforming_bundle(profile_schema)
    del bundle.of_type("Patient")[0].body["sex"]
    violations = validate(bundle, profile_schema)
    assert [v.rule for v in violations] == ["missing-required"]
    assert violations[0].path == "Patient.sex"


def test_two_patients_is_cardinality_violation(profile_schema):
    bundle = conforming_bundle(profile_schema)
    bundle.resources.append(copy.deepcopy(bundle.of_type("Patient")[0]))
    rules = [v.rule for v in validate(bundle, profile_schema)]
    assert "cardinality" in rules


def test_unknown_code_reported(profile_schema):
    bundle = conforming_bundle(profile_schema)
    cond = bundle.of_type("Condition")[0]
    cond.body["code"] = Coded("urn:fedtwin:condition", "dragonpox")
    violations = validate(bundle, profile_schema)
    assert {v.rule for v in violations} == {"code"}


def test_subject_mismatch_reported(profile_schema):
    bundle = conforming_bundle(profile_schema)
    bundle.of_type("Observation")[0].body["subject"] = "someone-else"
    violations = validate(bundle, profile_schema)
    assert len(violations) == 1
    assert violations[0].path == "Observation.subject"


def test_wrong_value_type_reported(profile_schema):
    bundle = conforming_bundle(profile_schema)
    patient = bundle.of_type("Patient")[0]
    patient.body["birthDate"] = "not-a-date"
    violations = validate(bundle, profile_schema)
    assert [v.rule for v in violations] == ["type"]


def _mutations(resource):
    """Single-field mutations that each break exactly one constraint."""
    for name, node in resource.body.items():
        if isinstance(node, Quantity):
            yield name, Quantity(node.value, "bogus-unit"), "unit"
            yield name, "scalar-not-quantity", "type"
        elif isinstance(node, Coded):
            yield name, Coded(node.system, "bogus-code"), "code"
        elif isinstance(node, IsoDate):
            yield name, 123, "type"


def test_randomized_single_mutations_localized(profile_schema):
    base = conforming_bundle(profile_schema)
    for r_index, resource in enumerate(base.resources):
        for name, mutant, expected_rule in _mutations(resource):
            bundle = copy.deepcopy(base)
            bundle.resources[r_index].body[name] = mutant
            violations = validate(bundle, profile_schema)
            assert len(violations) == 1, f"{resource.resource_type}.{name}: {violations}"
            v = violations[0]
            assert v.rule == expected_rule
            assert v.path.endswith(f".{name}")
            assert v.resource_id == resource.id


def test_validation_monotone_under_field_removal(profile_schema):
    # removing an optional violating field never surfaces new violations
    bundle = conforming_bundle(profile_schema)
    cond = bundle.of_type("Condition")[0]
    cond.body["onsetDate"] = 99  # type violation on an optional field
    assert len(validate(bundle, profile_schema)) == 1
    del cond.body["onsetDate"]
    assert validate(bundle, profile_schema) == []


def test_resource_requires_type_and_id():
    with pytest.raises(ValueError):
        Resource("", "x")
    with pytest.raises(ValueError):
        Resource("Patient", "")
