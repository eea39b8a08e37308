import pytest

from fedtwin.cdf import IsoDate
from fedtwin.fhirpath import eval_path, parse_path
from fedtwin.profiles import Coded, Quantity, Resource, ResourceBundle
from fedtwin.projection import (
    ColumnSpec,
    FlatTable,
    OutcomeSpec,
    ProjectionSpec,
    ProjectionSpecError,
    flatten,
    table_from_csv,
    table_to_csv,
    years_between,
)

BASELINE = IsoDate(2008, 1, 1)


def patient(last_follow_up=IsoDate(2018, 1, 1)):
    return Resource(
        "Patient",
        "P1",
        {
            "sex": Coded("urn:fedtwin:gender", "male"),
            "birthDate": IsoDate(1968),
            "baselineDate": BASELINE,
            "lastFollowUpDate": last_follow_up,
        },
    )


def observation(kind, value, unit="x"):
    return Resource(
        "Observation",
        f"P1-{kind}",
        {"subject": "P1", "code": Coded("urn:fedtwin:observation", kind), "value": Quantity(value, unit)},
    )


def condition(kind, onset=None):
    body = {"subject": "P1", "code": Coded("urn:fedtwin:condition", kind)}
    if onset is not None:
        body["onsetDate"] = onset
    return Resource("Condition", f"P1-{kind}", body)


def make_spec(columns=None):
    cols = columns or [
        ColumnSpec(name="age", expr=parse_path("Patient.birthDate"), convert="age_at_baseline"),
        ColumnSpec(
            name="sex",
            expr=parse_path("Patient.sex"),
            convert="code",
            encoding={"male": 0, "female": 1},
        ),
        ColumnSpec(name="sbp", expr=parse_path("Observation.where(code = 'systolic-bp').value")),
        ColumnSpec(
            name="hypertension",
            expr=parse_path("Condition.where(code = 'hypertension').code"),
            convert="code",
            encoding={"hypertension": 1},
            missing_as=0,
        ),
    ]
    outcome = OutcomeSpec(
        baseline_expr=parse_path("Patient.baselineDate"),
        last_follow_up_expr=parse_path("Patient.lastFollowUpDate"),
        event_exprs=(
            parse_path("Condition.where(code = 'stroke').onsetDate"),
            parse_path("Condition.where(code = 'mi').onsetDate"),
            parse_path("Condition.where(code = 'hf').onsetDate"),
        ),
        horizon_years=10.0,
    )
    return ProjectionSpec(columns=cols, outcome=outcome)


def test_full_predictor_row():
    bundle = ResourceBundle(
        "P1", [patient(), observation("systolic-bp", 125.0), condition("hypertension")]
    )
    table, rejects = flatten([bundle], make_spec())
    assert rejects == []
    assert table.columns == ["age", "sex", "sbp", "hypertension"]
    assert table.rows == [[40.0, 0.0, 125.0, 1.0]]
    assert table.categorical == [False, True, False, True]


def test_censored_at_horizon_after_long_follow_up():
    # follow-up 12 years, no conditions: censored at the 10-year horizon
    bundle = ResourceBundle("P1", [patient(last_follow_up=IsoDate(2020, 1, 1))])
    table, _ = flatten([bundle], make_spec())
    assert table.event == [False]
    assert table.time == [10.0]


def test_event_time_from_onset():
    onset = IsoDate(2011, 3, 14)
    bundle = ResourceBundle("P1", [patient(), condition("stroke", onset=onset)])
    table, _ = flatten([bundle], make_spec())
    assert table.event == [True]
    assert table.time[0] == pytest.approx(years_between(BASELINE, onset))
    assert table.time[0] == pytest.approx((onset.as_date() - BASELINE.as_date()).days / 365.25)


def test_event_beyond_horizon_is_censored():
    bundle = ResourceBundle(
        "P1",
        [patient(last_follow_up=IsoDate(2020, 1, 1)), condition("mi", onset=IsoDate(2019, 6, 1))],
    )
    table, _ = flatten([bundle], make_spec())
    assert table.event == [False]
    assert table.time == [10.0]


def test_earliest_onset_wins():
    bundle = ResourceBundle(
        "P1",
        [
            patient(),
            condition("stroke", onset=IsoDate(2012, 1, 1)),
            condition("hf", onset=IsoDate(2010, 1, 1)),
        ],
    )
    table, _ = flatten([bundle], make_spec())
    assert table.event == [True]
    assert table.time[0] == pytest.approx(years_between(BASELINE, IsoDate(2010, 1, 1)))


def test_undated_condition_does_not_count_as_event():
    bundle = ResourceBundle("P1", [patient(), condition("stroke")])
    table, _ = flatten([bundle], make_spec())
    assert table.event == [False]


def test_censored_at_last_follow_up_before_horizon():
    bundle = ResourceBundle("P1", [patient(last_follow_up=IsoDate(2012, 1, 1))])
    table, _ = flatten([bundle], make_spec())
    assert table.event == [False]
    assert table.time[0] == pytest.approx(years_between(BASELINE, IsoDate(2012, 1, 1)))


def test_prevalent_case_rejected():
    bundle = ResourceBundle("P1", [patient(), condition("stroke", onset=IsoDate(2005, 1, 1))])
    table, rejects = flatten([bundle], make_spec())
    assert len(table) == 0
    assert len(rejects) == 1
    assert "prevalent" in rejects[0].reason


def test_no_match_without_fill_is_missing_cell():
    bundle = ResourceBundle("P1", [patient()])
    table, rejects = flatten([bundle], make_spec())
    assert rejects == []
    assert table.rows[0][2] is None  # sbp absent
    assert table.rows[0][3] == 0.0  # hypertension filled


def test_type_mismatch_rejects_row_not_coerces():
    cols = [ColumnSpec(name="sex_as_number", expr=parse_path("Patient.sex"))]
    bundle = ResourceBundle("P1", [patient()])
    table, rejects = flatten([bundle], make_spec(columns=cols))
    assert len(table) == 0
    assert rejects[0].column == "sex_as_number"
    assert "expected a number" in rejects[0].reason


def test_missing_baseline_rejects():
    p = patient()
    del p.body["baselineDate"]
    table, rejects = flatten([ResourceBundle("P1", [p])], make_spec())
    assert len(table) == 0
    assert "baseline" in rejects[0].reason


def test_flatten_cells_equal_eval_path_first_match():
    bundles = [
        ResourceBundle(
            "P1", [patient(), observation("systolic-bp", 125.0), condition("hypertension")]
        ),
        ResourceBundle("P2", [patient(), observation("systolic-bp", 140.0)]),
    ]
    bundles[1].resources[0].id = "P2"
    spec = make_spec()
    table, _ = flatten(bundles, spec)
    for i, bundle in enumerate(bundles):
        for j, col in enumerate(spec.columns):
            matches = eval_path(col.expr, bundle)
            if not matches:
                expected = col.missing_as
                assert table.rows[i][j] == (None if expected is None else float(expected))


def test_duplicate_column_names_rejected():
    cols = [
        ColumnSpec(name="a", expr=parse_path("Patient.sex")),
        ColumnSpec(name="a", expr=parse_path("Patient.birthDate")),
    ]
    with pytest.raises(ProjectionSpecError):
        make_spec(columns=cols)


def test_spec_json_round_trip(config_dir):
    spec = ProjectionSpec.load(config_dir / "projection_cvd.json")
    assert len(spec.columns) == 15
    assert spec.column_names[0] == "age"
    assert spec.spec_hash() == ProjectionSpec.load(config_dir / "projection_cvd.json").spec_hash()


def test_table_csv_round_trip():
    table = FlatTable(
        columns=["a", "b"],
        rows=[[1.0, None], [2.5, 3.5]],
        time=[4.0, 10.0],
        event=[True, False],
        ids=["P1", "P2"],
    )
    back = table_from_csv(table_to_csv(table))
    assert back.columns == table.columns
    assert back.rows == table.rows
    assert back.time == table.time
    assert back.event == table.event
    assert back.ids == table.ids


def test_negative_time_rejected_by_table():
    with pytest.raises(ValueError):
        FlatTable(columns=["a"], rows=[[1.0]], time=[-0.5], event=[False])
