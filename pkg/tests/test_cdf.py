import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedtwin.cdf import (
    MISSING,
    CdfParseError,
    CdfSemanticError,
    CohortDataset,
    IsoDate,
    ParticipantRecord,
    WaveFileError,
    from_wave_files,
    parse_cdf,
    serialize_cdf,
)

WAVES = ["1A", "1B", "1C", "2A", "2B", "3A", "3B"]


def canonicalize(text: str) -> str:
    """Independent canonical form: plain json module, no Value model."""
    lines = []
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        lines.append(json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":")))
    lines.sort(key=lambda l: json.loads(l)["id"])
    return "".join(l + "\n" for l in lines)


# -- generators -----------------------------------------------------------

scalar_values = st.one_of(
    st.none(),
    st.integers(min_value=-10_000, max_value=10_000),
    st.floats(allow_nan=False, allow_infinity=False, min_value=-1e6, max_value=1e6),
    st.text(alphabet="abcdefno yes_", min_size=1, max_size=8),
    st.dates(min_value=__import__("datetime").date(1900, 1, 1)).map(lambda d: d.isoformat()),
    st.integers(min_value=1900, max_value=2100).map(lambda y: f"{y:04d}"),
)

variable_names = st.sampled_from(["AGE", "DATE", "SBP", "STROKE_FOLLOWUP", "HDL", "GENDER"])


@st.composite
def cdf_documents(draw):
    n = draw(st.integers(min_value=0, max_value=6))
    lines = []
    for i in range(n):
        values = {}
        for var in draw(st.lists(variable_names, unique=True, max_size=4)):
            wave_map = {}
            for wave in draw(st.lists(st.sampled_from(WAVES), unique=True, min_size=1, max_size=3)):
                wave_map[wave] = draw(scalar_values)
            values[var] = wave_map
        lines.append(json.dumps({"id": f"P{i:03d}", "values": values}))
    return "".join(l + "\n" for l in lines)


# -- parse_cdf ------------------------------------------------------------


def test_parse_minimal_document():
    ds = parse_cdf('{"id": "P1", "values": {"AGE": {"1A": 50}}}\n')
    assert len(ds) == 1
    assert ds.variable_catalog == {"AGE"}
    assert ds.get("P1").value("AGE", "1A") == 50


def test_duplicate_id_is_semantic_error():
    doc = '{"id": "P1", "values": {}}\n{"id": "P1", "values": {}}\n'
    with pytest.raises(CdfSemanticError, match="P1"):
        parse_cdf(doc)


def test_malformed_json_names_line():
    doc = '{"id": "P1", "values": {}}\n{oops\n'
    with pytest.raises(CdfParseError, match="line 2"):
        parse_cdf(doc)


def test_missing_id_rejected():
    with pytest.raises(CdfParseError):
        parse_cdf('{"values": {}}\n')


def test_null_and_absent_both_read_as_none():
    ds = parse_cdf('{"id": "P1", "values": {"AGE": {"1A": null}}}\n')
    p = ds.get("P1")
    assert p.value("AGE", "1A") is None  # asked, no answer
    assert p.value("AGE", "2A") is None  # not collected
    # but they serialize differently: the null cell is retained
    assert '"1A":null' in serialize_cdf(ds)


@settings(max_examples=60)
@given(cdf_documents())
def test_round_trip_matches_independent_canonicalizer(doc):
    assert serialize_cdf(parse_cdf(doc)) == canonicalize(doc)


@settings(max_examples=60)
@given(cdf_documents())
def test_serialize_parse_is_fixpoint(doc):
    canonical = serialize_cdf(parse_cdf(doc))
    assert serialize_cdf(parse_cdf(canonical)) == canonical


# -- value / values -------------------------------------------------------


def test_value_direct_lookup_and_absence():
    p = ParticipantRecord("P1", {("AGE", "1A"): 50})
    assert p.value("AGE", "1A") == 50
    assert p.value("AGE", "2A") is None


def test_date_precision_round_trip():
    ds = parse_cdf('{"id": "P1", "values": {"DATE": {"1A": "2008-05"}}}\n')
    v = ds.get("P1").value("DATE", "1A")
    assert isinstance(v, IsoDate)
    assert v.precision == "month"
    assert str(v) == "2008-05"
    for text in ["2008", "2008-05", "2008-05-17"]:
        assert str(IsoDate.parse(text)) == text


def test_values_requires_nonempty_waves():
    p = ParticipantRecord("P1", {})
    with pytest.raises(ValueError):
        p.values("AGE", [])


@settings(max_examples=60)
@given(
    st.dictionaries(
        st.tuples(variable_names, st.sampled_from(WAVES)),
        scalar_values.map(lambda raw: MISSING if raw is None else raw),
        max_size=8,
    ),
    variable_names,
    st.lists(st.sampled_from(WAVES + ["9Z"]), min_size=1, max_size=6),
)
def test_values_equals_elementwise_value(cells, var, waves):
    from fedtwin.cdf import parse_scalar

    p = ParticipantRecord("P1", {k: parse_scalar(v) if not isinstance(v, type(MISSING)) else v for k, v in cells.items()})
    got = p.values(var, waves)
    assert len(got) == len(waves)
    assert got == [p.value(var, w) for w in waves]


# -- from_wave_files ------------------------------------------------------


def test_single_wave_file_equals_handwritten_cdf():
    csv_bytes = b"id,AGE,SBP\nP1,50,127.5\n"
    ds = from_wave_files([("1A", io.BytesIO(csv_bytes))])
    expected = parse_cdf('{"id": "P1", "values": {"AGE": {"1A": 50}, "SBP": {"1A": 127.5}}}\n')
    assert serialize_cdf(ds) == serialize_cdf(expected)


def test_two_waves_merge_into_one_record():
    files = [
        ("1A", io.BytesIO(b"id,AGE\nP1,50\n")),
        ("2A", io.BytesIO(b"id,AGE\nP1,54\n")),
    ]
    ds = from_wave_files(files)
    expected = parse_cdf('{"id": "P1", "values": {"AGE": {"1A": 50, "2A": 54}}}\n')
    assert serialize_cdf(ds) == serialize_cdf(expected)
    assert ds.wave_order == ["1A", "2A"]


def test_conflicting_cell_names_the_triple():
    files = [
        ("1A", io.BytesIO(b"id,AGE\nP1,50\n")),
        ("1A", io.BytesIO(b"id,AGE\nP1,51\n")),
    ]
    with pytest.raises(WaveFileError, match=r"P1, AGE, 1A"):
        from_wave_files(files)


def test_missing_id_column_is_format_error():
    with pytest.raises(WaveFileError, match="id"):
        from_wave_files([("1A", io.BytesIO(b"pid,AGE\nP1,50\n"))])


def test_wave_file_order_insensitive_without_conflicts():
    a = ("1A", b"id,AGE\nP1,50\nP2,61\n")
    b = ("2A", b"id,AGE,SBP\nP1,54,130\n")
    ds_ab = from_wave_files([(w, io.BytesIO(d)) for w, d in (a, b)])
    ds_ba = from_wave_files([(w, io.BytesIO(d)) for w, d in (b, a)])
    assert serialize_cdf(ds_ab) == serialize_cdf(ds_ba)


def test_empty_csv_cell_becomes_missing_marker():
    ds = from_wave_files([("1A", io.BytesIO(b"id,AGE,SBP\nP1,,130\n"))])
    p = ds.get("P1")
    assert p.value("AGE", "1A") is None
    assert ("AGE", "1A") in p.cells  # asked, no answer: retained as null


# -- dataset invariants ----------------------------------------------------


def test_wave_order_must_cover_referenced_waves():
    p = ParticipantRecord("P1", {("AGE", "2A"): 50})
    with pytest.raises(CdfSemanticError, match="2A"):
        CohortDataset(participants=[p], wave_order=["1A"])


def test_iso_date_ordering_across_precisions():
    assert IsoDate(2008) < IsoDate(2008, 1) < IsoDate(2008, 1, 2) < IsoDate(2009)
