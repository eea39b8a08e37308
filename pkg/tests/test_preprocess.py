import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedtwin.preprocess import (
    ImputeError,
    NormalizationBounds,
    apply_bounds,
    impute,
    normalize,
)
from fedtwin.projection import FlatTable


def make_table(rows, categorical=None, columns=None):
    n = len(rows)
    p = len(rows[0]) if rows else 0
    return FlatTable(
        columns=columns or [f"c{j}" for j in range(p)],
        rows=[list(r) for r in rows],
        time=[1.0] * n,
        event=[True] * n,
        ids=[f"P{i}" for i in range(n)],
        categorical=categorical or [],
    )


# -- impute --------------------------------------------------------------------


def test_impute_is_identity_on_complete_tables():
    table = make_table([[1.0, 2.0], [3.0, 4.0]])
    out = impute(table, seed=0)
    assert out.rows == table.rows


def test_impute_recovers_exact_linear_relation():
    # y = 2x; delete one y and expect the regression to recover it
    xs = [float(v) for v in range(1, 11)]
    rows = [[x, 2 * x] for x in xs]
    rows[4][1] = None
    out = impute(make_table(rows), seed=0)
    assert out.rows[4][1] == pytest.approx(2 * xs[4], abs=1e-6)


def test_impute_all_missing_column_errors():
    table = make_table([[1.0, None], [2.0, None]], columns=["a", "b"])
    with pytest.raises(ImputeError, match="'b'"):
        impute(table, seed=0)


def test_impute_categorical_snaps_to_observed_level():
    rows = [[0.0, 0.0], [1.0, 2.0], [1.0, 2.0], [0.0, 0.0], [0.5, None]]
    out = impute(make_table(rows, categorical=[False, True]), seed=0)
    assert out.rows[4][1] in (0.0, 2.0)


def test_impute_leaves_observed_cells_untouched():
    rows = [[1.0, 10.0], [2.0, None], [3.0, 30.0]]
    out = impute(make_table(rows), seed=0)
    assert out.rows[0] == [1.0, 10.0]
    assert out.rows[2] == [3.0, 30.0]
    assert out.rows[1][1] is not None


def test_impute_deterministic():
    rng = np.random.default_rng(4)
    rows = rng.normal(size=(30, 4)).tolist()
    for i, j in [(0, 1), (5, 2), (7, 0), (20, 3)]:
        rows[i][j] = None
    a = impute(make_table(rows), seed=1)
    b = impute(make_table(rows), seed=1)
    assert a.rows == b.rows


# -- normalize -------------------------------------------------------------------


def test_normalize_simple_column():
    table, bounds = normalize(make_table([[0.0], [5.0], [10.0]]))
    assert [r[0] for r in table.rows] == [0.0, 0.5, 1.0]
    assert bounds.minima == [0.0]
    assert bounds.maxima == [10.0]


def test_normalize_constant_column_maps_to_zero():
    table, bounds = normalize(make_table([[7.0], [7.0]]))
    assert [r[0] for r in table.rows] == [0.0, 0.0]
    assert (bounds.minima[0], bounds.maxima[0]) == (7.0, 7.0)


def test_normalize_requires_complete_table():
    with pytest.raises(ValueError):
        normalize(make_table([[1.0, None]]))


@settings(max_examples=60)
@given(st.lists(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False), min_size=2, max_size=30))
def test_normalize_is_monotone_into_unit_interval(values):
    table, _ = normalize(make_table([[v] for v in values]))
    out = [r[0] for r in table.rows]
    assert all(0.0 <= v <= 1.0 for v in out)
    # monotone map: pairwise order never reverses (rounding may introduce ties)
    for i in range(len(values)):
        for j in range(len(values)):
            assert (values[i] - values[j]) * (out[i] - out[j]) >= 0.0


def test_normalize_preserves_ranks_on_separated_values():
    values = [3.0, -7.0, 12.0, 0.5, 9.0, -2.0]
    table, _ = normalize(make_table([[v] for v in values]))
    out = [r[0] for r in table.rows]
    np.testing.assert_array_equal(np.argsort(values), np.argsort(out))


def test_apply_bounds_reuses_training_bounds():
    train, bounds = normalize(make_table([[0.0], [10.0]]))
    test = apply_bounds(make_table([[5.0], [20.0]]), bounds, clip=False)
    assert [r[0] for r in test.rows] == [0.5, 2.0]
    clipped = apply_bounds(make_table([[5.0], [20.0]]), bounds, clip=True)
    assert [r[0] for r in clipped.rows] == [0.5, 1.0]


def test_bounds_combine_is_envelope():
    a = NormalizationBounds(minima=[0.0, 2.0], maxima=[1.0, 3.0])
    b = NormalizationBounds(minima=[2.0, 0.0], maxima=[3.0, 1.0])
    c = a.combine(b)
    assert c.minima == [0.0, 0.0]
    assert c.maxima == [3.0, 3.0]


def test_bounds_validate_order():
    with pytest.raises(ValueError):
        NormalizationBounds(minima=[1.0], maxima=[0.0])
