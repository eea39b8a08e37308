import io
import math

import numpy as np
import pytest

from fedtwin.cdf import serialize_cdf
from fedtwin.experiment import (
    ExperimentConfig,
    ExperimentError,
    allocate_sizes,
    load_whas,
    partition,
    run_experiment,
    split_tvt,
)
from fedtwin.projection import FlatTable
from fedtwin.synth import (
    SMOKING_LEVELS,
    SynthParams,
    WAVE_OFFSETS,
    expected_event_fraction,
    synth_cohort,
)


def flat_table(n):
    return FlatTable(
        columns=["x"],
        rows=[[float(i)] for i in range(n)],
        time=[1.0] * n,
        event=[True] * n,
        ids=[f"P{i}" for i in range(n)],
    )


# -- allocation ------------------------------------------------------------------


def test_partition_sizes_whas_total():
    assert allocate_sizes(1638, [0.5, 0.3, 0.2]) == [819, 491, 328]


def test_partition_sizes_large_cohort():
    assert allocate_sizes(148_230, [0.5, 0.3, 0.2]) == [74_115, 44_469, 29_646]


def test_tvt_sizes_match_printed_station_splits():
    # 60:20:20 splits: the canonical station split triples
    assert allocate_sizes(819, [0.6, 0.2, 0.2]) == [491, 164, 164]
    assert allocate_sizes(491, [0.6, 0.2, 0.2]) == [295, 98, 98]
    assert allocate_sizes(74_115, [0.6, 0.2, 0.2]) == [44_469, 14_823, 14_823]


def test_tvt_default_ratio_small_n():
    assert allocate_sizes(10, [0.8, 0.1, 0.1]) == [8, 1, 1]


def test_partition_disjoint_exhaustive():
    table = flat_table(101)
    parts = partition(table, [0.5, 0.3, 0.2], seed=3)
    ids = [frozenset(p.ids) for p in parts]
    assert sum(len(s) for s in ids) == 101
    assert frozenset().union(*ids) == frozenset(table.ids)
    for a in range(3):
        for b in range(a + 1, 3):
            assert not ids[a] & ids[b]


def test_partition_deterministic_per_seed():
    table = flat_table(50)
    a = partition(table, [0.5, 0.3, 0.2], seed=9)
    b = partition(table, [0.5, 0.3, 0.2], seed=9)
    c = partition(table, [0.5, 0.3, 0.2], seed=10)
    assert [p.ids for p in a] == [p.ids for p in b]
    assert [p.ids for p in a] != [p.ids for p in c]


def test_split_tvt_union_property():
    table = flat_table(37)
    train, valid, test = split_tvt(table, (0.8, 0.1, 0.1), seed=1)
    assert len(train) + len(valid) + len(test) == 37
    assert set(train.ids) | set(valid.ids) | set(test.ids) == set(table.ids)


def test_bad_fractions_rejected():
    with pytest.raises(ValueError):
        allocate_sizes(10, [0.5, 0.2])


# -- synth ------------------------------------------------------------------------


def test_synth_empty_cohort():
    ds = synth_cohort(SynthParams(n=0), seed=1)
    assert len(ds) == 0


def test_synth_deterministic():
    params = SynthParams(n=50)
    a = synth_cohort(params, seed=5)
    b = synth_cohort(params, seed=5)
    assert serialize_cdf(a) == serialize_cdf(b)


def test_synth_smoking_frequencies_match_marginals():
    n = 10_000
    ds = synth_cohort(SynthParams(n=n, missing_rate=0.0), seed=11)
    counts = {level: 0 for level in SMOKING_LEVELS}
    for p in ds:
        counts[p.value("SMOKING_STATUS", "1A")] += 1
    for level, want in zip(SMOKING_LEVELS, (0.458, 0.365, 0.177)):
        got = counts[level] / n
        se = math.sqrt(want * (1 - want) / n)
        assert abs(got - want) <= 2 * se, f"{level}: {got} vs {want}"


def test_synth_event_fraction_matches_closed_form_at_beta_zero():
    n = 10_000
    params = SynthParams(
        n=n,
        beta={},
        cvd_prevalence=0.0,
        missing_rate=0.0,
    )
    ds = synth_cohort(params, seed=23)
    observed = 0
    for p in ds:
        seen = False
        for cond in ("STROKE", "MI", "HF"):
            for wave, _ in WAVE_OFFSETS:
                if p.value(f"{cond}_FOLLOWUP", wave) == "yes":
                    seen = True
        observed += seen
    want = expected_event_fraction(params)
    se = math.sqrt(want * (1 - want) / n)
    assert abs(observed / n - want) <= 2 * se, f"{observed / n} vs {want}"


def test_synth_wave_structure_and_anchors():
    ds = synth_cohort(SynthParams(n=30), seed=2)
    for p in ds:
        assert p.value("GENDER", "1A") in ("male", "female")
        assert p.value("AGE", "1A") is not None
        assert p.value("DATE", "1A") is not None
        # attended waves are a chronological prefix pattern: dated iff attended
        for cond in ("STROKE", "MI", "HF"):
            presence = p.value(f"{cond}_PRESENCE", "1A")
            assert presence in ("yes", "no")


def test_synth_invalid_params_rejected():
    with pytest.raises(ValueError):
        SynthParams(smoking_probs=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        SynthParams(censor_low=0.0)


# -- WHAS loader ---------------------------------------------------------------------


WHAS_SAMPLE = (
    "id,age,sex,bmi,chf,miord,lenfol,fstat\n"
    "1,65,0,31.4,0,0,2178,0\n"
    "2,88,1,22.7,1,1,365,1\n"
    "3,54,0,27.9,0,0,1001,0\n"
)


def test_load_whas_columns_and_rows():
    table = load_whas(io.StringIO(WHAS_SAMPLE))
    assert table.columns == ["age", "sex", "bmi", "chf", "miord"]
    assert len(table) == 3
    assert table.time[1] == pytest.approx(1.0, abs=2e-3)
    assert table.event == [False, True, False]
    assert table.categorical == [False, True, False, True, True]


def test_load_whas_missing_column_listed():
    bad = WHAS_SAMPLE.replace("bmi", "body_mass")
    with pytest.raises(ExperimentError, match="bmi"):
        load_whas(io.StringIO(bad))


def test_load_whas_row_count_conserved():
    table = load_whas(io.StringIO(WHAS_SAMPLE))
    assert len(table) == WHAS_SAMPLE.strip().count("\n")  # data lines


# -- experiment smoke -------------------------------------------------------------------


def test_smoke_experiment_one_seed(config_dir, tmp_path):
    cfg = ExperimentConfig(
        name="smoke",
        synth_n=300,
        synth_seed=3,
        synth_params={"baseline_hazard": 0.12},
        rounds=1,
        seeds=[0],
        epochs_per_round=2,
        no_aggregation_epochs=2,
        learning_rate=0.1,
        dropout=0.0,
        patience=50,
    )
    result = run_experiment(cfg, config_dir, out_dir=tmp_path / "run")
    assert len(result.runs) == 1
    run = result.runs[0]
    assert len(run.fedavg_rounds) == 1
    assert set(run.fedavg_rounds[0].c_local) == {1, 2, 3}
    assert 0.0 <= run.fedavg_rounds[0].c_global <= 1.0
    assert (tmp_path / "run" / "curves.csv").exists()
    assert (tmp_path / "run" / "summary.json").exists()
    assert (tmp_path / "run" / "summary.csv").exists()
    curve = result.round_curve("global")
    assert len(curve) == 1


def test_federated_session_transports_agree(config_dir):
    from fedtwin.experiment import SessionConfig, run_federated_session

    base = dict(
        clients=3,
        rounds=2,
        seed=0,
        synth_n=600,
        synth_seed=9,
        synth_params={"baseline_hazard": 0.12},
        epochs_per_round=3,
        learning_rate=0.1,
        dropout=0.0,
    )
    w_proc, hist_proc, bounds_proc = run_federated_session(
        SessionConfig(transport="in-process", **base), config_dir
    )
    w_sock, hist_sock, bounds_sock = run_federated_session(
        SessionConfig(transport="socket", **base), config_dir
    )
    for (Wa, ba), (Wb, bb) in zip(w_proc.layers, w_sock.layers):
        np.testing.assert_array_equal(Wa, Wb)
        np.testing.assert_array_equal(ba, bb)
    assert [m.c_global for m in hist_proc] == [m.c_global for m in hist_sock]
    assert bounds_proc.minima == bounds_sock.minima


def test_federated_session_refuses_uncovered_allow_list(config_dir):
    from fedtwin.experiment import SessionConfig, run_federated_session
    from fedtwin.projection import ProjectionSpec

    spec = ProjectionSpec.load(config_dir / "projection_cvd.json")
    full = spec.expression_texts()
    session = SessionConfig(
        clients=3,
        rounds=1,
        seed=0,
        synth_n=600,
        synth_seed=9,
        synth_params={"baseline_hazard": 0.12},
        epochs_per_round=2,
        allow_lists={
            "1": full,
            "2": [t for t in full if "smoking" not in t],  # station 2 withholds smoking
            "3": full,
        },
    )
    with pytest.raises(ExperimentError, match="station 2"):
        run_federated_session(session, config_dir)


def test_curves_have_one_point_per_round_per_scope(config_dir, tmp_path):
    cfg = ExperimentConfig(
        name="curves",
        synth_n=300,
        synth_seed=5,
        synth_params={"baseline_hazard": 0.12},
        rounds=3,
        seeds=[0, 1],
        epochs_per_round=2,
        no_aggregation_epochs=2,
        learning_rate=0.1,
        dropout=0.0,
    )
    result = run_experiment(cfg, config_dir, out_dir=tmp_path / "run")
    for run in result.runs:
        assert [m.round for m in run.fedavg_rounds] == [1, 2, 3]
        for m in run.fedavg_rounds:
            assert set(m.c_local) == {1, 2, 3}
    summary = result.summary()
    assert set(summary) == {"global", "client1", "client2", "client3"}
    assert set(summary["global"]) == {"without_aggregation", "fedavg"}
