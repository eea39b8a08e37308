"""Experiment orchestration: partitioning, dataset loading, and the federated
vs isolated-station comparison over repeated random splits."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .federation import (
    ClientState,
    FedConfig,
    InProcessTransport,
    RoundMetrics,
    federated_minmax,
    run_no_aggregation,
    server_run,
)
from .metrics import corrected_resampled_ttest
from .pairing import standard_rule_catalog
from .preprocess import apply_bounds, impute, normalize
from .profiles import ProfileSchema, build_bundle
from .projection import FlatTable, ProjectionSpec, flatten
from .survival import ModelWeights, SurvivalBatch, TrainingConfig, init_weights
from .synth import SynthParams, synth_cohort


class ExperimentError(Exception):
    pass


def allocate_sizes(n: int, fractions: Sequence[float]) -> List[int]:
    """Largest-remainder allocation of n rows to the given fractions.

    Floors each share, then hands remaining rows to the largest fractional
    remainders (ties resolved toward earlier subsets).
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be non-negative")
    exact = [n * f for f in fractions]
    sizes = [int(np.floor(v)) for v in exact]
    remainder = n - sum(sizes)
    order = sorted(range(len(fractions)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:remainder]:
        sizes[i] += 1
    return sizes


def _partition_indices(n: int, fractions: Sequence[float], seed: int) -> List[np.ndarray]:
    sizes = allocate_sizes(n, fractions)
    perm = np.random.default_rng(seed).permutation(n)
    out = []
    start = 0
    for size in sizes:
        out.append(np.sort(perm[start : start + size]))
        start += size
    return out


def partition(table: FlatTable, fractions: Sequence[float] = (0.5, 0.3, 0.2), seed: int = 0):
    """Random disjoint row partition with largest-remainder sizing."""
    return [table.subset(idx.tolist()) for idx in _partition_indices(len(table), fractions, seed)]


def split_tvt(table: FlatTable, ratio: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0):
    """(train, valid, test) random split; same allocation rule as partition."""
    if len(ratio) != 3:
        raise ValueError("ratio must have exactly three entries")
    return tuple(partition(table, ratio, seed))


WHAS_PREDICTORS = ["age", "sex", "bmi", "chf", "miord"]
WHAS_TIME_COLUMN = "lenfol"
WHAS_EVENT_COLUMN = "fstat"
DAYS_PER_YEAR = 365.25


def load_whas(source) -> FlatTable:
    """Load the public Worcester Heart Attack Study table.

    Expects a CSV with (case-insensitive) columns age, sex, bmi, chf, miord,
    plus lenfol (follow-up, days) and fstat (event indicator). The canonical
    file has 1,638 rows.
    """
    data = source.read() if hasattr(source, "read") else source
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    reader = csv.DictReader(io.StringIO(data))
    if reader.fieldnames is None:
        raise ExperimentError("empty WHAS file")
    lower_map = {name.lower().strip(): name for name in reader.fieldnames}
    needed = WHAS_PREDICTORS + [WHAS_TIME_COLUMN, WHAS_EVENT_COLUMN]
    missing = [c for c in needed if c not in lower_map]
    if missing:
        raise ExperimentError(f"WHAS file is missing expected columns: {missing}")
    rows, times, events, ids = [], [], [], []
    for i, record in enumerate(reader):
        rows.append([float(record[lower_map[c]]) for c in WHAS_PREDICTORS])
        times.append(float(record[lower_map[WHAS_TIME_COLUMN]]) / DAYS_PER_YEAR)
        events.append(record[lower_map[WHAS_EVENT_COLUMN]].strip() in ("1", "1.0"))
        ids.append(record[lower_map["id"]] if "id" in lower_map else str(i))
    return FlatTable(
        columns=list(WHAS_PREDICTORS),
        rows=rows,
        time=times,
        event=events,
        ids=ids,
        categorical=[False, True, False, True, True],
    )


# -- experiment configuration ---------------------------------------------------


@dataclass
class ExperimentConfig:
    name: str = "default"
    dataset_kind: str = "synth"  # synth | whas | table
    dataset_path: Optional[str] = None
    synth_n: int = 30_000
    synth_seed: int = 7
    synth_params: Optional[dict] = None
    clients: int = 3
    rounds: int = 20
    partition_fractions: Sequence[float] = (0.5, 0.3, 0.2)
    tvt_ratio: Sequence[float] = (0.6, 0.2, 0.2)
    seeds: Sequence[int] = tuple(range(10))
    learning_rate: float = 0.05
    epochs_per_round: int = 30
    no_aggregation_epochs: Optional[int] = None  # default: rounds * epochs_per_round
    dropout: float = 0.25
    patience: int = 10
    projection_spec: Optional[str] = None
    profile_schema: Optional[str] = None

    @classmethod
    def from_json_obj(cls, obj) -> "ExperimentConfig":
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_obj(json.load(fh))

    def to_json_obj(self) -> dict:
        return {
            "name": self.name,
            "dataset_kind": self.dataset_kind,
            "dataset_path": self.dataset_path,
            "synth_n": self.synth_n,
            "synth_seed": self.synth_seed,
            "synth_params": self.synth_params,
            "clients": self.clients,
            "rounds": self.rounds,
            "partition_fractions": list(self.partition_fractions),
            "tvt_ratio": list(self.tvt_ratio),
            "seeds": list(self.seeds),
            "learning_rate": self.learning_rate,
            "epochs_per_round": self.epochs_per_round,
            "no_aggregation_epochs": self.no_aggregation_epochs,
            "dropout": self.dropout,
            "patience": self.patience,
            "projection_spec": self.projection_spec,
            "profile_schema": self.profile_schema,
        }


def derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def harmonize_dataset(dataset, schema: ProfileSchema, catalog=None):
    """CDF -> validated bundles, dropping participants flagged as prevalent later."""
    catalog = catalog or standard_rule_catalog()
    return [build_bundle(p, catalog, schema) for p in dataset]


def pipeline_table(cfg: ExperimentConfig, config_dir: Path) -> FlatTable:
    """Materialize the experiment's flat table from the configured source."""
    if cfg.dataset_kind == "synth":
        params_obj = dict(cfg.synth_params or {})
        params_obj["n"] = cfg.synth_n
        params = SynthParams.from_json_obj(params_obj)
        dataset = synth_cohort(params, seed=cfg.synth_seed)
        schema = ProfileSchema.load(cfg.profile_schema or config_dir / "profile_schema.json")
        spec = ProjectionSpec.load(cfg.projection_spec or config_dir / "projection_cvd.json")
        bundles = harmonize_dataset(dataset, schema)
        table, _rejects = flatten(bundles, spec)
        return table
    if cfg.dataset_kind == "whas":
        if not cfg.dataset_path:
            raise ExperimentError("whas dataset requires dataset_path")
        with open(cfg.dataset_path, "r", encoding="utf-8") as fh:
            return load_whas(fh)
    if cfg.dataset_kind == "table":
        from .projection import load_table

        if not cfg.dataset_path:
            raise ExperimentError("table dataset requires dataset_path")
        return load_table(cfg.dataset_path)
    raise ExperimentError(f"unknown dataset kind {cfg.dataset_kind!r}")


def _to_batch(table: FlatTable) -> SurvivalBatch:
    if any(v is None for row in table.rows for v in row):
        raise ExperimentError("table still has missing cells; impute before batching")
    X = np.array(table.rows, dtype=float)
    return SurvivalBatch(X=X, time=np.array(table.time), event=np.array(table.event))


def build_client_states(
    table: FlatTable, cfg: ExperimentConfig, seed: int, total_rounds: int, epochs: int
) -> List[ClientState]:
    """Partition, split, impute, and normalize per station."""
    clients = partition(table, cfg.partition_fractions, seed=derived_seed(seed, 1))
    states = []
    for k, client_table in enumerate(clients, start=1):
        train_t, valid_t, test_t = split_tvt(
            client_table, cfg.tvt_ratio, seed=derived_seed(seed, 2, k)
        )
        train_t = impute(train_t, seed=derived_seed(seed, 3, k))
        valid_t = impute(valid_t, seed=derived_seed(seed, 4, k))
        test_t = impute(test_t, seed=derived_seed(seed, 5, k))
        train_t, bounds = normalize(train_t)
        valid_t = apply_bounds(valid_t, bounds)
        test_t = apply_bounds(test_t, bounds)
        states.append(
            ClientState(
                client_id=k,
                train=_to_batch(train_t),
                valid=_to_batch(valid_t),
                test=_to_batch(test_t),
                total_rounds=total_rounds,
                training=TrainingConfig(
                    learning_rate=cfg.learning_rate,
                    epochs=epochs,
                    dropout=cfg.dropout,
                    seed=derived_seed(seed, 6, k),
                    patience=cfg.patience,
                ),
                bounds=bounds,
            )
        )
    return states


@dataclass
class SessionConfig:
    """One federated session: stations, rounds, transport, and policy."""

    clients: int = 3
    rounds: int = 5
    transport: str = "in-process"  # or "socket"
    host: str = "127.0.0.1"
    port: int = 0  # 0 = ephemeral
    seed: int = 0
    timeout: float = 60.0
    partition_fractions: Sequence[float] = (0.5, 0.3, 0.2)
    tvt_ratio: Sequence[float] = (0.6, 0.2, 0.2)
    learning_rate: float = 0.05
    epochs_per_round: int = 30
    dropout: float = 0.25
    patience: int = 10
    table_csv: Optional[str] = None
    synth_n: int = 2000
    synth_seed: int = 7
    synth_params: Optional[dict] = None
    spec_path: Optional[str] = None
    allow_lists: Optional[Dict[str, List[str]]] = None  # client id -> expressions

    @classmethod
    def load(cls, path) -> "SessionConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(**json.load(fh))


def run_federated_session(session: SessionConfig, config_dir: Path, log=None):
    """Drive one session end to end over the configured transport.

    Stations whose allow-list does not cover the projection spec are refused
    before the session starts. Returns (final weights, per-round metrics,
    global bounds).
    """
    from .federation import SocketTransport, policy_check, start_socket_clients

    exp = ExperimentConfig(
        clients=session.clients,
        rounds=session.rounds,
        partition_fractions=session.partition_fractions,
        tvt_ratio=session.tvt_ratio,
        learning_rate=session.learning_rate,
        epochs_per_round=session.epochs_per_round,
        dropout=session.dropout,
        patience=session.patience,
        dataset_kind="table" if session.table_csv else "synth",
        dataset_path=session.table_csv,
        synth_n=session.synth_n,
        synth_seed=session.synth_seed,
        synth_params=session.synth_params,
    )
    table = pipeline_table(exp, config_dir)
    spec = ProjectionSpec.load(session.spec_path or config_dir / "projection_cvd.json")
    states = build_client_states(table, exp, session.seed, session.rounds,
                                 session.epochs_per_round)
    if session.allow_lists is not None:
        for state in states:
            allow = session.allow_lists.get(str(state.client_id), [])
            violations = policy_check(spec, allow)
            if violations:
                raise ExperimentError(
                    f"station {state.client_id} refused to join: projection columns "
                    f"{violations} are not on its allow-list"
                )
            state.allow_list = list(allow)

    p = len(table.columns)
    fed_cfg = FedConfig(
        n_clients=session.clients,
        rounds=session.rounds,
        input_dim=p,
        training=states[0].training,
        spec_hash=spec.spec_hash(),
        seed=derived_seed(session.seed, 0),
    )
    initial = init_weights(p, seed=fed_cfg.seed)
    if session.transport == "socket":
        transport = SocketTransport(
            host=session.host, port=session.port, n_clients=session.clients,
            timeout=session.timeout,
        )
        if log:
            log(f"socket transport listening on {transport.address[0]}:{transport.address[1]}")
        threads = start_socket_clients(transport, states)
        try:
            weights, history = server_run(fed_cfg, transport, initial=initial)
            bounds = federated_minmax(transport)
        finally:
            transport.close()
            for thread in threads:
                thread.join(timeout=session.timeout)
    elif session.transport == "in-process":
        transport = InProcessTransport({s.client_id: s for s in states})
        weights, history = server_run(fed_cfg, transport, initial=initial)
        bounds = federated_minmax(transport)
    else:
        raise ExperimentError(f"unknown transport {session.transport!r}")
    if log:
        for rm in history:
            locals_text = ", ".join(f"client{k}={v:.4f}" for k, v in rm.c_local.items())
            log(f"round {rm.round}: global C {rm.c_global:.4f} ({locals_text})")
    return weights, history, bounds


@dataclass
class SeedRun:
    seed: int
    fedavg_rounds: List[RoundMetrics]
    no_aggregation: RoundMetrics
    final_weights: ModelWeights
    global_bounds: object
    n_train_total: int
    n_test_total: int
    test_sizes: Dict[int, int]
    train_sizes: Dict[int, int]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: List[SeedRun] = field(default_factory=list)

    def summary(self) -> dict:
        """Mean and 95% CI rows in the two-arm layout (global + per client)."""
        k_clients = self.config.clients
        n_train = int(np.mean([r.n_train_total for r in self.runs]))
        n_test = int(np.mean([r.n_test_total for r in self.runs]))
        rows = {}
        fed_global = [r.fedavg_rounds[-1].c_global for r in self.runs]
        base_global = [r.no_aggregation.c_global for r in self.runs]
        rows["global"] = {
            "without_aggregation": _ci(base_global, n_train, n_test),
            "fedavg": _ci(fed_global, n_train, n_test),
        }
        for k in range(1, k_clients + 1):
            fed_local = [r.fedavg_rounds[-1].c_local[k] for r in self.runs]
            base_local = [r.no_aggregation.c_local[k] for r in self.runs]
            nt = int(np.mean([r.train_sizes[k] for r in self.runs]))
            ns = int(np.mean([r.test_sizes[k] for r in self.runs]))
            rows[f"client{k}"] = {
                "without_aggregation": _ci(base_local, nt, ns),
                "fedavg": _ci(fed_local, nt, ns),
            }
        return rows

    def round_curve(self, scope: str = "global") -> List[float]:
        """Across-seed mean C per round for a scope ('global' or client id)."""
        rounds = self.config.rounds
        out = []
        for r in range(rounds):
            if scope == "global":
                vals = [run.fedavg_rounds[r].c_global for run in self.runs]
            else:
                vals = [run.fedavg_rounds[r].c_local[int(scope)] for run in self.runs]
            out.append(float(np.mean(vals)))
        return out


def _ci(samples, n_train, n_test):
    if len(samples) >= 2:
        mean, lo, hi = corrected_resampled_ttest(list(samples), n_train, n_test)
    else:
        mean = lo = hi = float(samples[0])
    return {"mean": mean, "ci_low": lo, "ci_high": hi}


def run_seed(
    table: FlatTable, cfg: ExperimentConfig, seed: int
) -> SeedRun:
    """One random-split run of both arms."""
    states_fed = build_client_states(table, cfg, seed, cfg.rounds, cfg.epochs_per_round)
    noagg_epochs = cfg.no_aggregation_epochs or cfg.rounds * cfg.epochs_per_round
    states_base = build_client_states(table, cfg, seed, 1, noagg_epochs)

    p = len(table.columns)
    w0 = init_weights(p, seed=derived_seed(seed, 0))

    _, baseline_metrics = run_no_aggregation(states_base, w0)

    transport = InProcessTransport({s.client_id: s for s in states_fed})
    fed_cfg = FedConfig(
        n_clients=cfg.clients,
        rounds=cfg.rounds,
        input_dim=p,
        training=states_fed[0].training,
        seed=derived_seed(seed, 0),
    )
    final_weights, fed_history = server_run(fed_cfg, transport, initial=w0)
    global_bounds = federated_minmax(transport)

    return SeedRun(
        seed=seed,
        fedavg_rounds=fed_history,
        no_aggregation=baseline_metrics,
        final_weights=final_weights,
        global_bounds=global_bounds,
        n_train_total=sum(s.n_train for s in states_fed),
        n_test_total=sum(len(s.test) for s in states_fed),
        test_sizes={s.client_id: len(s.test) for s in states_fed},
        train_sizes={s.client_id: s.n_train for s in states_fed},
    )


def calibration_table(table: FlatTable, cfg: ExperimentConfig, seed: int) -> FlatTable:
    """Pooled raw-scale imputed training rows of every station for one seed.

    Reproduces the seed's partition/split deterministically, so the exported
    package's medians and baseline hazard come from exactly the rows the
    federation trained on.
    """
    clients = partition(table, cfg.partition_fractions, seed=derived_seed(seed, 1))
    pooled_rows, pooled_time, pooled_event, pooled_ids = [], [], [], []
    for k, client_table in enumerate(clients, start=1):
        train_t, _, _ = split_tvt(client_table, cfg.tvt_ratio, seed=derived_seed(seed, 2, k))
        train_t = impute(train_t, seed=derived_seed(seed, 3, k))
        pooled_rows.extend(train_t.rows)
        pooled_time.extend(train_t.time)
        pooled_event.extend(train_t.event)
        pooled_ids.extend(train_t.ids)
    return FlatTable(
        columns=list(table.columns),
        rows=pooled_rows,
        time=pooled_time,
        event=pooled_event,
        ids=pooled_ids,
        categorical=list(table.categorical),
    )


def export_run_package(
    result: "ExperimentResult",
    table: FlatTable,
    spec: ProjectionSpec,
    name: str = "cvd-10y-composite",
    version: str = "0.1.0",
) -> bytes:
    """Package the last seed's federated model with its calibration data."""
    from .service import export_model

    run = result.runs[-1]
    calibration = calibration_table(table, result.config, run.seed)
    provenance = {
        "experiment": result.config.name,
        "seed": run.seed,
        "rounds": result.config.rounds,
        "spec_hash": spec.spec_hash(),
    }
    return export_model(
        run.final_weights,
        spec,
        run.global_bounds,
        calibration,
        name=name,
        version=version,
        provenance=provenance,
    )


def run_experiment(cfg: ExperimentConfig, config_dir: Path, out_dir: Optional[Path] = None,
                   log=None) -> ExperimentResult:
    """All seeds, both arms; optionally write artifacts under out_dir."""
    table = pipeline_table(cfg, config_dir)
    if len(table) == 0:
        raise ExperimentError("dataset produced an empty table")
    result = ExperimentResult(config=cfg)
    for seed in cfg.seeds:
        result.runs.append(run_seed(table, cfg, seed))
        if log:
            run = result.runs[-1]
            log(
                f"seed {seed}: no-agg global C {run.no_aggregation.c_global:.4f}, "
                f"fedavg final global C {run.fedavg_rounds[-1].c_global:.4f}"
            )
    if out_dir is not None:
        write_artifacts(result, Path(out_dir))
    return result


def write_artifacts(result: ExperimentResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(result.config.to_json_obj(), fh, indent=2)
    with open(out_dir / "curves.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "round", "scope", "c_statistic"])
        for run in result.runs:
            for rm in run.fedavg_rounds:
                writer.writerow([run.seed, rm.round, "global", repr(rm.c_global)])
                for k, c in rm.c_local.items():
                    writer.writerow([run.seed, rm.round, f"client{k}", repr(c)])
            writer.writerow([run.seed, 0, "global_no_aggregation", repr(run.no_aggregation.c_global)])
            for k, c in run.no_aggregation.c_local.items():
                writer.writerow([run.seed, 0, f"client{k}_no_aggregation", repr(c)])
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(result.summary(), fh, indent=2)
    _write_summary_csv(result, out_dir / "summary.csv")


def _write_summary_csv(result: ExperimentResult, path: Path) -> None:
    summary = result.summary()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["evaluation", "without_aggregation", "fedavg_after_rounds"])
        for scope, arms in summary.items():
            cells = []
            for arm in ("without_aggregation", "fedavg"):
                s = arms[arm]
                cells.append(f"{s['mean']:.3f} ({s['ci_low']:.3f}-{s['ci_high']:.3f})")
            writer.writerow([scope] + cells)
