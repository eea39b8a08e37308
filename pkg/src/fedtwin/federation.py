"""Federated averaging over isolated data stations.

The server drives rounds of {broadcast weights, parallel local training,
collect updates, sample-weighted average}; clients are state machines that
never reveal raw rows, only weights, sample counts, and test predictions.
Two interchangeable transports carry the messages: a deterministic in-process
scheduler and length-prefixed JSON over local TCP sockets.

Round protocol: the initialization broadcast carries round 0; a client that
has completed r rounds accepts exactly Broadcast(round=r), trains, and replies
LocalUpdate(round=r+1) until the final round's broadcast (round == total
rounds), which it only adopts. A success transcript therefore holds the init
broadcast, one broadcast per round, and rounds x K local updates.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fhirpath import normalize_path
from .metrics import c_statistic
from .preprocess import NormalizationBounds
from .projection import ProjectionSpec
from .survival import ModelWeights, SurvivalBatch, TrainingConfig, forward, train_local


class ProtocolError(Exception):
    """Malformed or out-of-contract message traffic."""


class SessionError(Exception):
    """A federated session failed; names the round and client where known."""


# -- messages -----------------------------------------------------------------


@dataclass(frozen=True)
class Broadcast:
    round: int
    weights: ModelWeights


@dataclass(frozen=True)
class LocalUpdate:
    round: int
    client_id: int
    weights: ModelWeights
    n_train: int
    metrics: dict


@dataclass(frozen=True)
class Abort:
    reason: str
    round: int = -1
    client_id: int = -1


@dataclass(frozen=True)
class BoundsRequest:
    pass


@dataclass(frozen=True)
class BoundsReport:
    client_id: int
    bounds: NormalizationBounds


def encode_message(msg) -> bytes:
    if isinstance(msg, Broadcast):
        obj = {"type": "broadcast", "round": msg.round, "sender": "server",
               "payload": {"weights": msg.weights.to_json_obj()}}
    elif isinstance(msg, LocalUpdate):
        obj = {"type": "local_update", "round": msg.round, "sender": msg.client_id,
               "payload": {"weights": msg.weights.to_json_obj(), "n_train": msg.n_train,
                           "metrics": msg.metrics}}
    elif isinstance(msg, Abort):
        obj = {"type": "abort", "round": msg.round, "sender": msg.client_id,
               "payload": {"reason": msg.reason}}
    elif isinstance(msg, BoundsRequest):
        obj = {"type": "bounds_request", "round": -1, "sender": "server", "payload": {}}
    elif isinstance(msg, BoundsReport):
        obj = {"type": "bounds_report", "round": -1, "sender": msg.client_id,
               "payload": {"bounds": msg.bounds.to_json_obj()}}
    else:
        raise ProtocolError(f"cannot encode message of type {type(msg).__name__}")
    return json.dumps(obj).encode("utf-8")


def decode_message(data: bytes):
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable message: {exc}") from exc
    kind = obj.get("type")
    payload = obj.get("payload", {})
    if kind == "broadcast":
        return Broadcast(round=int(obj["round"]), weights=ModelWeights.from_json_obj(payload["weights"]))
    if kind == "local_update":
        return LocalUpdate(
            round=int(obj["round"]),
            client_id=int(obj["sender"]),
            weights=ModelWeights.from_json_obj(payload["weights"]),
            n_train=int(payload["n_train"]),
            metrics=payload.get("metrics", {}),
        )
    if kind == "abort":
        return Abort(reason=payload.get("reason", ""), round=int(obj.get("round", -1)),
                     client_id=obj.get("sender", -1) if isinstance(obj.get("sender"), int) else -1)
    if kind == "bounds_request":
        return BoundsRequest()
    if kind == "bounds_report":
        return BoundsReport(client_id=int(obj["sender"]),
                            bounds=NormalizationBounds.from_json_obj(payload["bounds"]))
    raise ProtocolError(f"unknown message type {kind!r}")


# -- configuration and client state ----------------------------------------------


@dataclass(frozen=True)
class FedConfig:
    n_clients: int
    rounds: int = 20
    input_dim: int = 15
    training: TrainingConfig = field(default_factory=TrainingConfig)
    spec_hash: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("need at least one client")
        if self.rounds < 1:
            raise ValueError("need at least one round")


def round_seed(base_seed: int, round_number: int) -> int:
    """Stable per-round seed stream shared by any client with the same base."""
    return int(np.random.SeedSequence([base_seed, round_number]).generate_state(1)[0])


@dataclass
class ClientState:
    """Station-side state: local splits, policy allow-list, current weights."""

    client_id: int
    train: SurvivalBatch
    valid: SurvivalBatch
    test: SurvivalBatch
    total_rounds: int
    training: TrainingConfig
    bounds: Optional[NormalizationBounds] = None
    allow_list: Optional[List[str]] = None
    weights: Optional[ModelWeights] = None
    rounds_done: int = 0

    @property
    def n_train(self) -> int:
        return len(self.train)

    def train_once(self, start: ModelWeights, round_number: int) -> ModelWeights:
        cfg = TrainingConfig(
            learning_rate=self.training.learning_rate,
            epochs=self.training.epochs,
            dropout=self.training.dropout,
            seed=round_seed(self.training.seed, round_number),
            patience=self.training.patience,
        )
        updated, _ = train_local(start, self.train, self.valid, cfg)
        return updated

    def test_metrics(self, weights: ModelWeights) -> dict:
        pred = forward(weights, self.test.X, mode="infer")
        metrics = {
            "test_pred": [float(v) for v in pred],
            "test_time": [float(v) for v in self.test.time],
            "test_event": [bool(v) for v in self.test.event],
        }
        try:
            metrics["c_local"] = c_statistic(pred, self.test.time, self.test.event)
        except Exception:
            metrics["c_local"] = float("nan")
        return metrics


def client_handle(msg, state: ClientState):
    """Client state machine: one reply (or None) per incoming message."""
    if isinstance(msg, BoundsRequest):
        if state.bounds is None:
            return Abort(reason="client has no normalization bounds", client_id=state.client_id)
        return BoundsReport(client_id=state.client_id, bounds=state.bounds)
    if not isinstance(msg, Broadcast):
        return Abort(reason=f"unexpected message {type(msg).__name__}", client_id=state.client_id)
    if msg.round != state.rounds_done:
        return Abort(
            reason=f"round mismatch: expected {state.rounds_done}, got {msg.round}",
            round=msg.round,
            client_id=state.client_id,
        )
    if msg.weights.input_dim != state.train.X.shape[1]:
        return Abort(
            reason=f"shape mismatch: model expects {msg.weights.input_dim} features, "
            f"station provides {state.train.X.shape[1]}",
            round=msg.round,
            client_id=state.client_id,
        )
    state.weights = msg.weights
    if msg.round >= state.total_rounds:
        return None  # final aggregated model adopted; session over
    round_number = msg.round + 1
    updated = state.train_once(msg.weights, round_number)
    state.weights = updated
    state.rounds_done = round_number
    return LocalUpdate(
        round=round_number,
        client_id=state.client_id,
        weights=updated,
        n_train=state.n_train,
        metrics=state.test_metrics(updated),
    )


# -- aggregation -----------------------------------------------------------------


def aggregate(updates: Sequence[Tuple[ModelWeights, int]]) -> ModelWeights:
    """Sample-weighted average of client weights, correctly rounded.

    Each element is computed as sum(n_k * w_k) / n in exact rational
    arithmetic and rounded to double once, so the result matches any
    high-precision oracle within one ulp, K=1 is the exact identity, and the
    output lies componentwise inside the clients' envelope.
    """
    if not updates:
        raise ProtocolError("nothing to aggregate")
    shapes = [tuple(tuple(W.shape) for W, _ in w.layers) for w, _ in updates]
    if any(s != shapes[0] for s in shapes):
        raise ProtocolError("weight shape mismatch across clients")
    counts = [n for _, n in updates]
    if any(n <= 0 for n in counts):
        raise ProtocolError("sample counts must be positive")
    total = sum(counts)
    if len(updates) == 1:
        return updates[0][0].copy()

    layers = []
    for layer_i in range(len(updates[0][0].layers)):
        shape = updates[0][0].layers[layer_i][0].shape
        flats_w = [w.layers[layer_i][0].ravel() for w, _ in updates]
        flats_b = [w.layers[layer_i][1] for w, _ in updates]
        W = np.array(_weighted_mean_exact(flats_w, counts, total)).reshape(shape)
        b = np.array(_weighted_mean_exact(flats_b, counts, total))
        layers.append((W, b))
    return ModelWeights(layers)


def _weighted_mean_exact(vectors, counts, total):
    length = len(vectors[0])
    out = []
    for i in range(length):
        acc = Fraction(0)
        for vec, n in zip(vectors, counts):
            acc += n * Fraction(float(vec[i]))
        out.append(float(acc / total))
    return out


# -- policy ------------------------------------------------------------------------


def policy_check(spec: ProjectionSpec, allow: Sequence[str]) -> List[str]:
    """Columns whose expressions are not covered by the station's allow-list.

    Comparison is on canonical (whitespace-normalized) expression text. An
    empty result means the station may join the session.
    """
    allowed = {normalize_path(text) for text in allow}
    violations = []
    for col in spec.columns:
        if str(col.expr) not in allowed:
            violations.append(col.name)
    outcome_names = ["outcome.baseline", "outcome.last_follow_up"] + [
        f"outcome.event[{i}]" for i in range(len(spec.outcome.event_exprs))
    ]
    outcome_exprs = [spec.outcome.baseline_expr, spec.outcome.last_follow_up_expr] + list(
        spec.outcome.event_exprs
    )
    for name, expr in zip(outcome_names, outcome_exprs):
        if str(expr) not in allowed:
            violations.append(name)
    return violations


# -- transports ---------------------------------------------------------------------


@dataclass
class TranscriptEntry:
    direction: str  # "broadcast" | "reply"
    client_id: int
    message: object
    encoded: bytes


class InProcessTransport:
    """Deterministic scheduler: clients run synchronously in ascending id order.

    Messages still pass through the wire encoding so payload schemas are
    exercised identically to the socket transport.
    """

    def __init__(self, clients: Dict[int, ClientState]):
        self.clients = dict(sorted(clients.items()))
        self.transcript: List[TranscriptEntry] = []
        self._pending: Dict[int, object] = {}

    def client_ids(self) -> List[int]:
        return list(self.clients)

    def broadcast(self, msg) -> None:
        for client_id, state in self.clients.items():
            encoded = encode_message(msg)
            self.transcript.append(TranscriptEntry("broadcast", client_id, msg, encoded))
            reply = client_handle(decode_message(encoded), state)
            if reply is not None:
                wire = encode_message(reply)
                decoded = decode_message(wire)
                self.transcript.append(TranscriptEntry("reply", client_id, decoded, wire))
                self._pending[client_id] = decoded

    def collect(self, timeout: Optional[float] = None) -> Dict[int, object]:
        out, self._pending = self._pending, {}
        return out

    def close(self) -> None:
        pass


class ConnectionClosed(Exception):
    """Peer closed the connection at a frame boundary (clean shutdown)."""


def _send_frame(sock: socket.socket, data: bytes) -> None:
    sock.sendall(struct.pack(">I", len(data)) + data)


def _recv_exact(sock: socket.socket, size: int, at_boundary: bool) -> bytes:
    buf = b""
    while len(buf) < size:
        chunk = sock.recv(size - len(buf))
        if not chunk:
            if at_boundary and not buf:
                raise ConnectionClosed()
            raise ProtocolError("connection closed mid-frame")
        buf += chunk
    return buf


def _recv_frame(sock: socket.socket) -> bytes:
    (length,) = struct.unpack(">I", _recv_exact(sock, 4, at_boundary=True))
    return _recv_exact(sock, length, at_boundary=False)


class SocketTransport:
    """Length-prefixed JSON over local TCP; one connection per station."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, n_clients: int = 1,
                 timeout: float = 60.0):
        self.timeout = timeout
        self.n_clients = n_clients
        self.transcript: List[TranscriptEntry] = []
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(n_clients)
        self.address = self._listener.getsockname()
        self._connections: Dict[int, socket.socket] = {}

    def accept_clients(self) -> None:
        self._listener.settimeout(self.timeout)
        for _ in range(self.n_clients):
            conn, _ = self._listener.accept()
            conn.settimeout(self.timeout)
            hello = json.loads(_recv_frame(conn).decode("utf-8"))
            if hello.get("type") != "hello":
                raise ProtocolError("expected hello frame")
            self._connections[int(hello["sender"])] = conn
        self._connections = dict(sorted(self._connections.items()))

    def client_ids(self) -> List[int]:
        return list(self._connections)

    def broadcast(self, msg) -> None:
        encoded = encode_message(msg)
        for client_id, conn in self._connections.items():
            self.transcript.append(TranscriptEntry("broadcast", client_id, msg, encoded))
            _send_frame(conn, encoded)

    def collect(self, timeout: Optional[float] = None) -> Dict[int, object]:
        out: Dict[int, object] = {}
        for client_id, conn in self._connections.items():
            conn.settimeout(timeout or self.timeout)
            try:
                wire = _recv_frame(conn)
            except socket.timeout as exc:
                raise SessionError(f"client {client_id} timed out") from exc
            msg = decode_message(wire)
            self.transcript.append(TranscriptEntry("reply", client_id, msg, wire))
            out[client_id] = msg
        return out

    def close(self) -> None:
        for conn in self._connections.values():
            try:
                conn.close()
            except OSError:
                pass
        self._listener.close()


def run_socket_client(host: str, port: int, state: ClientState, timeout: float = 60.0) -> None:
    """Station-side loop for the socket transport.

    Keeps listening after the final round (the server may still gather bounds)
    and exits when the server closes the connection or the client aborts.
    """
    sock = socket.create_connection((host, port), timeout=timeout)
    try:
        _send_frame(sock, json.dumps({"type": "hello", "sender": state.client_id}).encode())
        while True:
            try:
                msg = decode_message(_recv_frame(sock))
            except ConnectionClosed:
                return
            reply = client_handle(msg, state)
            if reply is None:
                continue
            _send_frame(sock, encode_message(reply))
            if isinstance(reply, Abort):
                return
    finally:
        sock.close()


def start_socket_clients(transport: SocketTransport, states: Sequence[ClientState]):
    """Spawn one daemon thread per station pointing at the transport's address."""
    host, port = transport.address
    threads = []
    for state in states:
        thread = threading.Thread(
            target=run_socket_client, args=(host, port, state), daemon=True
        )
        thread.start()
        threads.append(thread)
    transport.accept_clients()
    return threads


# -- server ------------------------------------------------------------------------


@dataclass
class RoundMetrics:
    round: int
    c_global: float
    c_local: Dict[int, float]


def _pooled_c(updates: Dict[int, LocalUpdate]) -> float:
    pred, time, event = [], [], []
    for client_id in sorted(updates):
        m = updates[client_id].metrics
        pred.extend(m["test_pred"])
        time.extend(m["test_time"])
        event.extend(m["test_event"])
    return c_statistic(pred, time, event)


def server_run(cfg: FedConfig, transport, initial: Optional[ModelWeights] = None):
    """Drive a full federated session; returns (final weights, per-round metrics).

    Every round is all-or-nothing: a missing, aborted, or out-of-contract
    reply fails the session naming the round and client.
    """
    from .survival import init_weights

    weights = initial if initial is not None else init_weights(cfg.input_dim, cfg.seed)
    client_ids = transport.client_ids()
    if len(client_ids) != cfg.n_clients:
        raise SessionError(
            f"expected {cfg.n_clients} registered clients, found {len(client_ids)}"
        )
    history: List[RoundMetrics] = []
    transport.broadcast(Broadcast(round=0, weights=weights))
    for round_number in range(1, cfg.rounds + 1):
        replies = transport.collect()
        updates: Dict[int, LocalUpdate] = {}
        for client_id in client_ids:
            msg = replies.get(client_id)
            if msg is None:
                raise SessionError(f"round {round_number}: no reply from client {client_id}")
            if isinstance(msg, Abort):
                raise SessionError(
                    f"round {round_number}: client {client_id} aborted: {msg.reason}"
                )
            if not isinstance(msg, LocalUpdate) or msg.round != round_number:
                raise SessionError(
                    f"round {round_number}: unexpected reply {msg!r} from client {client_id}"
                )
            updates[client_id] = msg
        ordered = [(updates[k].weights, updates[k].n_train) for k in sorted(updates)]
        weights = aggregate(ordered)
        history.append(
            RoundMetrics(
                round=round_number,
                c_global=_pooled_c(updates),
                c_local={k: updates[k].metrics.get("c_local", float("nan")) for k in sorted(updates)},
            )
        )
        transport.broadcast(Broadcast(round=round_number, weights=weights))
    return weights, history


def federated_minmax(transport) -> NormalizationBounds:
    """Envelope of station normalization bounds, gathered over the message channel."""
    transport.broadcast(BoundsRequest())
    replies = transport.collect()
    combined: Optional[NormalizationBounds] = None
    for client_id in transport.client_ids():
        msg = replies.get(client_id)
        if not isinstance(msg, BoundsReport):
            raise SessionError(f"client {client_id} did not report bounds: {msg!r}")
        combined = msg.bounds if combined is None else combined.combine(msg.bounds)
    if combined is None:
        raise SessionError("no bounds collected")
    return combined


def run_no_aggregation(states: Sequence[ClientState], initial: ModelWeights):
    """Isolated-station baseline: one local training each, no weight exchange.

    Returns (per-client weights, RoundMetrics). No transport is touched, so a
    tapped transcript stays empty.
    """
    per_client: Dict[int, ModelWeights] = {}
    updates: Dict[int, LocalUpdate] = {}
    for state in sorted(states, key=lambda s: s.client_id):
        trained = state.train_once(initial, round_number=1)
        per_client[state.client_id] = trained
        updates[state.client_id] = LocalUpdate(
            round=1,
            client_id=state.client_id,
            weights=trained,
            n_train=state.n_train,
            metrics=state.test_metrics(trained),
        )
    metrics = RoundMetrics(
        round=1,
        c_global=_pooled_c(updates),
        c_local={k: updates[k].metrics["c_local"] for k in sorted(updates)},
    )
    return per_client, metrics
