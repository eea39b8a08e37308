"""Deep Cox proportional-hazards model.

A feedforward ReLU network maps predictor vectors to a scalar log-risk; its
training objective is the negative mean log partial likelihood over event
subjects (Breslow convention for tied event times, log-sum-exp stabilized).
Training is full-batch gradient descent with inverted dropout and validation
based early stopping. Everything is deterministic given (seed, config).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

HIDDEN_WIDTH = 32


class ModelShapeError(Exception):
    pass


class LossUndefinedError(Exception):
    """Cox partial likelihood needs at least one event."""


@dataclass
class ModelWeights:
    """Dense layer parameters for the [p, 32, 32, 1] architecture."""

    layers: List[Tuple[np.ndarray, np.ndarray]]  # (weight matrix, bias vector)

    def __post_init__(self):
        for i in range(len(self.layers) - 1):
            out_dim = self.layers[i][0].shape[1]
            next_in = self.layers[i + 1][0].shape[0]
            if out_dim != next_in:
                raise ModelShapeError(
                    f"layer {i} output dim {out_dim} != layer {i + 1} input dim {next_in}"
                )
        for W, b in self.layers:
            if b.shape != (W.shape[1],):
                raise ModelShapeError(f"bias shape {b.shape} does not match weight {W.shape}")
        if self.layers[-1][0].shape[1] != 1:
            raise ModelShapeError("final layer must output a single log-risk")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def architecture(self) -> list:
        return [self.input_dim] + [W.shape[1] for W, _ in self.layers]

    def copy(self) -> "ModelWeights":
        return ModelWeights([(W.copy(), b.copy()) for W, b in self.layers])

    def to_json_obj(self) -> dict:
        return {
            "architecture": self.architecture,
            "layers": [
                {"shape": list(W.shape), "weights": W.ravel().tolist(), "bias": b.tolist()}
                for W, b in self.layers
            ],
        }

    @classmethod
    def from_json_obj(cls, obj) -> "ModelWeights":
        layers = []
        for layer in obj["layers"]:
            shape = tuple(layer["shape"])
            W = np.array(layer["weights"], dtype=float).reshape(shape)
            b = np.array(layer["bias"], dtype=float)
            if b.shape != (shape[1],):
                raise ModelShapeError(f"bias length {b.shape} does not match shape {shape}")
            layers.append((W, b))
        return cls(layers)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    dropout: float = 0.25
    seed: int = 0
    patience: int = 10

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class SurvivalBatch:
    """Preprocessed rows: normalized features plus follow-up outcome."""

    X: np.ndarray  # (n, p)
    time: np.ndarray  # (n,)
    event: np.ndarray  # (n,) bool

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.time = np.asarray(self.time, dtype=float)
        self.event = np.asarray(self.event, dtype=bool)
        n = self.X.shape[0]
        if self.time.shape != (n,) or self.event.shape != (n,):
            raise ValueError("time/event length must match the row count")

    def __len__(self):
        return self.X.shape[0]


def init_weights(p: int, seed: int, hidden: Sequence[int] = (HIDDEN_WIDTH, HIDDEN_WIDTH)) -> ModelWeights:
    """Symmetric scaled-uniform initialization, scale sqrt(6/(fan_in+fan_out));
    biases start at zero. Deterministic per seed."""
    if p < 1:
        raise ValueError(f"input dimension must be >= 1, got {p}")
    rng = np.random.default_rng(seed)
    dims = [p] + list(hidden) + [1]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-scale, scale, size=(fan_in, fan_out))
        layers.append((W, np.zeros(fan_out)))
    return ModelWeights(layers)


def _dropout_masks(w: ModelWeights, dropout: float, rng) -> Optional[list]:
    """Inverted-dropout masks for each hidden activation, pre-scaled by 1/keep."""
    if dropout == 0.0 or rng is None:
        return None
    keep = 1.0 - dropout
    masks = []
    for W, _ in w.layers[:-1]:
        masks.append(rng.binomial(1, keep, size=W.shape[1]).astype(float) / keep)
    return masks


def _forward_cached(w: ModelWeights, X: np.ndarray, masks):
    """Forward pass keeping the intermediates needed for backprop."""
    cache = []
    a = X
    n_hidden = len(w.layers) - 1
    for i, (W, b) in enumerate(w.layers):
        z = a @ W + b
        if i < n_hidden:
            h = np.maximum(z, 0.0)
            if masks is not None:
                out = h * masks[i]
            else:
                out = h
            cache.append((a, z, out))
            a = out
        else:
            cache.append((a, z, z))
            a = z
    return a[:, 0], cache


def forward(w: ModelWeights, x, mode: str = "infer", masks=None) -> np.ndarray:
    """Log-risk for a vector (returns a scalar) or row matrix (returns a vector).

    Inference applies no dropout; training uses inverted dropout so the two
    modes agree in expectation. Pass explicit pre-scaled masks for a
    reproducible training step.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != w.input_dim:
        raise ValueError(f"expected {w.input_dim} features, got {X.shape[1]}")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer":
        masks = None
    eta, _ = _forward_cached(w, X, masks)
    return float(eta[0]) if single else eta


def _risk_set_terms(eta: np.ndarray, time: np.ndarray, event: np.ndarray):
    """Per-subject pieces of the Breslow partial likelihood.

    Returns (loss, dloss_deta). Risk-set denominators are cumulative sums over
    descending time; subjects tied with an event time belong to its risk set.
    """
    n = len(eta)
    if not event.any():
        raise LossUndefinedError("no events in batch: partial likelihood undefined")
    order = np.argsort(time, kind="stable")
    t_sorted = time[order]
    e_sorted = event[order]
    eta_sorted = eta[order]

    m = float(np.max(eta_sorted))
    exp_shift = np.exp(eta_sorted - m)

    # suffix sums of exp(eta - m); risk set of time t = all with time >= t
    suffix = np.cumsum(exp_shift[::-1])[::-1]
    # map each subject to the first index of its tie group (ascending times)
    group_start = np.searchsorted(t_sorted, t_sorted, side="left")
    denom_shift = suffix[group_start]  # sum over risk set, shifted by exp(-m)

    event_idx = np.flatnonzero(e_sorted)
    n_events = len(event_idx)
    log_denom = m + np.log(denom_shift[event_idx])
    loss = -float(np.sum(eta_sorted[event_idx] - log_denom)) / n_events

    # dL/deta_j = -(1/m_ev) * (event_j - exp(eta_j - m) * sum_{events i: t_i <= t_j} 1/denom_shift_i)
    inv_denom = np.zeros(n)
    inv_denom[event_idx] = 1.0 / denom_shift[event_idx]
    cum_inv = np.cumsum(inv_denom)
    # include every event with time <= t_j: take the cumulative through j's tie-group end
    group_end = np.searchsorted(t_sorted, t_sorted, side="right") - 1
    weight = exp_shift * cum_inv[group_end]
    d_sorted = -(e_sorted.astype(float) - weight) / n_events

    dloss = np.empty(n)
    dloss[order] = d_sorted
    return loss, dloss


def cox_loss(log_risks, time, event) -> float:
    """Negative mean log partial likelihood over event subjects."""
    eta = np.asarray(log_risks, dtype=float)
    t = np.asarray(time, dtype=float)
    e = np.asarray(event, dtype=bool)
    if not (len(eta) == len(t) == len(e)):
        raise ValueError("log_risks, time, and event must have equal length")
    loss, _ = _risk_set_terms(eta, t, e)
    return loss


def grad(w: ModelWeights, batch: SurvivalBatch, cfg: TrainingConfig, masks=None):
    """(loss, gradients shaped like w) for the full batch.

    Exact reverse-mode differentiation of cox_loss(forward(X)). Dropout masks,
    when given, are the fixed per-step masks drawn from the config's seed
    stream by the training loop.
    """
    eta, cache = _forward_cached(w, batch.X, masks)
    loss, dloss_deta = _risk_set_terms(eta, batch.time, batch.event)

    grads = [None] * len(w.layers)
    delta = dloss_deta[:, None]  # gradient w.r.t. the final affine output
    for i in reversed(range(len(w.layers))):
        W, _ = w.layers[i]
        a_in, z, _ = cache[i]
        if i == len(w.layers) - 1:
            dz = delta
        else:
            dout = delta
            if masks is not None:
                dout = dout * masks[i][None, :]
            dz = dout * (z > 0.0)
        grads[i] = (a_in.T @ dz, dz.sum(axis=0))
        delta = dz @ W.T
    return loss, grads


def _apply_gradient(w: ModelWeights, grads, lr: float) -> ModelWeights:
    return ModelWeights(
        [(W - lr * gW, b - lr * gb) for (W, b), (gW, gb) in zip(w.layers, grads)]
    )


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    valid_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


def train_local(
    w: ModelWeights, train: SurvivalBatch, valid: SurvivalBatch, cfg: TrainingConfig
) -> Tuple[ModelWeights, TrainingHistory]:
    """Full-batch gradient descent returning the best-validation weights.

    Runs for cfg.epochs steps or until the validation loss has not improved
    for cfg.patience consecutive epochs. Deterministic per cfg.seed.
    """
    rng = np.random.default_rng(cfg.seed)
    history = TrainingHistory()
    if cfg.epochs == 0:
        return w, history
    best = w.copy()
    best_valid = float(_valid_loss(w, valid))
    since_best = 0
    current = w
    for _ in range(cfg.epochs):
        masks = _dropout_masks(current, cfg.dropout, rng)
        loss, grads = grad(current, train, cfg, masks=masks)
        current = _apply_gradient(current, grads, cfg.learning_rate)
        v = float(_valid_loss(current, valid))
        history.train_loss.append(float(loss))
        history.valid_loss.append(v)
        if v < best_valid:
            best_valid = v
            best = current.copy()
            history.best_epoch = len(history.valid_loss) - 1
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                history.stopped_early = True
                break
    return best, history


def _valid_loss(w: ModelWeights, valid: SurvivalBatch) -> float:
    eta = forward(w, valid.X, mode="infer")
    return cox_loss(eta, valid.time, valid.event)
