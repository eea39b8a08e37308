"""Station-local preprocessing: chained imputation and min-max normalization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .projection import FlatTable

IMPUTE_SWEEPS = 5


class ImputeError(Exception):
    """A column with no observed values cannot be imputed."""


@dataclass
class NormalizationBounds:
    """Per-feature (min, max) used to map raw cells into [0, 1]."""

    minima: List[float]
    maxima: List[float]

    def __post_init__(self):
        if len(self.minima) != len(self.maxima):
            raise ValueError("minima and maxima must have equal length")
        for lo, hi in zip(self.minima, self.maxima):
            if lo > hi:
                raise ValueError(f"bound pair out of order: ({lo}, {hi})")

    def __len__(self):
        return len(self.minima)

    def to_json_obj(self):
        return {"minima": list(self.minima), "maxima": list(self.maxima)}

    @classmethod
    def from_json_obj(cls, obj) -> "NormalizationBounds":
        return cls(minima=list(obj["minima"]), maxima=list(obj["maxima"]))

    def combine(self, other: "NormalizationBounds") -> "NormalizationBounds":
        """Elementwise envelope of two bounds (the federated min/max)."""
        if len(other) != len(self):
            raise ValueError("bounds length mismatch")
        return NormalizationBounds(
            minima=[min(a, b) for a, b in zip(self.minima, other.minima)],
            maxima=[max(a, b) for a, b in zip(self.maxima, other.maxima)],
        )

    def apply_value(self, j: int, value: float) -> float:
        lo, hi = self.minima[j], self.maxima[j]
        if hi == lo:
            return 0.0
        return (value - lo) / (hi - lo)


def _table_matrix(table: FlatTable) -> np.ndarray:
    out = np.full((len(table), table.n_columns), np.nan)
    for i, row in enumerate(table.rows):
        for j, v in enumerate(row):
            if v is not None:
                out[i, j] = v
    return out


def _matrix_table(table: FlatTable, X: np.ndarray) -> FlatTable:
    rows = [[None if np.isnan(v) else float(v) for v in row] for row in X]
    return FlatTable(
        columns=list(table.columns),
        rows=rows,
        time=list(table.time),
        event=list(table.event),
        ids=list(table.ids),
        categorical=list(table.categorical),
    )


def _column_mode(values: np.ndarray) -> float:
    levels, counts = np.unique(values, return_counts=True)
    return float(levels[np.argmax(counts)])


def impute(table: FlatTable, seed: int = 0) -> FlatTable:
    """Fill missing cells with chained per-column regressions.

    Initialization: column median (mode for categoricals). Then a fixed number
    of sweeps where each column with missing cells is regressed linearly on all
    other columns and only its missing cells are re-predicted. Observed cells
    never change; complete tables return unchanged. The procedure is
    deterministic; the seed parameter is kept for interface stability.
    """
    del seed  # deterministic: no stochastic step in the simplified chain
    X = _table_matrix(table)
    n, p = X.shape
    if n == 0 or p == 0:
        return table
    missing = np.isnan(X)
    if not missing.any():
        return table
    for j in range(p):
        observed = X[~missing[:, j], j]
        if observed.size == 0:
            raise ImputeError(f"column {table.columns[j]!r} is entirely missing")
        if missing[:, j].any():
            if table.categorical and table.categorical[j]:
                fill = _column_mode(observed)
            else:
                fill = float(np.median(observed))
            X[missing[:, j], j] = fill

    for _ in range(IMPUTE_SWEEPS):
        for j in range(p):
            rows = missing[:, j]
            if not rows.any() or rows.all():
                continue
            others = [k for k in range(p) if k != j]
            A = np.column_stack([X[:, others], np.ones(n)])
            coef, *_ = np.linalg.lstsq(A[~rows], X[~rows, j], rcond=None)
            X[rows, j] = A[rows] @ coef

    if table.categorical and any(table.categorical):
        for j in range(p):
            if table.categorical[j] and missing[:, j].any():
                levels = np.unique(X[~missing[:, j], j])
                cells = X[missing[:, j], j]
                nearest = levels[np.argmin(np.abs(cells[:, None] - levels[None, :]), axis=1)]
                X[missing[:, j], j] = nearest
    return _matrix_table(table, X)


def normalize(table: FlatTable) -> Tuple[FlatTable, NormalizationBounds]:
    """Min-max map of each feature to [0, 1]; constant columns map to 0.

    Requires a complete table (impute first). The returned bounds are reused
    verbatim at inference time.
    """
    X = _table_matrix(table)
    if np.isnan(X).any():
        raise ValueError("normalize requires a complete table; run impute first")
    if X.shape[0] == 0:
        raise ValueError("cannot normalize an empty table")
    minima = X.min(axis=0)
    maxima = X.max(axis=0)
    span = maxima - minima
    safe = np.where(span == 0.0, 1.0, span)
    X = (X - minima) / safe
    X[:, span == 0.0] = 0.0
    bounds = NormalizationBounds(minima=[float(v) for v in minima], maxima=[float(v) for v in maxima])
    return _matrix_table(table, X), bounds


def apply_bounds(table: FlatTable, bounds: NormalizationBounds, clip: bool = True) -> FlatTable:
    """Normalize with existing bounds (e.g. validation/test with train bounds)."""
    if len(bounds) != table.n_columns:
        raise ValueError("bounds length does not match column count")
    X = _table_matrix(table)
    if np.isnan(X).any():
        raise ValueError("apply_bounds requires a complete table; run impute first")
    lo = np.array(bounds.minima)
    hi = np.array(bounds.maxima)
    span = hi - lo
    safe = np.where(span == 0.0, 1.0, span)
    X = (X - lo) / safe
    X[:, span == 0.0] = 0.0
    if clip:
        X = np.clip(X, 0.0, 1.0)
    return _matrix_table(table, X)
