"""Statistical class-transition model.

A segment-level bigram with add-one smoothing: transitions are counted
between consecutive distinct-class segments, so the diagonal carries only
smoothing mass. Supplies the transition block of the policy observation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

_ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class TransitionTable:
    """Row-stochastic class-transition matrix plus a start distribution."""

    matrix: np.ndarray
    start: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        start = np.ascontiguousarray(self.start, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("transition matrix must be square")
        if start.shape != (matrix.shape[0],):
            raise ValueError("start distribution size must match the matrix")
        if (matrix <= 0).any() or (start <= 0).any():
            raise ValueError("smoothed probabilities must be strictly positive")
        if np.abs(matrix.sum(axis=1) - 1.0).max() > _ROW_SUM_TOL:
            raise ValueError("matrix rows must sum to 1")
        if abs(start.sum() - 1.0) > _ROW_SUM_TOL:
            raise ValueError("start distribution must sum to 1")
        matrix.flags.writeable = False
        start.flags.writeable = False
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "start", start)

    @property
    def num_classes(self) -> int:
        return int(self.matrix.shape[0])


def fit(label_sequences: Sequence[np.ndarray], num_classes: int) -> TransitionTable:
    """Count segment-level transitions over a corpus, with add-one smoothing.

    ``P(j | i) = (count(i -> j) + 1) / (count(i -> .) + C)``; the start
    distribution is estimated the same way from each sequence's first
    segment.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be at least 2")
    sequences = list(label_sequences)
    if not sequences:
        raise ValueError("cannot fit a transition table on an empty corpus")
    counts = np.zeros((num_classes, num_classes), dtype=np.float64)
    start_counts = np.zeros(num_classes, dtype=np.float64)
    for labels in sequences:
        arr = np.asarray(labels, dtype=np.int64)
        if arr.size == 0:
            raise ValueError("corpus contains an empty label sequence")
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"labels outside [0, {num_classes})")
        run_classes = arr[np.concatenate(([True], arr[1:] != arr[:-1]))]
        start_counts[run_classes[0]] += 1
        np.add.at(counts, (run_classes[:-1], run_classes[1:]), 1)
    matrix = (counts + 1.0) / (counts.sum(axis=1, keepdims=True) + num_classes)
    start = (start_counts + 1.0) / (len(sequences) + num_classes)
    return TransitionTable(matrix=matrix, start=start)


def transition_probs(table: TransitionTable, prev_label: Optional[int]) -> np.ndarray:
    """Next-class distribution given the previous executed class.

    Before the first action (``prev_label is None``) the start distribution
    is returned.
    """
    if prev_label is None:
        return table.start
    if not 0 <= prev_label < table.num_classes:
        raise ValueError(f"class {prev_label} outside [0, {table.num_classes})")
    return table.matrix[prev_label]
