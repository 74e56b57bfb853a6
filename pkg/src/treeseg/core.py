"""Shared domain types and the label/segment/action conversions.

Everything here is immutable after construction and safe to share across
concurrent evaluation workers.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class EngineConfig:
    """Engine-wide settings.

    The defaults are the reference operating point: 10 classes, step pair
    (4, 21), step-reward weight 0.1, search threshold 0.98, exploration
    constant 1.5 and 10 simulations per search.
    """

    feature_dim: int
    num_classes: int = 10
    small_step: int = 4
    large_step: int = 21
    alpha: float = 0.1
    confidence_threshold: float = 0.98
    c_puct: float = 1.5
    num_simulations: int = 10
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be a positive integer")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.small_step < 1 or self.large_step <= self.small_step:
            raise ValueError("steps must satisfy 0 < small_step < large_step")
        if not 0.0 < self.confidence_threshold:
            raise ValueError("confidence_threshold must be positive")
        if self.c_puct < 0.0:
            raise ValueError("c_puct must be nonnegative")
        # The search itself is well defined at 0 simulations (root expansion
        # only); the ablation sweep relies on that case.
        if self.num_simulations < 0:
            raise ValueError("num_simulations must be nonnegative")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be an unsigned integer")

    @property
    def num_actions(self) -> int:
        """Size of the composite action space: both steps times all classes."""
        return 2 * self.num_classes

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_hash(cfg: EngineConfig) -> str:
    """Short stable digest of a configuration, for checkpoint provenance."""
    payload = json.dumps(cfg.as_dict(), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class ActionSpec:
    """Composite action: advance ``step`` frames, labelling them ``label``."""

    step: int
    label: int


def flat_index(action: ActionSpec, cfg: EngineConfig) -> int:
    """Map an action to its canonical index in ``[0, 2C)``.

    Small steps occupy ``[0, C)``, large steps ``[C, 2C)``; within each block
    the index is the class id.
    """
    if not 0 <= action.label < cfg.num_classes:
        raise ValueError(f"action label {action.label} outside [0, {cfg.num_classes})")
    if action.step == cfg.small_step:
        return action.label
    if action.step == cfg.large_step:
        return cfg.num_classes + action.label
    raise ValueError(f"action step {action.step} is neither {cfg.small_step} nor {cfg.large_step}")


def action_from_index(index: int, cfg: EngineConfig) -> ActionSpec:
    """Inverse of :func:`flat_index`."""
    if not 0 <= index < cfg.num_actions:
        raise ValueError(f"action index {index} outside [0, {cfg.num_actions})")
    if index < cfg.num_classes:
        return ActionSpec(step=cfg.small_step, label=index)
    return ActionSpec(step=cfg.large_step, label=index - cfg.num_classes)


@dataclass(frozen=True)
class Segment:
    """Half-open frame interval ``[start, end)`` carrying one class."""

    start: int
    end: int
    label: int

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise ValueError(f"segment [{self.start}, {self.end}) is empty")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class LabeledSequence:
    """A feature sequence with optional per-frame ground-truth labels.

    ``features`` is a T x F float32 matrix (stored read-only); ``labels``,
    when present, is a length-T integer array. ``group_id`` is an opaque tag
    used only for split-by-group evaluation.
    """

    features: np.ndarray
    labels: Optional[np.ndarray] = None
    group_id: str = ""

    def __post_init__(self) -> None:
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValueError("features must be a nonempty T x F matrix")
        if not np.isfinite(feats).all():
            raise ValueError("features must be finite")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
        if self.labels is not None:
            labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if labels.shape != (feats.shape[0],):
                raise ValueError("labels must have one entry per frame")
            if labels.min() < 0:
                raise ValueError("labels must be nonnegative class ids")
            labels.flags.writeable = False
            object.__setattr__(self, "labels", labels)

    @property
    def num_frames(self) -> int:
        return int(self.features.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def has_labels(self) -> bool:
        return self.labels is not None


def segments_from_labels(labels: Sequence[int] | np.ndarray) -> list[Segment]:
    """Run-length encode a per-frame label array into segments."""
    arr = np.asarray(labels, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("labels must be a nonempty 1-D array")
    boundaries = np.flatnonzero(arr[1:] != arr[:-1]) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [arr.size]))
    return [Segment(int(s), int(e), int(arr[s])) for s, e in zip(starts, ends)]


def labels_from_segments(segments: Sequence[Segment]) -> np.ndarray:
    """Inverse of :func:`segments_from_labels`; segments must tile [0, T)."""
    if not segments:
        raise ValueError("segment list is empty")
    out = np.empty(segments[-1].end, dtype=np.int64)
    cursor = 0
    for seg in segments:
        if seg.start != cursor:
            raise ValueError(f"segments do not tile: gap or overlap at frame {cursor}")
        out[seg.start : seg.end] = seg.label
        cursor = seg.end
    return out


def labels_from_actions(actions: Sequence[ActionSpec], num_frames: int) -> np.ndarray:
    """Expand executed actions into per-frame labels of length ``num_frames``.

    The final action is clipped at the sequence end; actions must cover the
    whole sequence and none may start past it.
    """
    if num_frames < 1:
        raise ValueError("num_frames must be positive")
    out = np.empty(num_frames, dtype=np.int64)
    cursor = 0
    for action in actions:
        if cursor >= num_frames:
            raise ValueError("actions continue past the end of the sequence")
        span = min(action.step, num_frames - cursor)
        out[cursor : cursor + span] = action.label
        cursor += span
    if cursor < num_frames:
        raise ValueError(f"actions cover only {cursor} of {num_frames} frames")
    return out
