"""Deterministic episode environment over a labelled sequence.

The agent walks a sequence from frame 0 to T, committing (step, class)
actions. Transitions are deterministic; rewards need ground-truth labels and
therefore exist only in training/evaluation mode.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ActionSpec


@dataclass(frozen=True)
class EpisodeState:
    """Agent position plus the class of the last executed action."""

    position: int
    prev_label: Optional[int] = None
    done: bool = False


def initial_state() -> EpisodeState:
    return EpisodeState(position=0, prev_label=None, done=False)


def step(state: EpisodeState, action: ActionSpec, num_frames: int) -> EpisodeState:
    """Advance by ``min(step, T - position)`` frames; mark done at T."""
    if state.done:
        raise ValueError("cannot step a finished episode")
    if state.position >= num_frames:
        raise ValueError("state position is past the end of the sequence")
    new_position = state.position + min(action.step, num_frames - state.position)
    return EpisodeState(
        position=new_position,
        prev_label=action.label,
        done=new_position >= num_frames,
    )


def policy_reward(labels: np.ndarray, t: int, action: ActionSpec, alpha: float) -> float:
    """Step-length bonus minus the count of wrongly labelled frames.

    Over the clipped span ``[t, t + min(k, T - t))`` the reward is
    ``alpha * k' - #(y != c)``: it incites larger steps while penalising
    wrong predictions.
    """
    labels = np.asarray(labels)
    if not 0 <= t < labels.size:
        raise ValueError(f"frame {t} outside [0, {labels.size})")
    span = labels[t : t + action.step]
    wrong = int(np.count_nonzero(span != action.label))
    return alpha * span.size - wrong


def value_reward(labels: np.ndarray, t: int, action: ActionSpec) -> float:
    """Signed frame count: correct minus incorrect over the clipped span."""
    labels = np.asarray(labels)
    if not 0 <= t < labels.size:
        raise ValueError(f"frame {t} outside [0, {labels.size})")
    span = labels[t : t + action.step]
    correct = int(np.count_nonzero(span == action.label))
    return float(2 * correct - span.size)


def episode_mean_reward(labels: np.ndarray, conjectured: np.ndarray) -> float:
    """Per-frame mean of the signed correctness, always in [-1, 1]."""
    labels = np.asarray(labels)
    conjectured = np.asarray(conjectured)
    if labels.shape != conjectured.shape or labels.size == 0:
        raise ValueError("label arrays must be nonempty and of equal length")
    correct = int(np.count_nonzero(labels == conjectured))
    return float(2 * correct - labels.size) / labels.size


@dataclass
class TrajectoryStep:
    state: EpisodeState
    action: ActionSpec
    reward: float


@dataclass
class Trajectory:
    """One completed episode: the executed steps and the resulting labels."""

    steps: list[TrajectoryStep] = field(default_factory=list)
    predicted_labels: Optional[np.ndarray] = None

    @property
    def total_reward(self) -> float:
        return float(sum(s.reward for s in self.steps))
