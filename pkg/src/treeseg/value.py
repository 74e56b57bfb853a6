"""Recurrent value model over (feature, conjectured class) sequences.

One LSTM layer feeds a fully connected layer and a tanh scalar head, so
every per-frame output lies strictly in (-1, 1). The per-frame target is an
episode-level mean-reward scalar broadcast across the frames; training
minimises mean squared error with the Adam optimizer over random windows
whose length follows an increasing curriculum.

Gate layout in the stacked weight matrices is (input, forget, candidate,
output).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import EngineConfig, LabeledSequence, action_from_index
from .env import episode_mean_reward
from .optim import Adam

LstmState = tuple[np.ndarray, np.ndarray]  # (hidden, cell)


def assemble_value_sequence(
    seq: LabeledSequence, conjectured: np.ndarray, num_classes: int
) -> np.ndarray:
    """Per-frame concatenation of features and a conjectured-class one-hot."""
    conjectured = np.asarray(conjectured, dtype=np.int64)
    if conjectured.shape != (seq.num_frames,):
        raise ValueError("conjectured labels must have one entry per frame")
    if conjectured.min() < 0 or conjectured.max() >= num_classes:
        raise ValueError(f"conjectured labels outside [0, {num_classes})")
    out = np.zeros((seq.num_frames, seq.feature_dim + num_classes))
    out[:, : seq.feature_dim] = seq.features
    out[np.arange(seq.num_frames), seq.feature_dim + conjectured] = 1.0
    return out


@dataclass
class RecurrentValueModel:
    """LSTM + fully connected layer + scalar tanh output."""

    wx: np.ndarray  # (4H, D)
    wh: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)
    fc_w: np.ndarray  # (M, H)
    fc_b: np.ndarray  # (M,)
    out_w: np.ndarray  # (M,)
    out_b: np.ndarray  # (1,)

    @classmethod
    def create(
        cls,
        input_dim: int,
        hidden: int = 32,
        fc_units: int = 32,
        rng: Optional[np.random.Generator] = None,
    ) -> "RecurrentValueModel":
        rng = rng if rng is not None else np.random.default_rng(0)
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0  # forget-gate bias
        return cls(
            wx=rng.standard_normal((4 * hidden, input_dim)) / np.sqrt(input_dim),
            wh=rng.standard_normal((4 * hidden, hidden)) / np.sqrt(hidden),
            b=b,
            fc_w=rng.standard_normal((fc_units, hidden)) / np.sqrt(hidden),
            fc_b=np.zeros(fc_units),
            out_w=np.zeros(fc_units),
            out_b=np.zeros(1),
        )

    @property
    def input_dim(self) -> int:
        return int(self.wx.shape[1])

    @property
    def hidden_units(self) -> int:
        return int(self.wh.shape[1])

    def params(self) -> dict[str, np.ndarray]:
        return {
            "wx": self.wx,
            "wh": self.wh,
            "b": self.b,
            "fc_w": self.fc_w,
            "fc_b": self.fc_b,
            "out_w": self.out_w,
            "out_b": self.out_b,
        }

    def copy(self) -> "RecurrentValueModel":
        return RecurrentValueModel(**{k: v.copy() for k, v in self.params().items()})

    def zero_state(self, batch: int = 1) -> LstmState:
        h = np.zeros((batch, self.hidden_units))
        return h, h.copy()


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _scan(model: RecurrentValueModel, obs: np.ndarray, state: Optional[LstmState], cache: bool):
    B, T, _ = obs.shape
    H = model.hidden_units
    h, c = state if state is not None else model.zero_state(B)
    outputs = np.empty((B, T))
    steps = [] if cache else None
    for t in range(T):
        x = obs[:, t, :]
        z = x @ model.wx.T + h @ model.wh.T + model.b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        a = np.tanh(h_new @ model.fc_w.T + model.fc_b)
        y = np.tanh(a @ model.out_w + model.out_b[0])
        outputs[:, t] = y
        if cache:
            steps.append((x, h, c, i, f, g, o, c_new, tc, h_new, a, y))
        h, c = h_new, c_new
    return outputs, (h, c), steps


def scan(
    model: RecurrentValueModel, obs: np.ndarray, state: Optional[LstmState] = None
) -> tuple[np.ndarray, LstmState]:
    """Run the recurrence over a (B, T, D) batch; returns outputs and state.

    ``state`` defaults to zeros; passing the state returned by a previous
    call continues the scan exactly as if the inputs were concatenated.
    """
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 3 or obs.shape[2] != model.input_dim:
        raise ValueError(f"expected (B, T, {model.input_dim}) observations")
    if not np.isfinite(obs).all():
        raise ValueError("value observations must be finite")
    outputs, final_state, _ = _scan(model, obs, state, cache=False)
    return outputs, final_state


def value_forward(model: RecurrentValueModel, obs_seq: np.ndarray) -> np.ndarray:
    """Per-frame scores for one (T, D) sequence, scanned from zero state."""
    obs_seq = np.asarray(obs_seq, dtype=np.float64)
    if obs_seq.ndim != 2:
        raise ValueError("expected a (T, D) observation sequence")
    outputs, _ = scan(model, obs_seq[None, :, :])
    return outputs[0]


def window_estimate(model: RecurrentValueModel, obs_seq: np.ndarray, t: int, k: int) -> float:
    """Mean per-frame score over the clipped window [t, min(t+k, T))."""
    obs_seq = np.asarray(obs_seq, dtype=np.float64)
    T = obs_seq.shape[0]
    if not 0 <= t < T:
        raise ValueError(f"window start {t} outside [0, {T})")
    if k < 1:
        raise ValueError("window length must be positive")
    outputs = value_forward(model, obs_seq)
    return float(outputs[t : t + k].mean())


def mse_loss_and_grads(
    model: RecurrentValueModel, obs: np.ndarray, targets: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Sequence MSE against per-sequence targets, with BPTT gradients.

    ``obs`` is (B, T, D); ``targets`` is (B,) and is broadcast over frames.
    """
    obs = np.asarray(obs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    B, T, _ = obs.shape
    H = model.hidden_units
    outputs, _, steps = _scan(model, obs, None, cache=True)
    err = outputs - targets[:, None]
    loss = float((err * err).mean())

    grads = {name: np.zeros_like(p) for name, p in model.params().items()}
    dh_carry = np.zeros((B, H))
    dc_carry = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        x, h_prev, c_prev, i, f, g, o, c, tc, h, a, y = steps[t]
        dy = 2.0 * err[:, t] / (B * T)
        du = dy * (1.0 - y * y)
        grads["out_w"] += a.T @ du
        grads["out_b"][0] += du.sum()
        da = du[:, None] * model.out_w[None, :]
        da_pre = da * (1.0 - a * a)
        grads["fc_w"] += da_pre.T @ h
        grads["fc_b"] += da_pre.sum(axis=0)

        dh = da_pre @ model.fc_w + dh_carry
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_carry
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_carry = dc * f
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)],
            axis=1,
        )
        grads["wx"] += dz.T @ x
        grads["wh"] += dz.T @ h_prev
        grads["b"] += dz.sum(axis=0)
        dh_carry = dz @ model.wh
    return loss, grads


@dataclass
class ValueSample:
    """One training sequence: observations, broadcast target, provenance."""

    observations: np.ndarray
    target: float
    provenance: str  # "expert" | "random"


def random_conjecture(
    num_frames: int, cfg: EngineConfig, rng: np.random.Generator
) -> np.ndarray:
    """Per-frame labels produced by uniformly random actions."""
    out = np.empty(num_frames, dtype=np.int64)
    t = 0
    while t < num_frames:
        action = action_from_index(int(rng.integers(cfg.num_actions)), cfg)
        span = min(action.step, num_frames - t)
        out[t : t + span] = action.label
        t += span
    return out


def build_value_dataset(
    corpus: Sequence[LabeledSequence],
    cfg: EngineConfig,
    rng: np.random.Generator,
    random_fraction: float = 0.5,
) -> list[ValueSample]:
    """Expert sequences (conjecture = truth, target 1) plus random rollouts.

    ``random_fraction`` is the share of random-action samples in the
    returned dataset; their targets are the episode mean rewards of the
    random conjectures.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("corpus is empty")
    if any(not s.has_labels for s in corpus):
        raise ValueError("value dataset needs labelled sequences")
    if not 0.0 <= random_fraction < 1.0:
        raise ValueError("random_fraction must lie in [0, 1)")
    samples = []
    for seq in corpus:
        obs = assemble_value_sequence(seq, seq.labels, cfg.num_classes)
        target = episode_mean_reward(seq.labels, seq.labels)
        samples.append(ValueSample(obs, target, "expert"))
    num_random = round(len(corpus) * random_fraction / (1.0 - random_fraction))
    for j in range(num_random):
        seq = corpus[j % len(corpus)]
        conjectured = random_conjecture(seq.num_frames, cfg, rng)
        obs = assemble_value_sequence(seq, conjectured, cfg.num_classes)
        target = episode_mean_reward(seq.labels, conjectured)
        samples.append(ValueSample(obs, target, "random"))
    return samples


@dataclass
class ValueTrainerConfig:
    schedule: tuple[int, ...] = tuple(range(20, 101, 10))
    steps_per_stage: int = 80
    batch_size: int = 8
    learning_rate: float = 1e-3


@dataclass
class ValueTrainingLog:
    model: RecurrentValueModel
    stage_losses: dict[int, float]
    skipped_stages: list[int]

    @property
    def final_loss(self) -> Optional[float]:
        if not self.stage_losses:
            return None
        return self.stage_losses[max(self.stage_losses)]


def train_value(
    model: RecurrentValueModel,
    samples: Sequence[ValueSample],
    trainer: ValueTrainerConfig = ValueTrainerConfig(),
    rng: Optional[np.random.Generator] = None,
) -> ValueTrainingLog:
    """Curriculum training over random fixed-length windows, in place.

    Every stage samples windows of its length K (scanned from zero state)
    and takes ``steps_per_stage`` Adam steps on the window MSE. Stages with
    no sequence long enough are skipped with a warning.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no training samples")
    rng = rng if rng is not None else np.random.default_rng(0)
    optimizer = Adam(model.params(), learning_rate=trainer.learning_rate)
    stage_losses: dict[int, float] = {}
    skipped: list[int] = []
    for K in trainer.schedule:
        eligible = [s for s in samples if s.observations.shape[0] >= K]
        if not eligible:
            warnings.warn(f"no sequences of length >= {K}; skipping curriculum stage")
            skipped.append(K)
            continue
        losses = []
        for _ in range(trainer.steps_per_stage):
            picks = rng.integers(0, len(eligible), size=trainer.batch_size)
            batch = np.empty((trainer.batch_size, K, model.input_dim))
            targets = np.empty(trainer.batch_size)
            for row, s_idx in enumerate(picks):
                sample = eligible[s_idx]
                start = int(rng.integers(0, sample.observations.shape[0] - K + 1))
                batch[row] = sample.observations[start : start + K]
                targets[row] = sample.target
            loss, grads = mse_loss_and_grads(model, batch, targets)
            optimizer.step(grads)
            losses.append(loss)
        if losses:
            tail = losses[-min(10, len(losses)) :]
            stage_losses[K] = float(np.mean(tail))
    return ValueTrainingLog(model=model, stage_losses=stage_losses, skipped_stages=skipped)
