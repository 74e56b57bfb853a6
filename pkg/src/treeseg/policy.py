"""Policy model: observation assembly, action distribution, and training.

The observation at frame t concatenates the frame's features, the features
at the two look-ahead positions t+k_s and t+k_l (clipped to the last frame),
the class-transition probabilities given the last executed class, and a
one-hot of that class (all-zero before the first action).

Training is a clipped-surrogate policy gradient over stochastic rollouts
with step rewards, Monte-Carlo returns and a moving-average baseline.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ActionSpec, EngineConfig, LabeledSequence, action_from_index
from .env import initial_state, policy_reward, step
from .lang_model import TransitionTable, transition_probs
from .optim import Adam


def assemble_policy_observation(
    seq: LabeledSequence,
    t: int,
    prev_label: Optional[int],
    table: TransitionTable,
    cfg: EngineConfig,
) -> np.ndarray:
    """Build the policy input vector at frame ``t`` (dimension 3F + 2C)."""
    T = seq.num_frames
    if not 0 <= t < T:
        raise ValueError(f"frame {t} outside [0, {T})")
    feats = seq.features
    s_hot = np.zeros(cfg.num_classes)
    if prev_label is not None:
        s_hot[prev_label] = 1.0
    return np.concatenate(
        [
            feats[t].astype(np.float64),
            feats[min(t + cfg.small_step, T - 1)].astype(np.float64),
            feats[min(t + cfg.large_step, T - 1)].astype(np.float64),
            transition_probs(table, prev_label),
            s_hot,
        ]
    )


@dataclass
class PolicyModel:
    """Feedforward net: two tanh hidden layers, softmax over 2C actions."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @classmethod
    def create(
        cls,
        input_dim: int,
        num_actions: int,
        hidden: tuple[int, int] = (64, 64),
        rng: Optional[np.random.Generator] = None,
    ) -> "PolicyModel":
        """Random hidden layers, zero output layer (uniform initial policy)."""
        rng = rng if rng is not None else np.random.default_rng(0)
        h1, h2 = hidden
        return cls(
            w1=rng.standard_normal((h1, input_dim)) / np.sqrt(input_dim),
            b1=np.zeros(h1),
            w2=rng.standard_normal((h2, h1)) / np.sqrt(h1),
            b2=np.zeros(h2),
            w3=np.zeros((num_actions, h2)),
            b3=np.zeros(num_actions),
        )

    @property
    def input_dim(self) -> int:
        return int(self.w1.shape[1])

    @property
    def num_actions(self) -> int:
        return int(self.w3.shape[0])

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2, "w3": self.w3, "b3": self.b3}

    def copy(self) -> "PolicyModel":
        return PolicyModel(**{k: v.copy() for k, v in self.params().items()})


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _forward_cached(model: PolicyModel, obs: np.ndarray):
    h1 = np.tanh(obs @ model.w1.T + model.b1)
    h2 = np.tanh(h1 @ model.w2.T + model.b2)
    probs = _softmax(h2 @ model.w3.T + model.b3)
    return h1, h2, probs


def policy_forward_batch(model: PolicyModel, obs: np.ndarray) -> np.ndarray:
    """Action distributions for a batch of observations, rows summing to 1."""
    obs = np.asarray(obs, dtype=np.float64)
    if not np.isfinite(obs).all():
        raise ValueError("policy observations must be finite")
    if obs.shape[-1] != model.input_dim:
        raise ValueError(f"observation dim {obs.shape[-1]} != model input dim {model.input_dim}")
    return _forward_cached(model, obs)[2]


def policy_forward(model: PolicyModel, obs: np.ndarray) -> np.ndarray:
    """Action distribution for one observation."""
    return policy_forward_batch(model, obs[None, :])[0]


def greedy_action(dist: np.ndarray, cfg: EngineConfig) -> tuple[ActionSpec, float]:
    """Highest-probability action; ties resolve to the lowest flat index."""
    index = int(np.argmax(dist))
    return action_from_index(index, cfg), float(dist[index])


def clipped_surrogate_loss(
    model: PolicyModel,
    obs: np.ndarray,
    action_indices: np.ndarray,
    old_probs: np.ndarray,
    advantages: np.ndarray,
    clip_ratio: float = 0.2,
) -> tuple[float, dict[str, np.ndarray]]:
    """Negative clipped surrogate objective and its parameter gradients.

    Per sample the objective is ``min(r A, clip(r, 1-eps, 1+eps) A)`` with
    ``r`` the probability ratio against the rollout policy; the loss is its
    negated batch mean. Gradients are zero wherever the clipped branch is
    the active minimum.
    """
    obs = np.asarray(obs, dtype=np.float64)
    n = obs.shape[0]
    rows = np.arange(n)
    h1, h2, probs = _forward_cached(model, obs)
    ratio = probs[rows, action_indices] / old_probs
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    objective = np.minimum(ratio * advantages, clipped * advantages)
    loss = -float(objective.mean())

    # d(rA)/dlogits = rA (onehot - probs); zero where the clip is active.
    active = ratio * advantages <= clipped * advantages
    coeff = np.where(active, ratio * advantages, 0.0) / n
    dlogits = coeff[:, None] * probs
    dlogits[rows, action_indices] -= coeff

    dw3 = dlogits.T @ h2
    db3 = dlogits.sum(axis=0)
    dz2 = (dlogits @ model.w3) * (1.0 - h2 * h2)
    dw2 = dz2.T @ h1
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ model.w2) * (1.0 - h1 * h1)
    dw1 = dz1.T @ obs
    db1 = dz1.sum(axis=0)
    grads = {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2, "w3": dw3, "b3": db3}
    return loss, grads


@dataclass
class PolicyTrainerConfig:
    iterations: int = 800
    episodes_per_iteration: int = 8
    optim_epochs: int = 4
    clip_ratio: float = 0.2
    learning_rate: float = 3e-3
    baseline_decay: float = 0.9
    normalize_advantages: bool = True
    # Return discount: localizes credit; the clipped span makes the
    # undiscounted return equal alpha*T minus total wrong frames, so a
    # discount trades a little bias for much lower gradient variance.
    discount: float = 0.8
    # Exploration floor mixed into the rollout distribution, annealed
    # linearly to zero; keeps rare classes sampled early on.
    explore_epsilon: float = 0.1
    # Linear learning-rate decay to zero; late updates stop churning the
    # converged policy and let the distribution sharpen.
    anneal_learning_rate: bool = True


@dataclass
class PolicyTrainingLog:
    model: PolicyModel
    mean_returns: list[float] = field(default_factory=list)


def _rollout_batch(
    model: PolicyModel,
    sequences: Sequence[LabeledSequence],
    table: TransitionTable,
    cfg: EngineConfig,
    rng: np.random.Generator,
    discount: float,
    explore_epsilon: float,
):
    """Run stochastic episodes in lockstep over a batch of sequences.

    Actions are sampled from the policy mixed with a uniform exploration
    floor; the recorded behaviour probabilities are the mixture's, so the
    surrogate's ratios stay well defined.
    """
    states = [initial_state() for _ in sequences]
    active = list(range(len(sequences)))
    obs_rows: list[np.ndarray] = []
    act_rows: list[int] = []
    old_rows: list[float] = []
    reward_rows: list[list[float]] = [[] for _ in sequences]
    episode_of_row: list[int] = []

    while active:
        obs = np.stack(
            [
                assemble_policy_observation(sequences[i], states[i].position, states[i].prev_label, table, cfg)
                for i in active
            ]
        )
        dists = policy_forward_batch(model, obs)
        behaviour = (1.0 - explore_epsilon) * dists + explore_epsilon / cfg.num_actions
        still_active = []
        for row, i in enumerate(active):
            idx = int(rng.choice(cfg.num_actions, p=behaviour[row]))
            action = action_from_index(idx, cfg)
            reward = policy_reward(sequences[i].labels, states[i].position, action, cfg.alpha)
            obs_rows.append(obs[row])
            act_rows.append(idx)
            old_rows.append(float(behaviour[row, idx]))
            reward_rows[i].append(reward)
            episode_of_row.append(i)
            states[i] = step(states[i], action, sequences[i].num_frames)
            if not states[i].done:
                still_active.append(i)
        active = still_active

    # Monte-Carlo returns, per episode, in rollout row order.
    returns_per_episode = []
    for rewards in reward_rows:
        g = 0.0
        acc = []
        for r in reversed(rewards):
            g = r + discount * g
            acc.append(g)
        returns_per_episode.append(acc[::-1])
    cursor = [0] * len(sequences)
    returns = np.empty(len(obs_rows))
    for row, i in enumerate(episode_of_row):
        returns[row] = returns_per_episode[i][cursor[i]]
        cursor[i] += 1
    episode_returns = [float(sum(r)) for r in reward_rows]
    return (
        np.stack(obs_rows),
        np.asarray(act_rows, dtype=np.int64),
        np.asarray(old_rows),
        returns,
        episode_returns,
    )


def train_policy(
    model: PolicyModel,
    corpus: Sequence[LabeledSequence],
    table: TransitionTable,
    cfg: EngineConfig,
    trainer: PolicyTrainerConfig = PolicyTrainerConfig(),
    rng: Optional[np.random.Generator] = None,
) -> PolicyTrainingLog:
    """Train the policy in place; returns the per-iteration mean returns.

    Zero iterations leave the parameters untouched.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("training corpus is empty")
    if any(not s.has_labels for s in corpus):
        raise ValueError("policy training needs labelled sequences")
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
    optimizer = Adam(model.params(), learning_rate=trainer.learning_rate)
    log = PolicyTrainingLog(model=model)
    baseline: Optional[float] = None

    for iteration in range(trainer.iterations):
        picks = rng.integers(0, len(corpus), size=trainer.episodes_per_iteration)
        batch = [corpus[i] for i in picks]
        remaining = 1.0 - iteration / max(1, trainer.iterations - 1)
        obs, actions, old_probs, returns, episode_returns = _rollout_batch(
            model, batch, table, cfg, rng, trainer.discount, trainer.explore_epsilon * remaining
        )
        log.mean_returns.append(float(np.mean(episode_returns)))
        if trainer.anneal_learning_rate:
            optimizer.learning_rate = trainer.learning_rate * remaining

        mean_return = float(returns.mean())
        baseline = mean_return if baseline is None else (
            trainer.baseline_decay * baseline + (1.0 - trainer.baseline_decay) * mean_return
        )
        advantages = returns - baseline
        if trainer.normalize_advantages:
            advantages = advantages / (advantages.std() + 1e-8)

        for _ in range(trainer.optim_epochs):
            _, grads = clipped_surrogate_loss(
                model, obs, actions, old_probs, advantages, trainer.clip_ratio
            )
            optimizer.step(grads)
    return log
