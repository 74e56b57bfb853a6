"""Episode controller: greedy policy when confident, tree search otherwise.

At every decision the policy distribution is computed; if its maximum
probability reaches the confidence threshold the greedy action executes
directly, otherwise the decision is handed to the tree search. Episodes are
deterministic given frozen models, so corpus runs parallelize freely.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ActionSpec, EngineConfig, LabeledSequence, labels_from_actions
from .env import initial_state, step
from .lang_model import TransitionTable
from .metrics import MetricReport, aggregate_reports, report
from .policy import PolicyModel, assemble_policy_observation, greedy_action, policy_forward
from .search import NetworkEvaluator, tree_search
from .value import RecurrentValueModel


@dataclass(frozen=True)
class DecisionRecord:
    frame: int
    max_probability: float
    searched: bool
    action: ActionSpec


@dataclass
class EpisodeResult:
    """Per-episode prediction plus the gateway's decision trace."""

    predicted_labels: np.ndarray
    decisions: list[DecisionRecord]
    searched_fraction: float
    searched_frame_fraction: float


def run_episode(
    seq: LabeledSequence,
    policy_model: PolicyModel,
    value_model: RecurrentValueModel,
    table: TransitionTable,
    cfg: EngineConfig,
    threshold: Optional[float] = None,
    num_simulations: Optional[int] = None,
    prior_search: str = "policy",
) -> EpisodeResult:
    """Segment one sequence; search only below the confidence threshold.

    ``threshold`` and ``num_simulations`` override the config (a threshold
    of 0 never searches, one above 1 always does). ``prior_search`` selects
    the prior source used inside the search ("policy" or "uniform").
    """
    if seq.feature_dim * 3 + cfg.num_actions != policy_model.input_dim:
        raise ValueError(
            f"policy expects input dim {policy_model.input_dim}, observation has "
            f"{seq.feature_dim * 3 + cfg.num_actions}"
        )
    threshold = cfg.confidence_threshold if threshold is None else threshold
    T = seq.num_frames
    state = initial_state()
    executed: list[ActionSpec] = []
    decisions: list[DecisionRecord] = []
    searched_frames = 0
    while not state.done:
        obs = assemble_policy_observation(seq, state.position, state.prev_label, table, cfg)
        dist = policy_forward(policy_model, obs)
        action, max_prob = greedy_action(dist, cfg)
        searched = max_prob < threshold
        if searched:
            evaluator = NetworkEvaluator(
                seq, policy_model, value_model, table, cfg, prior_source=prior_search
            )
            action, _ = tree_search(
                state.position, state.prev_label, evaluator, cfg, num_simulations
            )
        if searched:
            searched_frames += min(action.step, T - state.position)
        decisions.append(DecisionRecord(state.position, max_prob, searched, action))
        executed.append(action)
        state = step(state, action, T)
    return EpisodeResult(
        predicted_labels=labels_from_actions(executed, T),
        decisions=decisions,
        searched_fraction=sum(d.searched for d in decisions) / len(decisions),
        searched_frame_fraction=searched_frames / T,
    )


@dataclass
class CorpusRunResult:
    episodes: list[EpisodeResult]
    sequence_reports: Optional[list[MetricReport]]
    aggregate: Optional[MetricReport]

    @property
    def mean_searched_fraction(self) -> float:
        return float(np.mean([e.searched_fraction for e in self.episodes]))

    @property
    def mean_searched_frame_fraction(self) -> float:
        return float(np.mean([e.searched_frame_fraction for e in self.episodes]))


def _episode_task(args) -> EpisodeResult:
    seq, policy_model, value_model, table, cfg, threshold, sims, prior_search = args
    return run_episode(
        seq, policy_model, value_model, table, cfg, threshold, sims, prior_search
    )


def run_corpus(
    corpus: Sequence[LabeledSequence],
    policy_model: PolicyModel,
    value_model: RecurrentValueModel,
    table: TransitionTable,
    cfg: EngineConfig,
    jobs: int = 1,
    threshold: Optional[float] = None,
    num_simulations: Optional[int] = None,
    prior_search: str = "policy",
    with_metrics: bool = True,
) -> CorpusRunResult:
    """Run every sequence; aggregate metrics are per-sequence averages.

    Episodes are independent, so results do not depend on ``jobs``.
    """
    corpus = list(corpus)
    tasks = [
        (seq, policy_model, value_model, table, cfg, threshold, num_simulations, prior_search)
        for seq in corpus
    ]
    if jobs > 1 and len(corpus) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            episodes = list(pool.map(_episode_task, tasks))
    else:
        episodes = [_episode_task(t) for t in tasks]
    sequence_reports = None
    aggregate = None
    if with_metrics:
        if any(not s.has_labels for s in corpus):
            raise ValueError("metrics need labelled sequences")
        sequence_reports = [
            report(ep.predicted_labels, seq.labels) for ep, seq in zip(episodes, corpus)
        ]
        aggregate = aggregate_reports(sequence_reports)
    return CorpusRunResult(
        episodes=episodes, sequence_reports=sequence_reports, aggregate=aggregate
    )


def build_report(
    corpus: Sequence[LabeledSequence],
    names: Sequence[str],
    result: CorpusRunResult,
    cfg: EngineConfig,
    extra: Optional[dict] = None,
) -> dict:
    """Assemble the JSON-ready run report, including the flat frame table.

    The per-decision trace carries (frame, max policy probability, searched
    flag, chosen action); the frames table maps every frame to its ground
    truth, prediction and the deciding probability.
    """
    sequences = []
    frames_table = []
    for name, seq, episode, seq_report in zip(
        names,
        corpus,
        result.episodes,
        result.sequence_reports or [None] * len(result.episodes),
    ):
        decisions = [
            {
                "frame": d.frame,
                "max_prob": d.max_probability,
                "searched": d.searched,
                "step": d.action.step,
                "label": d.action.label,
            }
            for d in episode.decisions
        ]
        sequences.append(
            {
                "name": name,
                "group_id": seq.group_id,
                "num_frames": seq.num_frames,
                "metrics": seq_report.as_dict() if seq_report is not None else None,
                "searched_fraction": episode.searched_fraction,
                "searched_frame_fraction": episode.searched_frame_fraction,
                "decisions": decisions,
            }
        )
        frame_probs = np.empty(seq.num_frames)
        for d in episode.decisions:
            span = min(d.action.step, seq.num_frames - d.frame)
            frame_probs[d.frame : d.frame + span] = d.max_probability
        gt = seq.labels if seq.has_labels else np.full(seq.num_frames, -1, dtype=np.int64)
        for t in range(seq.num_frames):
            frames_table.append(
                (
                    name,
                    t,
                    int(gt[t]),
                    int(episode.predicted_labels[t]),
                    format(float(frame_probs[t]), ".6g"),
                )
            )
    body = {
        "engine_config": cfg.as_dict(),
        "sequences": sequences,
        "aggregate": result.aggregate.as_dict() if result.aggregate is not None else None,
        "mean_searched_fraction": result.mean_searched_fraction,
        "mean_searched_frame_fraction": result.mean_searched_frame_fraction,
        "frames_table": frames_table,
    }
    if extra:
        body.update(extra)
    return body
