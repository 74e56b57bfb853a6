"""Single-player tree search over segmentation actions.

Each simulation selects a path by maximising Q plus a prior-weighted upper
confidence bound, expands the reached leaf with all 2C children, scores
every child's action window with the value model (one grouped call per step
length), sets the leaf value to the mean window score along its root path,
and propagates maxima backwards: an edge's Q always equals the best leaf
value discovered in its subtree.

Node evaluation is pluggable: the network evaluator wires in the policy and
value models; tests substitute exact evaluators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol

import numpy as np

from .core import ActionSpec, EngineConfig, LabeledSequence, action_from_index
from .lang_model import TransitionTable
from .policy import PolicyModel, assemble_policy_observation, policy_forward
from .value import RecurrentValueModel, scan


class Evaluator(Protocol):
    """Node scoring interface used by the search."""

    num_frames: int

    def root_context(self) -> Any:
        """Opaque evaluation context at the root position."""

    def priors(self, position: int, prev_label: Optional[int]) -> np.ndarray:
        """Action-prior vector of length 2C."""

    def window_scores(self, context: Any, position: int, step: int) -> tuple[np.ndarray, list]:
        """Mean window scores for all C candidate classes of one step length.

        Returns the per-class scores over the clipped span starting at
        ``position`` and the per-class successor contexts.
        """


class NetworkEvaluator:
    """Scores nodes with the policy and value networks.

    Every action window is scored standalone: the (feature, candidate
    class) slice for the span is scanned from a zero recurrent state, the
    same regime the value model is trained in. All candidate classes of one
    step length are evaluated in a single grouped call.
    """

    def __init__(
        self,
        seq: LabeledSequence,
        policy_model: Optional[PolicyModel],
        value_model: RecurrentValueModel,
        table: Optional[TransitionTable],
        cfg: EngineConfig,
        prior_source: str = "policy",
    ):
        if prior_source not in ("policy", "uniform"):
            raise ValueError(f"unknown prior source {prior_source!r}")
        if prior_source == "policy" and (policy_model is None or table is None):
            raise ValueError("policy priors need a policy model and a transition table")
        self.seq = seq
        self.num_frames = seq.num_frames
        self.policy_model = policy_model
        self.value_model = value_model
        self.table = table
        self.cfg = cfg
        self.prior_source = prior_source

    def root_context(self):
        return None

    def priors(self, position: int, prev_label: Optional[int]) -> np.ndarray:
        if self.prior_source == "uniform":
            n = self.cfg.num_actions
            return np.full(n, 1.0 / n)
        obs = assemble_policy_observation(self.seq, position, prev_label, self.table, self.cfg)
        return policy_forward(self.policy_model, obs)

    def window_scores(self, context, position: int, step: int) -> tuple[np.ndarray, list]:
        span = min(step, self.num_frames - position)
        C = self.cfg.num_classes
        F = self.seq.feature_dim
        feats = self.seq.features[position : position + span]
        scores = np.empty(C)
        for label in range(C):
            block = np.zeros((span, F + C))
            block[:, :F] = feats
            block[:, F + label] = 1.0
            outputs, _ = scan(self.value_model, block[None, :, :])
            scores[label] = outputs[0].mean()
        return scores, [None] * C


class SearchNode:
    """One tree node; edge statistics are created on expansion."""

    __slots__ = (
        "position",
        "depth",
        "prior",
        "incoming_label",
        "path_labels",
        "reward_estimate",
        "path_reward_sum",
        "value",
        "is_terminal",
        "context",
        "children",
        "edge_visits",
        "edge_values",
        "edge_priors",
    )

    def __init__(
        self,
        position: int,
        depth: int,
        prior: float,
        incoming_label: Optional[int],
        path_labels: np.ndarray,
        reward_estimate: float,
        path_reward_sum: float,
        value: float,
        is_terminal: bool,
        context: Any,
    ):
        self.position = position
        self.depth = depth
        self.prior = prior
        self.incoming_label = incoming_label
        self.path_labels = path_labels
        self.reward_estimate = reward_estimate
        self.path_reward_sum = path_reward_sum
        self.value = value
        self.is_terminal = is_terminal
        self.context = context
        self.children: Optional[list["SearchNode"]] = None
        self.edge_visits: Optional[np.ndarray] = None
        self.edge_values: Optional[np.ndarray] = None
        self.edge_priors: Optional[np.ndarray] = None

    @property
    def expanded(self) -> bool:
        return self.children is not None


@dataclass
class SearchDiagnostics:
    simulations: int
    expansions: int
    value_batch_calls: int
    selected_action: ActionSpec
    root_visits: np.ndarray = field(repr=False, default=None)
    root_values: np.ndarray = field(repr=False, default=None)


def ucb_term(prior: float, visit_count: int, total_visits: int, c_puct: float) -> float:
    """Exploration bonus c_puct * (1 + p) * sqrt(sum_b N(s,b)) / (1 + N(s,a))."""
    return c_puct * (1.0 + prior) * math.sqrt(total_visits) / (1.0 + visit_count)


def _pick_edge(node: SearchNode, c_puct: float) -> int:
    total = int(node.edge_visits.sum())
    u = c_puct * (1.0 + node.edge_priors) * math.sqrt(total) / (1.0 + node.edge_visits)
    scores = node.edge_values + u
    best = np.flatnonzero(scores == scores.max())
    if best.size > 1:
        priors = node.edge_priors[best]
        best = best[priors == priors.max()]
    return int(best[0])


def select_path(root: SearchNode, c_puct: float) -> tuple[list[tuple[SearchNode, int]], SearchNode]:
    """Descend by argmax(Q + U) until an unexpanded or terminal node.

    Exact score ties resolve to the higher prior, then the lower index.
    """
    path: list[tuple[SearchNode, int]] = []
    node = root
    while node.expanded:
        a = _pick_edge(node, c_puct)
        path.append((node, a))
        node = node.children[a]
    return path, node


def expand_and_evaluate(leaf: SearchNode, evaluator: Evaluator, cfg: EngineConfig) -> None:
    """Create all 2C children with priors, window scores and path-mean values.

    Children sharing a step length share one grouped value call; terminal
    children (position at or past the end) are marked and never expanded.
    """
    if leaf.is_terminal:
        raise ValueError("cannot expand a terminal node")
    if leaf.expanded:
        raise ValueError("node is already expanded")
    T = evaluator.num_frames
    priors = np.asarray(evaluator.priors(leaf.position, leaf.incoming_label), dtype=np.float64)
    if priors.shape != (cfg.num_actions,):
        raise ValueError(f"expected {cfg.num_actions} priors, got shape {priors.shape}")
    children: list[Optional[SearchNode]] = [None] * cfg.num_actions
    for block_start, step in ((0, cfg.small_step), (cfg.num_classes, cfg.large_step)):
        scores, contexts = evaluator.window_scores(leaf.context, leaf.position, step)
        span = min(step, T - leaf.position)
        child_position = leaf.position + span
        for label in range(cfg.num_classes):
            index = block_start + label
            reward_estimate = float(scores[label])
            path_sum = leaf.path_reward_sum + reward_estimate
            depth = leaf.depth + 1
            children[index] = SearchNode(
                position=child_position,
                depth=depth,
                prior=float(priors[index]),
                incoming_label=label,
                path_labels=np.concatenate(
                    [leaf.path_labels, np.full(span, label, dtype=np.int64)]
                ),
                reward_estimate=reward_estimate,
                path_reward_sum=path_sum,
                value=path_sum / depth,
                is_terminal=child_position >= T,
                context=contexts[label],
            )
    leaf.children = children
    leaf.edge_visits = np.zeros(cfg.num_actions, dtype=np.int64)
    leaf.edge_values = np.zeros(cfg.num_actions)
    leaf.edge_priors = priors


def backup(path: list[tuple[SearchNode, int]], leaf: SearchNode) -> None:
    """Propagate values up the traversed path and count the visit.

    A just-expanded leaf first takes its children's values as its edge Qs;
    each ancestor edge then becomes the maximum of its child node's edge Qs
    (a terminal frontier child contributes its own value). Visit counts
    increase by one on every traversed edge.
    """
    if leaf.expanded:
        for index, child in enumerate(leaf.children):
            leaf.edge_values[index] = child.value
    for node, action_index in reversed(path):
        child = node.children[action_index]
        if child.expanded:
            node.edge_values[action_index] = float(child.edge_values.max())
        else:
            node.edge_values[action_index] = child.value
        node.edge_visits[action_index] += 1


def tree_search(
    position: int,
    prev_label: Optional[int],
    evaluator: Evaluator,
    cfg: EngineConfig,
    num_simulations: Optional[int] = None,
    on_simulation: Optional[Callable[[SearchNode, int], None]] = None,
) -> tuple[ActionSpec, SearchDiagnostics]:
    """Search from ``position`` and return the refined action.

    The root is expanded immediately, then ``num_simulations`` rounds of
    select / expand / evaluate / backup run. The action of the uniquely
    most-visited root edge wins; with tied visit counts the argmax of
    N + Q decides, residual ties falling to the lowest action index.
    ``on_simulation`` is called after every completed simulation (for
    instrumentation).
    """
    T = evaluator.num_frames
    if position >= T:
        raise ValueError("cannot search from a terminal state")
    n = cfg.num_simulations if num_simulations is None else num_simulations
    root = SearchNode(
        position=position,
        depth=0,
        prior=1.0,
        incoming_label=prev_label,
        path_labels=np.empty(0, dtype=np.int64),
        reward_estimate=float("nan"),
        path_reward_sum=0.0,
        value=0.0,
        is_terminal=False,
        context=evaluator.root_context(),
    )
    expand_and_evaluate(root, evaluator, cfg)
    backup([], root)
    expansions = 1
    for sim_index in range(n):
        path, leaf = select_path(root, cfg.c_puct)
        if not leaf.is_terminal:
            expand_and_evaluate(leaf, evaluator, cfg)
            expansions += 1
        backup(path, leaf)
        if on_simulation is not None:
            on_simulation(root, sim_index)

    visits = root.edge_visits
    max_visits = visits.max()
    if np.count_nonzero(visits == max_visits) == 1:
        selected = int(np.argmax(visits))
    else:
        selected = int(np.argmax(visits + root.edge_values))
    action = action_from_index(selected, cfg)
    diagnostics = SearchDiagnostics(
        simulations=n,
        expansions=expansions,
        value_batch_calls=2 * expansions,
        selected_action=action,
        root_visits=visits.copy(),
        root_values=root.edge_values.copy(),
    )
    return action, diagnostics
