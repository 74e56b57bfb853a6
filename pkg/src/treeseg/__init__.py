"""Sequence segmentation engine: policy network + value network + tree search.

The gateway runs the policy greedily whenever it is confident and hands
uncertain decisions to a single-player tree search that fuses policy priors
with recurrent value estimates.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    ActionSpec,
    EngineConfig,
    LabeledSequence,
    Segment,
    action_from_index,
    flat_index,
    labels_from_actions,
    labels_from_segments,
    segments_from_labels,
)
from .env import (  # noqa: F401
    EpisodeState,
    episode_mean_reward,
    initial_state,
    policy_reward,
    step,
    value_reward,
)
from .gateway import EpisodeResult, run_corpus, run_episode  # noqa: F401
from .lang_model import TransitionTable, fit, transition_probs  # noqa: F401
from .metrics import MetricReport, accuracy, edit_score, f1_at, report  # noqa: F401
from .policy import (  # noqa: F401
    PolicyModel,
    assemble_policy_observation,
    greedy_action,
    policy_forward,
    train_policy,
)
from .search import NetworkEvaluator, SearchNode, tree_search  # noqa: F401
from .synth import SynthConfig, generate_corpus, standard_corpora  # noqa: F401
from .value import (  # noqa: F401
    RecurrentValueModel,
    assemble_value_sequence,
    build_value_dataset,
    train_value,
    value_forward,
    window_estimate,
)
