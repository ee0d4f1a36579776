"""Group-fairness verification of neural networks via learned Markov chains.

Workflow: sample network traces, abstract them over a chosen state space,
learn a chain with a per-state stopping bound, check fairness as a pair of
reachability probabilities, rank features and neurons by their contribution
to any violation, and repair the network by swarm search over the weights of
the most sensitive targets.
"""

from ._backend import active_backend
from .abstraction import (Discretizer, StateSpace, abstract_trace, bin_fit,
                          build_state_space, kmeans_fit)
from .checker import (ReachQuery, VerificationReport, fairness_verdict,
                      group_outcome_probs, reach_prob)
from .learner import (CountMatrix, Dtmc, derive_eps_delta, estimate_matrix,
                      learn_dtmc, update_counts, visit_bound)
from .model import (ActivationTrace, FeatureSpec, Layer, Network,
                    RecurrentCell, eval_accuracy, forward, forward_trace,
                    load_network, predict_label, save_network)
from .repair import (Particle, RepairResult, SearchVector, Swarm,
                     estimate_prob_diff, fitness, pso_step, repair_network)
from .sampler import InputDistribution, sample_batch, sample_input
from .sensitivity import SensitivityRanking, rank_targets, state_sensitivity

__version__ = "0.1.0"

__all__ = [
    "ActivationTrace", "CountMatrix", "Discretizer", "Dtmc", "FeatureSpec",
    "InputDistribution", "Layer", "Network", "Particle", "ReachQuery",
    "RecurrentCell", "RepairResult", "SearchVector", "SensitivityRanking",
    "StateSpace", "Swarm", "VerificationReport", "abstract_trace",
    "active_backend", "bin_fit", "build_state_space", "derive_eps_delta",
    "estimate_matrix", "estimate_prob_diff", "eval_accuracy",
    "fairness_verdict", "fitness", "forward", "forward_trace",
    "group_outcome_probs", "kmeans_fit", "learn_dtmc", "load_network",
    "predict_label", "pso_step", "rank_targets", "reach_prob",
    "repair_network", "sample_batch", "sample_input", "save_network",
    "state_sensitivity", "update_counts", "visit_bound",
]
