"""Particle-based belief propagation for direct multipath SLAM."""
from .beliefs import (AgentBelief, DegenerateUpdateError, FeatureBelief, Hypers, NoiseBelief, SlamBeliefs,
                      beliefs_to_dict, dump_beliefs, ess, resample_systematic, systematic_indices)
from .engine import InitConfig, StepError, StepEstimate, init_beliefs, predict, run_filter, step
from .updates import (Models, agent_message_covariance, declare_and_prune, estimate, expected_load,
                      kappa_update, spawn_births, update_agent, update_feature, update_noise)

__all__ = [
    "AgentBelief", "DegenerateUpdateError", "FeatureBelief", "Hypers", "NoiseBelief", "SlamBeliefs",
    "beliefs_to_dict", "dump_beliefs", "ess", "resample_systematic", "systematic_indices",
    "InitConfig", "StepError", "StepEstimate", "init_beliefs", "predict", "run_filter", "step",
    "Models", "agent_message_covariance", "declare_and_prune", "estimate", "expected_load",
    "kappa_update", "spawn_births", "update_agent", "update_feature", "update_noise",
]
