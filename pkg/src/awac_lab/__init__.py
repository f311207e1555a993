"""Advantage-weighted actor-critic and its baselines at desk scale, in plain numpy."""

from .awac import AwacConfig, TrainState, actor_update, awac_weights, critic_target, critic_update, estimate_advantage, run
from .constrained import ConstrainedProblem, brute_force_constrained, solve_for_lambda, solve_nonparametric
from .mdp import FiniteMDP, TabularPolicy, exact_policy_evaluation, value_iteration

__all__ = [
    "AwacConfig", "TrainState", "actor_update", "awac_weights", "critic_target", "critic_update",
    "estimate_advantage", "run", "ConstrainedProblem", "brute_force_constrained", "solve_for_lambda",
    "solve_nonparametric", "FiniteMDP", "TabularPolicy", "exact_policy_evaluation", "value_iteration",
]
