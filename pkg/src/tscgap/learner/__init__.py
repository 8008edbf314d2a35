"""Numpy policy-gradient stack: MLP, Adam, PPO and MAML."""
from .maml import (MamlHyper, PolicyGradientObjective, QuadraticObjective, TanhRegressionObjective,
                   fine_tune, maml_inner_adapt, maml_outer_update, meta_gradient)
from .mlp import PolicyLayout, backward, forward, init_params, policy_forward
from .optim import AdamState, NonFiniteLossError, adam_step
from .ppo import Batch, PpoHyper, RolloutBuffer, Trajectory, compute_gae, ppo_update, surrogate_loss

__all__ = [
    "AdamState", "Batch", "MamlHyper", "NonFiniteLossError", "PolicyGradientObjective", "PolicyLayout",
    "PpoHyper", "QuadraticObjective", "RolloutBuffer", "TanhRegressionObjective", "Trajectory",
    "adam_step", "backward", "compute_gae", "fine_tune", "forward", "init_params", "maml_inner_adapt",
    "maml_outer_update", "meta_gradient", "policy_forward", "ppo_update", "surrogate_loss",
]
