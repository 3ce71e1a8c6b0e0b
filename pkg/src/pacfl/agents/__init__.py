"""Learning agents: brute-force and generator conjecture, independent baseline."""

from .conjgen import GeneratorNet, TargetPolicyEMA, generate, generator_loss, kl_bound_check, softened_argmax
from .pac import (
    ActorNet,
    CriticNet,
    EvalCounter,
    PacAgent,
    adapt_tau,
    conjecture_bruteforce,
    expectile_grad,
    expectile_loss,
    select_action,
)
from .replay import ReplayBuffer, Transition, TransitionBatch
from .training import AgentController, TrainLog, evaluate_controllers, make_agents, rollout, train

__all__ = [
    "ActorNet",
    "AgentController",
    "CriticNet",
    "EvalCounter",
    "GeneratorNet",
    "PacAgent",
    "ReplayBuffer",
    "TargetPolicyEMA",
    "TrainLog",
    "Transition",
    "TransitionBatch",
    "adapt_tau",
    "conjecture_bruteforce",
    "evaluate_controllers",
    "expectile_grad",
    "expectile_loss",
    "generate",
    "generator_loss",
    "kl_bound_check",
    "make_agents",
    "rollout",
    "select_action",
    "softened_argmax",
    "train",
]
