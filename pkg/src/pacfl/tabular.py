"""Finite stochastic games and the Pareto-family Bellman operators.

Tables are indexed ``Q[agent][s, a_0, ..., a_{n-1}]`` with the joint action
in agent order.  Operators return fresh tables and never modify their input.

Operator variants for the next-state term of agent ``r``:

* ``literal``: ``max_{a_-r} Q_r(s', a_r, a_-r)`` with ``a_r`` held at the
  current own action.
* ``joint_max``: ``max_{a} Q_r(s', a)`` over the whole joint action.
* ``pessimistic``: ``max_{a_r} min_{a_-r} Q_r(s', a_r, a_-r)`` (maxmin),
  used as the risk-averse contrast in equilibrium-selection checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np

OPERATOR_VARIANTS = ("literal", "joint_max", "pessimistic")

QTable = list[np.ndarray]
Operator = Callable[[QTable], QTable]


@dataclass(frozen=True)
class FiniteGame:
    """``rewards[r]`` has shape ``(S, *A)``; ``transitions`` has ``(S, *A, S)``."""

    rewards: tuple[np.ndarray, ...]
    transitions: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        shape = self.transitions.shape[:-1]
        if self.transitions.shape[-1] != shape[0]:
            raise ValueError("transition kernel must map onto the same state set")
        if len(shape) - 1 != len(self.rewards):
            raise ValueError("need one reward tensor per agent")
        for r in self.rewards:
            if r.shape != shape:
                raise ValueError(f"reward shape {r.shape} does not match {shape}")
        if np.any(self.transitions < 0) or not np.allclose(self.transitions.sum(axis=-1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("transition rows must be distributions")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def num_states(self) -> int:
        return int(self.transitions.shape[0])

    @property
    def num_agents(self) -> int:
        return len(self.rewards)

    @property
    def action_counts(self) -> tuple[int, ...]:
        return tuple(int(a) for a in self.transitions.shape[1:-1])

    @property
    def table_shape(self) -> tuple[int, ...]:
        return self.transitions.shape[:-1]

    def zeros(self) -> QTable:
        return [np.zeros(self.table_shape) for _ in range(self.num_agents)]

    def random_table(self, rng: np.random.Generator, scale: float = 10.0) -> QTable:
        return [rng.normal(0.0, scale, self.table_shape) for _ in range(self.num_agents)]

    @classmethod
    def matrix_game(cls, payoffs: Sequence[np.ndarray], gamma: float) -> "FiniteGame":
        """Single-state repeated game from per-agent payoff matrices."""
        rewards = tuple(np.asarray(p, dtype=np.float64)[None] for p in payoffs)
        shape = rewards[0].shape
        trans = np.ones((*shape, 1))
        return cls(rewards, trans, gamma)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "FiniteGame":
        """Build from ``{"rewards": [...], "transitions": [...], "gamma": g}``.

        A ``"payoffs"`` key (list of per-agent matrices) instead describes a
        single-state repeated game.
        """
        gamma = float(doc["gamma"])
        if "payoffs" in doc:
            return cls.matrix_game([np.asarray(p, dtype=np.float64) for p in doc["payoffs"]], gamma)
        rewards = tuple(np.asarray(r, dtype=np.float64) for r in doc["rewards"])
        return cls(rewards, np.asarray(doc["transitions"], dtype=np.float64), gamma)


def team_game(payoff, gamma: float, agents: int = 2) -> FiniteGame:
    """Common-payoff matrix game shared by every agent."""
    p = np.asarray(payoff, dtype=np.float64)
    return FiniteGame.matrix_game([p] * agents, gamma)


def penalty_game(gamma: float, agents: int = 2) -> FiniteGame:
    """3x3 common-payoff game with a risky optimum and a safe equilibrium.

    Joint action ``(0, 0)`` pays 10 but each miscoordination next to it costs
    20; ``(2, 2)`` pays 5 and no deviation from action 2 is ever punished.
    """
    payoff = np.array([[10.0, -20.0, 0.0], [-20.0, 2.0, 0.0], [0.0, 0.0, 5.0]])
    return team_game(payoff, gamma, agents)


def random_game(
    rng: np.random.Generator, states: int, actions: Sequence[int], gamma: float, scale: float = 10.0
) -> FiniteGame:
    """General-sum game with Gaussian rewards and Dirichlet transition rows."""
    shape = (states, *(int(a) for a in actions))
    rewards = tuple(rng.normal(0.0, scale, shape) for _ in actions)
    trans = rng.dirichlet(np.ones(states), size=shape)
    return FiniteGame(rewards, trans, gamma)


def _check_table(game: FiniteGame, q: QTable) -> None:
    if len(q) != game.num_agents:
        raise ValueError(f"expected {game.num_agents} tables, got {len(q)}")
    for t in q:
        if t.shape != game.table_shape:
            raise ValueError(f"table shape {t.shape} does not match game {game.table_shape}")


def _opponent_axes(game: FiniteGame, r: int) -> tuple[int, ...]:
    return tuple(1 + j for j in range(game.num_agents) if j != r)


def next_state_value(game: FiniteGame, q: np.ndarray, r: int, variant: str) -> np.ndarray:
    """Per-``(s', a)`` value used inside the expectation, shaped like the table.

    For ``literal`` the value depends on the own action ``a_r`` and is
    broadcast across opponents; the other variants give one value per state.
    """
    opp = _opponent_axes(game, r)
    if variant == "literal":
        return np.max(q, axis=opp, keepdims=True)
    if variant == "joint_max":
        axes = tuple(range(1, q.ndim))
        return np.max(q, axis=axes, keepdims=True)
    if variant == "pessimistic":
        worst = np.min(q, axis=opp, keepdims=True)
        return np.max(worst, axis=1 + r, keepdims=True)
    raise ValueError(f"unknown operator variant {variant!r}; expected one of {OPERATOR_VARIANTS}")


def _expect_next(game: FiniteGame, v: np.ndarray, r: int) -> np.ndarray:
    """``E_{s' ~ P(.|s,a)}[v(s', a_r)]`` broadcast to the table shape.

    ``v`` has the table's dimensionality with singleton axes for whatever it
    does not depend on; a non-singleton own-action axis is matched to the
    current own action.
    """
    p = game.transitions  # (S, *A, S')
    n = game.num_agents
    if v.shape[1 + r] == 1:
        per_state = v.reshape(v.shape[0])
        return p @ per_state
    # v depends on own action: v[s', a_r]
    own = v.reshape(v.shape[0], v.shape[1 + r])  # (S', A_r)
    moved = np.moveaxis(p, 1 + r, -2)  # (S, ..., A_r, S')
    vals = np.einsum("...as,sa->...a", moved, own)
    return np.moveaxis(vals, -1, 1 + r) if n > 0 else vals


def pareto_apply(game: FiniteGame, q: QTable, variant: str = "literal") -> QTable:
    """``H Q_r(s, a) = rwd_r(s, a) + gamma E_{s'}[next value]`` for each agent."""
    _check_table(game, q)
    out = []
    for r in range(game.num_agents):
        v = next_state_value(game, q[r], r, variant)
        out.append(game.rewards[r] + game.gamma * _expect_next(game, v, r))
    return out


def expectile_pareto_apply(game: FiniteGame, q: QTable, tau: float, variant: str = "literal") -> QTable:
    """Expectile Pareto operator on the positive and negative parts of ``Q``.

    ``H Q = rwd + gamma (tau * max Q+ + (1 - tau) * max Q-)`` where both maxima
    follow ``variant`` and ``Q+ = max(Q, 0)``, ``Q- = min(Q, 0)``.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    _check_table(game, q)
    out = []
    for r in range(game.num_agents):
        vp = next_state_value(game, np.maximum(q[r], 0.0), r, variant)
        vn = next_state_value(game, np.minimum(q[r], 0.0), r, variant)
        nxt = tau * _expect_next(game, vp, r) + (1.0 - tau) * _expect_next(game, vn, r)
        out.append(game.rewards[r] + game.gamma * nxt)
    return out


def sup_distance(a: QTable, b: QTable) -> float:
    return float(max(np.max(np.abs(x - y)) for x, y in zip(a, b)))


def contraction_probe(
    game: FiniteGame, operator: Operator, trials: int, rng: np.random.Generator, scale: float = 10.0
) -> float:
    """Largest observed ``||H Q1 - H Q2|| / ||Q1 - Q2||`` over random pairs."""
    if trials < 1:
        raise ValueError("need at least one trial")
    worst = 0.0
    for _ in range(trials):
        q1, q2 = game.random_table(rng, scale), game.random_table(rng, scale)
        gap = sup_distance(q1, q2)
        if gap == 0.0:
            continue
        worst = max(worst, sup_distance(operator(q1), operator(q2)) / gap)
    return worst


@dataclass(frozen=True)
class FixedPointResult:
    q: QTable
    iterations: int
    residual: float
    converged: bool


def iterate_to_fixed_point(
    game: FiniteGame,
    operator: Operator,
    tol: float = 1e-8,
    max_iters: int = 100_000,
    q0: QTable | None = None,
) -> FixedPointResult:
    """Value iteration ``Q <- H Q`` until the iterate is provably within ``tol``.

    Stops once ``gamma / (1 - gamma) * ||H Q - Q|| <= tol``, which bounds the
    distance from the returned table to the fixed point by ``tol`` for any
    gamma-contraction.  ``residual`` is the last ``||H Q - Q||``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = game.zeros() if q0 is None else [t.copy() for t in q0]
    factor = game.gamma / (1.0 - game.gamma)
    residual = np.inf
    for k in range(1, max_iters + 1):
        nxt = operator(q)
        residual = sup_distance(nxt, q)
        q = nxt
        if factor * residual <= tol:
            return FixedPointResult(q, k, residual, True)
    return FixedPointResult(q, max_iters, float(residual), False)


def greedy_joint_action(game: FiniteGame, q: QTable, state: int = 0, variant: str = "joint_max") -> tuple[int, ...]:
    """Joint action the agents would play at ``state``.

    ``joint_max`` and ``literal`` tables are read optimistically: each agent
    takes its own component of the argmax joint action of its table.  The
    ``pessimistic`` reading has every agent take its maxmin action.
    """
    picks = []
    for r in range(game.num_agents):
        table = q[r][state]
        if variant == "pessimistic":
            opp = tuple(j for j in range(game.num_agents) if j != r)
            picks.append(int(np.argmax(np.min(table, axis=opp))))
        else:
            picks.append(int(np.unravel_index(int(np.argmax(table)), table.shape)[r]))
    return tuple(picks)


def async_q_update(
    game: FiniteGame,
    q: QTable,
    state: int,
    joint_action: Sequence[int],
    next_state: int,
    alpha: float,
    variant: str = "joint_max",
    next_own: Sequence[int] | None = None,
) -> QTable:
    """Move only the visited entry toward the sampled bootstrap target.

    ``Q_r(s, a) += alpha (rwd_r(s, a) + gamma * V_r(s') - Q_r(s, a))`` where
    ``V_r`` follows ``variant`` (the own action held is ``next_own[r]`` when
    given, else the current ``a_r``).  Returns new tables.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    a = tuple(int(x) for x in joint_action)
    if not 0 <= state < game.num_states or not 0 <= next_state < game.num_states:
        raise IndexError("state index out of range")
    if len(a) != game.num_agents or any(not 0 <= x < n for x, n in zip(a, game.action_counts)):
        raise IndexError(f"joint action {a} out of range")
    out = [t.copy() for t in q]
    for r in range(game.num_agents):
        v = next_state_value(game, q[r], r, variant)[next_state]
        if v.shape[r] != 1:
            own = a[r] if next_own is None else int(next_own[r])
            v = np.take(v, own, axis=r)
        target = game.rewards[r][(state, *a)] + game.gamma * float(v.reshape(-1)[0])
        out[r][(state, *a)] += alpha * (target - q[r][(state, *a)])
    return out


def run_async_q(
    game: FiniteGame,
    samples: int,
    rng: np.random.Generator,
    variant: str = "joint_max",
    rate_exponent: float = 1.0,
) -> QTable:
    """Uniform exploration with per-pair step ``alpha = visits ** -rate_exponent``.

    Each sample draws a state and joint action uniformly, then a next state
    from the kernel.  Updates are applied in place for speed, with exactly
    the arithmetic of :func:`async_q_update`.
    """
    q = game.zeros()
    visits = np.zeros(game.table_shape, dtype=np.int64)
    shape = game.table_shape
    flat_index = rng.integers(0, int(np.prod(shape)), size=samples)
    u = rng.random(samples)
    cdf = np.cumsum(game.transitions.reshape(-1, game.num_states), axis=1)
    for k in range(samples):
        idx = np.unravel_index(int(flat_index[k]), shape)
        s_next = int(min(np.searchsorted(cdf[flat_index[k]], u[k], side="right"), game.num_states - 1))
        visits[idx] += 1
        alpha = visits[idx] ** -rate_exponent
        for r in range(game.num_agents):
            v = next_state_value(game, q[r], r, variant)[s_next]
            if v.shape[r] != 1:
                v = np.take(v, idx[1 + r], axis=r)
            target = game.rewards[r][idx] + game.gamma * float(v.reshape(-1)[0])
            q[r][idx] += alpha * (target - q[r][idx])
    return q


__all__ = [
    "FiniteGame",
    "FixedPointResult",
    "OPERATOR_VARIANTS",
    "async_q_update",
    "contraction_probe",
    "expectile_pareto_apply",
    "greedy_joint_action",
    "iterate_to_fixed_point",
    "next_state_value",
    "pareto_apply",
    "penalty_game",
    "random_game",
    "run_async_q",
    "sup_distance",
    "team_game",
]
