"""Multi-SP federated learning environment.

Each round every SP picks an :class:`~pacfl.tcad.Action`; the environment
runs one quantized FedAvg round per SP on shared clients, prices the round
with the physical cost model and returns per-SP observations and rewards.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import fedcore
from .config import ExperimentConfig, rng_stream
from .quantizer import payload_bits, quantize
from .sysmodel import RoundCosts, client_round_cost, round_totals, sample_profiles
from .tcad import Action, ActionSpace

LOSS_CLIP = 5.0
COST_CLIP = 5.0


@dataclass(frozen=True)
class Observation:
    """What SP ``r`` sees after a round.

    ``action`` is the SP's own action that produced this observation; the
    rest mirrors the round state ``(Z, Theta, B_all)``.  Raw units.
    """

    t: int
    loss: float
    accuracy: float
    q: int
    t_total: float
    e_total: float
    vol: float
    bandwidths: tuple[float, ...]
    action: Action


@dataclass(frozen=True)
class ConstraintFlags:
    energy: bool
    latency: bool
    bandwidth: bool

    @property
    def c1(self) -> bool:
        return self.energy or self.latency


@dataclass(frozen=True)
class StepResult:
    observations: tuple[Observation, ...]
    rewards: tuple[float, ...]
    costs: tuple[RoundCosts, ...]
    flags: tuple[ConstraintFlags, ...]
    phis: tuple[float, ...]
    executed: tuple[Action, ...]
    done: bool


@dataclass(frozen=True)
class ClientSettings:
    f: float
    q: int
    B: float


def apply_action(
    a: Action,
    num_selected: int,
    jitter_q: float,
    jitter_f: float,
    space: ActionSpace,
    rng: np.random.Generator,
) -> list[ClientSettings]:
    """Per-client settings: Gaussian jitter on f and q, equal bandwidth split.

    Jittered values are clamped into bounds (q is rounded first).  Zero
    jitter skips the draws entirely, so the stream is not consumed.
    """
    if num_selected < 1:
        raise ValueError("need at least one selected client")
    f_lo, f_hi = space.lower[1], space.upper[1]
    q_lo, q_hi = int(space.lower[3]), int(space.upper[3])
    fs = np.full(num_selected, float(a.f))
    qs = np.full(num_selected, float(a.q))
    if jitter_f > 0:
        fs = fs + rng.normal(0.0, jitter_f, num_selected)
    if jitter_q > 0:
        qs = qs + rng.normal(0.0, jitter_q, num_selected)
    fs = np.clip(fs, f_lo, f_hi)
    qs = np.clip(np.rint(qs), q_lo, q_hi).astype(np.int64)
    b_each = a.B / num_selected
    return [ClientSettings(float(f), int(q), b_each) for f, q in zip(fs, qs)]


def adversarial_factor(
    n: int, q: int, vol_mbits: float, others: Sequence[tuple[int, int]], epsilon: float
) -> float:
    """``n q / (epsilon vol + sum_j n_j q_j)`` with vol in Mbits."""
    denom = epsilon * vol_mbits + sum(float(nj) * float(qj) for nj, qj in others)
    if not denom > 0:
        raise ValueError("adversarial factor denominator is zero (epsilon*vol and opponents all vanish)")
    return float(n) * float(q) / denom


def reward(
    accuracy: float,
    phi: float,
    energy: float,
    latency: float,
    sigma1: float,
    sigma2: float,
    sigma3: float,
    sigma4: float,
) -> float:
    return sigma1 * accuracy + sigma2 * phi - sigma3 * energy - sigma4 * latency


def arbitrate_bandwidth(requested: Sequence[float], b_min: float, b_max: float) -> tuple[list[float], bool]:
    """Scale joint requests proportionally to fit ``b_max``; flag C4 violations."""
    total = float(sum(requested))
    violated = total > b_max or total < b_min
    if total > b_max:
        scale = b_max / total
        return [b * scale for b in requested], violated
    return [float(b) for b in requested], violated


class MultiSPEnv:
    """R services sharing N clients and a bandwidth budget.

    Tasks and partitions are drawn once per environment; client physical
    profiles are redrawn on every :meth:`reset`.
    """

    def __init__(self, config: ExperimentConfig, seed: int | None = None):
        self.config = config
        self.seed = config.seed if seed is None else int(seed)
        self.space = ActionSpace.from_config(config)
        self.R = config.num_sps
        self.tasks = [
            fedcore.make_task(config.tasks[r], rng_stream(self.seed, f"task/{r}")) for r in range(self.R)
        ]
        self.shards = [
            fedcore.partition(
                self.tasks[r], config.num_clients, config.non_iid, rng_stream(self.seed, f"partition/{r}"), service=r
            )
            for r in range(self.R)
        ]
        self.vol_max = [
            config.num_clients * payload_bits(config.payload_dim[r], config.q_max) for r in range(self.R)
        ]
        self.t = 0
        self.episode = -1
        self.params: list[np.ndarray] = []
        self.profiles = []
        self._rng: np.random.Generator | None = None

    @property
    def done(self) -> bool:
        return self.t >= self.config.rounds

    def reset(self, episode: int, actions: Sequence[Action]) -> tuple[Observation, ...]:
        """Start an episode from ``actions`` (the initial joint action)."""
        self.episode = int(episode)
        self.t = 0
        self._rng = rng_stream(self.seed, f"env/{episode}")
        self.profiles = sample_profiles(self.config, rng_stream(self.seed, f"profiles/{episode}"))
        self.params = [fedcore.init_params(task) for task in self.tasks]
        bws = tuple(float(a.B) for a in actions)
        obs = []
        for r, task in enumerate(self.tasks):
            acc, loss = fedcore.evaluate(self.params[r], task.test_x, task.test_y, task.class_count)
            obs.append(Observation(0, loss, acc, int(actions[r].q), 0.0, 0.0, 0.0, bws, actions[r]))
        return tuple(obs)

    def _run_service(
        self, r: int, a: Action, bandwidth: float, rng: np.random.Generator
    ) -> tuple[RoundCosts, float, float]:
        cfg = self.config
        task = self.tasks[r]
        selected = fedcore.select_clients(self.shards[r], a.n)
        executed = Action(a.n, a.f, bandwidth, a.q)
        settings = apply_action(executed, len(selected), cfg.jitter_q, cfg.jitter_f, self.space, rng)
        global_params = self.params[r]
        updates, costs = [], []
        for shard, s in zip(selected, settings):
            local = fedcore.local_update(
                global_params, task, shard, cfg.fl_lr, cfg.local_steps, cfg.local_batch, rng
            )
            if cfg.quantize_target == "delta":
                updates.append((quantize(local - global_params, s.q, rng, cfg.p_norm), shard.weight))
            else:
                updates.append((quantize(local, s.q, rng, cfg.p_norm), shard.weight))
            vol = payload_bits(cfg.payload_dim[r], s.q)
            costs.append(client_round_cost(self.profiles[shard.client], r, s.f, s.B, vol))
        agg = fedcore.aggregate(updates)
        self.params[r] = global_params + agg if cfg.quantize_target == "delta" else agg
        acc, loss = fedcore.evaluate(self.params[r], task.test_x, task.test_y, task.class_count)
        return round_totals(costs), acc, loss

    def step(self, actions: Sequence[Action], rng: np.random.Generator | None = None) -> StepResult:
        if self._rng is None:
            raise RuntimeError("call reset() before step()")
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        if len(actions) != self.R:
            raise ValueError(f"expected {self.R} actions, got {len(actions)}")
        for a in actions:
            if not self.space.contains(a):
                raise ValueError(f"action out of bounds: {a}")
        rng = self._rng if rng is None else rng
        cfg = self.config
        bws, c4 = arbitrate_bandwidth([a.B for a in actions], cfg.b_min, cfg.b_max)

        self.t += 1
        results = [self._run_service(r, actions[r], bws[r], rng) for r in range(self.R)]
        obs, rewards, flags, phis = [], [], [], []
        for r, (costs, acc, loss) in enumerate(results):
            a = actions[r]
            others = [(actions[j].n, actions[j].q) for j in range(self.R) if j != r]
            phi = adversarial_factor(a.n, a.q, costs.vol_total / 1e6, others, cfg.epsilon)
            flag = ConstraintFlags(
                energy=costs.e_total > cfg.e_max[r],
                latency=costs.t_total > cfg.t_max[r],
                bandwidth=c4,
            )
            rwd = reward(
                acc, phi, costs.e_total, costs.t_total,
                cfg.sigma1[r], cfg.sigma2[r], cfg.sigma3[r], cfg.sigma4[r],
            )
            if flag.c1:
                rwd -= cfg.violation_penalty
            obs.append(
                Observation(self.t, loss, acc, int(a.q), costs.t_total, costs.e_total, costs.vol_total, tuple(bws), a)
            )
            rewards.append(float(rwd))
            flags.append(flag)
            phis.append(phi)
        executed = tuple(Action(a.n, a.f, b, a.q) for a, b in zip(actions, bws))
        return StepResult(
            tuple(obs), tuple(rewards), tuple(c for c, _, _ in results), tuple(flags), tuple(phis), executed, self.done
        )

    def encode(self, obs: Observation, r: int) -> np.ndarray:
        """Normalized agent input for SP ``r``."""
        cfg = self.config
        return encode_observation(obs, cfg, self.space, self.vol_max[r], r)

    @property
    def obs_dim(self) -> int:
        return 9 + self.R


def encode_observation(
    obs: Observation, config: ExperimentConfig, space: ActionSpace, vol_max: float, r: int
) -> np.ndarray:
    head = [
        obs.t / config.rounds,
        min(obs.loss, LOSS_CLIP) / LOSS_CLIP,
        obs.accuracy,
        obs.q / config.q_max,
        min(obs.t_total / config.t_max[r], COST_CLIP),
        min(obs.e_total / config.e_max[r], COST_CLIP),
        min(obs.vol / vol_max, COST_CLIP),
    ]
    bw = [b / config.b_max for b in obs.bandwidths]
    own = [obs.action.n / space.upper[0], obs.action.f / space.upper[1]]
    return np.asarray(head + bw + own, dtype=np.float64)


def round_records(episode: int, result: StepResult, requested: Sequence[Action]) -> list[dict]:
    """One flat log record per SP for a finished round."""
    out = []
    for r, (obs, rwd, costs, flag, phi, a) in enumerate(
        zip(result.observations, result.rewards, result.costs, result.flags, result.phis, result.executed)
    ):
        out.append(
            {
                "episode": episode,
                "t": obs.t,
                "sp": r,
                "n": a.n,
                "f": a.f,
                "B": a.B,
                "B_requested": requested[r].B,
                "q": a.q,
                "accuracy": obs.accuracy,
                "loss": obs.loss,
                "vol": costs.vol_total,
                "T_total": costs.t_total,
                "E_total": costs.e_total,
                "phi": phi,
                "reward": rwd,
                "c1": flag.c1,
                "c4": flag.bandwidth,
            }
        )
    return out


__all__ = [
    "ClientSettings",
    "ConstraintFlags",
    "MultiSPEnv",
    "Observation",
    "StepResult",
    "adversarial_factor",
    "apply_action",
    "arbitrate_bandwidth",
    "encode_observation",
    "reward",
    "round_records",
]
