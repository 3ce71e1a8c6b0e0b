"""Episode rollouts and the replay-driven training loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from ..config import ExperimentConfig, rng_stream
from ..env import MultiSPEnv, Observation, round_records
from ..tcad import Action, ActionSpace, apply_deltas, initial_action, observed_delta
from .pac import PacAgent, adapt_tau
from .replay import ReplayBuffer, Transition, TransitionBatch


class Controller(Protocol):
    """Anything that turns an SP's observation into its next absolute action."""

    def begin_episode(self, start: np.ndarray) -> None: ...

    def next_action(
        self, obs: Observation, enc: np.ndarray, prev: np.ndarray, rng: np.random.Generator, mode: str
    ) -> np.ndarray: ...


class AgentController:
    """Adapter that lets a :class:`PacAgent` drive rollouts through TCAD."""

    def __init__(self, agent: PacAgent):
        self.agent = agent
        self.last_delta: np.ndarray | None = None

    def begin_episode(self, start: np.ndarray) -> None:
        self.last_delta = None

    def next_action(self, obs, enc, prev, rng, mode):
        self.last_delta = self.agent.act(enc, rng, mode)
        return apply_deltas(prev, self.last_delta[None], self.agent.space)[0]


@dataclass
class EpisodeOutcome:
    rewards: np.ndarray  # (T, R)
    accuracy: np.ndarray  # (T, R)
    vol: np.ndarray  # (T, R)
    latency: np.ndarray  # (T, R)
    energy: np.ndarray  # (T, R)
    batches: list[TransitionBatch] | None
    records: list[dict]


def rollout(
    env: MultiSPEnv,
    controllers: Sequence[Controller],
    episode: int,
    rng: np.random.Generator,
    mode: str = "sample",
    agents: Sequence[PacAgent] | None = None,
    keep_records: bool = False,
) -> EpisodeOutcome:
    """Play one episode.  With ``agents`` given, transitions are collected
    and the agents' EMA targets and expectiles are updated online."""
    cfg = env.config
    space = env.space
    R, T = cfg.num_sps, cfg.rounds
    start = initial_action(cfg).as_array()
    prev = [start.copy() for _ in range(R)]
    for c in controllers:
        c.begin_episode(start.copy())
    obs = env.reset(episode, [Action.from_array(p) for p in prev])
    enc = [env.encode(obs[r], r) for r in range(R)]
    stats = {k: np.zeros((T, R)) for k in ("rewards", "accuracy", "vol", "latency", "energy")}
    steps: list[list[Transition]] = [[] for _ in range(R)]
    records: list[dict] = []
    for t in range(T):
        acts = [controllers[r].next_action(obs[r], enc[r], prev[r], rng, mode) for r in range(R)]
        requested = [Action.from_array(a) for a in acts]
        res = env.step(requested)
        next_enc = [env.encode(res.observations[r], r) for r in range(R)]
        for r in range(R):
            stats["rewards"][t, r] = res.rewards[r]
            stats["accuracy"][t, r] = res.observations[r].accuracy
            stats["vol"][t, r] = res.costs[r].vol_total
            stats["latency"][t, r] = res.costs[r].t_total
            stats["energy"][t, r] = res.costs[r].e_total
        if keep_records:
            records.extend(round_records(episode, res, requested))
        if agents is not None:
            for r, agent in enumerate(agents):
                others = [j for j in range(R) if j != r]
                opp_prev = np.stack([prev[j] for j in others])
                opp = np.stack([acts[j] for j in others])
                steps[r].append(
                    Transition(
                        obs=enc[r],
                        own_prev=prev[r],
                        delta=apply_delta_record(prev[r], acts[r]),
                        own=acts[r],
                        opp_prev=opp_prev,
                        opp=opp,
                        reward=res.rewards[r],
                        next_obs=next_enc[r],
                        done=res.done,
                    )
                )
                if agent.ema is not None:
                    agent.ema.update(observed_delta(opp_prev, opp))
                if cfg.adapt_tau:
                    agent.tau = adapt_tau(
                        agent.tau, res.observations[r].accuracy, cfg.tau_threshold,
                        cfg.tau_inc, cfg.tau_dec, cfg.tau_bounds,
                    )
        prev, obs, enc = acts, res.observations, next_enc
    batches = [TransitionBatch.stack(s) for s in steps] if agents is not None else None
    return EpisodeOutcome(batches=batches, records=records, **stats)


def apply_delta_record(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    """Direction actually taken between two absolute actions (for logs)."""
    return observed_delta(prev, cur)


@dataclass
class TrainLog:
    """Per-episode means over rounds, each of shape ``(episodes, R)``."""

    rewards: np.ndarray
    accuracy_max: np.ndarray
    vol: np.ndarray
    latency: np.ndarray
    energy: np.ndarray
    updates: list[dict] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)

    @property
    def total_rewards(self) -> np.ndarray:
        """Sum over SPs of each episode's mean per-round reward."""
        return self.rewards.sum(axis=1)


def make_agents(config: ExperimentConfig, variant: str, obs_dim: int, seed: int) -> list[PacAgent]:
    return [
        PacAgent(r, config, obs_dim, variant, rng_stream(seed, f"init/{variant}/{r}"))
        for r in range(config.num_sps)
    ]


def episode_summaries(outcomes: list[EpisodeOutcome], R: int) -> dict[str, np.ndarray]:
    if not outcomes:
        empty = np.zeros((0, R))
        return {k: empty for k in ("rewards", "accuracy_max", "vol", "latency", "energy")}
    return {
        "rewards": np.stack([o.rewards.mean(axis=0) for o in outcomes]),
        "accuracy_max": np.stack([o.accuracy.max(axis=0) for o in outcomes]),
        "vol": np.stack([o.vol.mean(axis=0) for o in outcomes]),
        "latency": np.stack([o.latency.mean(axis=0) for o in outcomes]),
        "energy": np.stack([o.energy.mean(axis=0) for o in outcomes]),
    }


def train(
    agents: Sequence[PacAgent],
    env: MultiSPEnv,
    config: ExperimentConfig,
    rng: np.random.Generator,
    episodes: int | None = None,
    keep_records: bool = False,
    progress: Callable[[int, np.ndarray], None] | None = None,
) -> TrainLog:
    """Roll out, buffer episodes, and update every agent once per episode
    after the warm-up, all agents sharing one sampled batch of time steps."""
    episodes = config.episodes if episodes is None else int(episodes)
    buffer = ReplayBuffer(config.replay_capacity)
    controllers = [AgentController(a) for a in agents]
    outcomes: list[EpisodeOutcome] = []
    updates: list[dict] = []
    records: list[dict] = []
    for ep in range(episodes):
        out = rollout(env, controllers, ep, rng, "sample", agents, keep_records)
        buffer.insert(out.batches)
        records.extend(out.records)
        out.batches = None
        outcomes.append(out)
        if len(buffer) >= config.warmup_episodes:
            batch = buffer.sample(rng, config.batch_episodes, config.batch_transitions)
            for agent, b in zip(agents, batch):
                stats = agent.update(b, rng)
                updates.append({"episode": ep, "sp": agent.index, **stats})
        if progress is not None:
            progress(ep, out.rewards.mean(axis=0))
    return TrainLog(updates=updates, records=records, **episode_summaries(outcomes, config.num_sps))


def evaluate_controllers(
    env: MultiSPEnv,
    controllers: Sequence[Controller],
    config: ExperimentConfig,
    rng: np.random.Generator,
    episodes: int | None = None,
    mode: str = "sample",
    first_episode: int = 1_000_000,
    keep_records: bool = False,
) -> TrainLog:
    """Run frozen controllers on held-out episode indices (shared across
    policies, so client profiles match between compared methods)."""
    episodes = config.eval_episodes if episodes is None else int(episodes)
    outcomes = [
        rollout(env, controllers, first_episode + k, rng, mode, None, keep_records) for k in range(episodes)
    ]
    records = [rec for o in outcomes for rec in o.records]
    return TrainLog(records=records, **episode_summaries(outcomes, config.num_sps))


__all__ = [
    "AgentController",
    "Controller",
    "EpisodeOutcome",
    "TrainLog",
    "episode_summaries",
    "evaluate_controllers",
    "make_agents",
    "rollout",
    "train",
]
