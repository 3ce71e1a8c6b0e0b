"""Experiment runner, static baselines, run summaries and output files.

Every run writes two files into its output directory:

``<run_id>.csv``
    One row per (phase, episode, SP).  Columns are listed in
    :data:`CSV_COLUMNS`.  ``phase`` is ``train`` for the configured training
    episodes and ``eval`` for the held-out evaluation episodes.  Numeric
    values are episode means over rounds, except ``acc_max`` which is the
    best round accuracy of the episode.
``<run_id>.jsonl``
    One JSON object per (phase, episode, round, SP) with the executed
    action and the round's raw costs.

The run id is ``<policy>-s<seed>-<config hash>``.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .agents import AgentController, PacAgent, evaluate_controllers, make_agents, train
from .agents.pac import VARIANTS as LEARNING_POLICIES
from .agents.training import TrainLog, episode_summaries, rollout
from .config import ExperimentConfig, config_hash, rng_stream
from .env import MultiSPEnv, Observation
from .metrics import hvi
from .neural import Mlp
from .tcad import ActionSpace, initial_action, project

STATIC_POLICIES = ("fixed", "uniform_q", "heuristic")
POLICIES = STATIC_POLICIES + LEARNING_POLICIES
UNIFORM_Q = 8
PLATEAU_TOL = 1e-3
PLATEAU_ROUNDS = 3

CSV_COLUMNS = ("policy", "seed", "config_hash", "phase", "episode", "sp", "reward", "acc_max", "vol", "latency", "energy")


# -- static baselines -----------------------------------------------------


class StaticController:
    """Plays one absolute action for every round."""

    def __init__(self, action: np.ndarray):
        self.action = np.asarray(action, dtype=np.float64)

    def begin_episode(self, start: np.ndarray) -> None:
        pass

    def next_action(self, obs, enc, prev, rng, mode):
        return self.action.copy()


def equal_split_action(config: ExperimentConfig, q: int) -> np.ndarray:
    """Default client count and frequency, bandwidth split evenly, given q."""
    base = initial_action(config)
    space = ActionSpace.from_config(config)
    return project(np.array([base.n, base.f, config.b_max / config.num_sps, q], dtype=np.float64), space)


class HeuristicController:
    """Quantization-tied allocation.

    q starts at its minimum and rises by one lattice step whenever the loss
    has changed by less than ``PLATEAU_TOL`` for ``PLATEAU_ROUNDS``
    consecutive rounds.  Frequency and bandwidth follow q proportionally:
    ``f = f_max * q / q_max`` and ``B = (B_max / R) * q / q_max``, each
    clamped to its range.  The client count stays at its default.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.space = ActionSpace.from_config(config)
        self.q = config.q_min
        self.last_loss: float | None = None
        self.stalled = 0

    def begin_episode(self, start: np.ndarray) -> None:
        self.q = self.config.q_min
        self.last_loss = None
        self.stalled = 0

    def observe_loss(self, loss: float) -> None:
        if self.last_loss is not None:
            self.stalled = self.stalled + 1 if abs(loss - self.last_loss) < PLATEAU_TOL else 0
        self.last_loss = float(loss)
        if self.stalled >= PLATEAU_ROUNDS:
            self.q = min(self.q + self.config.gran_q, self.config.q_max)
            self.stalled = 0

    def action_for(self, q: int) -> np.ndarray:
        cfg = self.config
        scale = q / cfg.q_max
        raw = np.array([initial_action(cfg).n, cfg.f_max * scale, cfg.b_max / cfg.num_sps * scale, q], dtype=np.float64)
        return project(raw, self.space)

    def step(self, obs: Observation) -> np.ndarray:
        """Fold in one observation and return the next action."""
        if obs.t > 0:
            self.observe_loss(obs.loss)
        return self.action_for(self.q)

    def next_action(self, obs, enc, prev, rng, mode):
        return self.step(obs)


def heuristic_policy_step(controller: HeuristicController, obs: Observation) -> np.ndarray:
    """Functional alias for :meth:`HeuristicController.step`."""
    return controller.step(obs)


def static_controllers(config: ExperimentConfig, policy: str) -> list:
    if policy == "fixed":
        return [StaticController(equal_split_action(config, config.q_max)) for _ in range(config.num_sps)]
    if policy == "uniform_q":
        q = min(max(UNIFORM_Q, config.q_min), config.q_max)
        return [StaticController(equal_split_action(config, q)) for _ in range(config.num_sps)]
    if policy == "heuristic":
        return [HeuristicController(config) for _ in range(config.num_sps)]
    raise ValueError(f"unknown static policy {policy!r}")


def policy_config(config: ExperimentConfig, policy: str) -> ExperimentConfig:
    """Static constant-q baselines execute their q exactly (no per-client jitter)."""
    if policy in ("fixed", "uniform_q"):
        return config.replace(jitter_q=0.0)
    return config


# -- runs -----------------------------------------------------------------


@dataclass
class RunRecord:
    """Outcome of one (config, policy, seed) run."""

    policy: str
    seed: int
    config_hash: str
    train: TrainLog
    evaluation: TrainLog
    agents: list[PacAgent] = field(default_factory=list)

    @property
    def run_id(self) -> str:
        return f"{self.policy}-s{self.seed}-{self.config_hash}"

    @property
    def pareto_row(self) -> np.ndarray:
        """Per-SP mean reward over the evaluation episodes."""
        return self.evaluation.rewards.mean(axis=0)

    @property
    def total_reward(self) -> float:
        return float(self.pareto_row.sum())

    def rows(self) -> list[dict]:
        out = []
        for phase, log in (("train", self.train), ("eval", self.evaluation)):
            for ep in range(log.rewards.shape[0]):
                for sp in range(log.rewards.shape[1]):
                    out.append(
                        {
                            "policy": self.policy,
                            "seed": self.seed,
                            "config_hash": self.config_hash,
                            "phase": phase,
                            "episode": ep,
                            "sp": sp,
                            "reward": float(log.rewards[ep, sp]),
                            "acc_max": float(log.accuracy_max[ep, sp]),
                            "vol": float(log.vol[ep, sp]),
                            "latency": float(log.latency[ep, sp]),
                            "energy": float(log.energy[ep, sp]),
                        }
                    )
        return out


def _static_train(env: MultiSPEnv, controllers, config: ExperimentConfig, rng, keep_records: bool) -> TrainLog:
    outcomes = [rollout(env, controllers, ep, rng, "sample", None, keep_records) for ep in range(config.episodes)]
    records = [rec for o in outcomes for rec in o.records]
    return TrainLog(records=records, **episode_summaries(outcomes, config.num_sps))


def run(
    config: ExperimentConfig,
    policy: str,
    seed: int,
    out_dir: str | Path | None = None,
    keep_records: bool | None = None,
    progress=None,
) -> RunRecord:
    """Train (learning policies) or roll out (static ones), then evaluate.

    Evaluation uses ``config.eval_episodes`` held-out episode indices that
    are the same for every policy, so compared methods face identical
    client profiles.  With ``out_dir`` the CSV, JSONL round log and (for
    learning policies) a final checkpoint are written there.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; choose from {', '.join(POLICIES)}")
    keep = out_dir is not None if keep_records is None else keep_records
    base = config.replace(seed=int(seed))
    cfg = policy_config(base, policy)
    env = MultiSPEnv(cfg)
    train_rng = rng_stream(seed, f"train/{policy}")
    eval_rng = rng_stream(seed, "eval")
    agents: list[PacAgent] = []
    if policy in LEARNING_POLICIES:
        agents = make_agents(cfg, policy, env.obs_dim, seed)
        log = train(agents, env, cfg, train_rng, keep_records=keep, progress=progress)
        controllers = [AgentController(a) for a in agents]
    else:
        controllers = static_controllers(cfg, policy)
        log = _static_train(env, controllers, cfg, train_rng, keep)
    evaluation = evaluate_controllers(env, controllers, cfg, eval_rng, keep_records=keep)
    record = RunRecord(policy, int(seed), config_hash(base), log, evaluation, agents)
    if out_dir is not None:
        write_run(record, out_dir)
    return record


def run_many(
    config: ExperimentConfig, policies: Sequence[str], seeds: Iterable[int], out_dir=None, workers: int = 1
) -> list[RunRecord]:
    """Run every (policy, seed) pair, optionally across worker processes."""
    jobs = [(p, s) for p in policies for s in seeds]
    if workers <= 1:
        return [run(config, p, s, out_dir) for p, s in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run, config, p, s, out_dir) for p, s in jobs]
        return [f.result() for f in futures]


# -- files ----------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def csv_text(rows: Sequence[dict], columns: Sequence[str] = CSV_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def write_run(record: RunRecord, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{record.run_id}.csv", "jsonl": out / f"{record.run_id}.jsonl"}
    paths["csv"].write_text(csv_text(record.rows()))
    with open(paths["jsonl"], "w") as fh:
        for phase, log in (("train", record.train), ("eval", record.evaluation)):
            for rec in log.records:
                fh.write(json.dumps({"phase": phase, **rec}, sort_keys=True) + "\n")
    if record.agents:
        episodes = record.train.rewards.shape[0]
        paths["checkpoint"] = save_checkpoint(record.agents, out / "checkpoints" / record.run_id / f"ep{episodes}")
    return paths


def read_run_csv(path: str | Path) -> list[dict]:
    """Parse a run CSV, checking the header and converting column types."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for raw in reader:
            row = dict(raw)
            if row["phase"] not in ("train", "eval"):
                raise ValueError(f"{path}: bad phase {row['phase']!r}")
            for k in ("seed", "episode", "sp"):
                row[k] = int(row[k])
            for k in ("reward", "acc_max", "vol", "latency", "energy"):
                row[k] = float(row[k])
            rows.append(row)
    return rows


def pareto_row_from_rows(rows: Sequence[dict]) -> np.ndarray:
    """Per-SP mean evaluation reward from parsed CSV rows."""
    ev = [r for r in rows if r["phase"] == "eval"]
    if not ev:
        raise ValueError("run has no evaluation rows")
    num_sps = max(r["sp"] for r in ev) + 1
    sums, counts = np.zeros(num_sps), np.zeros(num_sps)
    for r in ev:
        sums[r["sp"]] += r["reward"]
        counts[r["sp"]] += 1
    return sums / counts


def save_checkpoint(agents: Sequence[PacAgent], directory: str | Path) -> Path:
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    for agent in agents:
        for name, net in agent.networks().items():
            net.save(path / f"agent{agent.index}_{name}.npz")
    return path


def load_checkpoint(agents: Sequence[PacAgent], directory: str | Path) -> None:
    """Restore every network of ``agents`` in place from ``directory``."""
    path = Path(directory)
    for agent in agents:
        for name, net in agent.networks().items():
            loaded = Mlp.load(path / f"agent{agent.index}_{name}.npz")
            if loaded.sizes != net.sizes:
                raise ValueError(f"checkpoint {name} for agent {agent.index} has sizes {loaded.sizes}, expected {net.sizes}")
            net.set_flat(loaded.get_flat())


# -- summaries ------------------------------------------------------------


@dataclass(frozen=True)
class PolicySummary:
    policy: str
    runs: int
    total_mean: float
    total_std: float
    reward_mean: tuple[float, ...]
    vol_mean: float
    latency_mean: float
    energy_mean: float
    hvi: float


def summarize(points: dict[str, list[np.ndarray]], extras: dict[str, dict] | None = None) -> list[PolicySummary]:
    """Means and standard deviations over seeds plus HVI per policy.

    Args:
        points: policy name to its per-seed Pareto rows (per-SP rewards).
        extras: optional per-policy means of ``vol``, ``latency`` and
            ``energy`` to carry into the table.
    """
    if not points or any(len(v) == 0 for v in points.values()):
        raise ValueError("every policy needs at least one run")
    lengths = {np.asarray(p).shape[-1] for rows in points.values() for p in rows}
    if len(lengths) != 1:
        raise ValueError(f"runs disagree on the number of SPs: {sorted(lengths)}")
    sets = {k: np.stack([np.asarray(p, dtype=np.float64) for p in v]) for k, v in points.items()}
    volumes = hvi(sets, degenerate="best")
    extras = extras or {}
    out = []
    for name, arr in sets.items():
        totals = arr.sum(axis=1)
        ex = extras.get(name, {})
        out.append(
            PolicySummary(
                policy=name,
                runs=arr.shape[0],
                total_mean=float(totals.mean()),
                total_std=float(totals.std()),
                reward_mean=tuple(float(x) for x in arr.mean(axis=0)),
                vol_mean=float(ex.get("vol", np.nan)),
                latency_mean=float(ex.get("latency", np.nan)),
                energy_mean=float(ex.get("energy", np.nan)),
                hvi=float(volumes[name]),
            )
        )
    return out


def summarize_records(records: Sequence[RunRecord]) -> list[PolicySummary]:
    points: dict[str, list[np.ndarray]] = {}
    extras: dict[str, dict] = {}
    for rec in records:
        points.setdefault(rec.policy, []).append(rec.pareto_row)
        ex = extras.setdefault(rec.policy, {"vol": [], "latency": [], "energy": []})
        ex["vol"].append(rec.evaluation.vol.mean())
        ex["latency"].append(rec.evaluation.latency.mean())
        ex["energy"].append(rec.evaluation.energy.mean())
    return summarize(points, {k: {m: float(np.mean(v)) for m, v in ex.items()} for k, ex in extras.items()})


def summarize_dir(directory: str | Path) -> list[PolicySummary]:
    """Summary table from every run CSV in ``directory``."""
    points: dict[str, list[np.ndarray]] = {}
    extras: dict[str, dict] = {}
    files = sorted(Path(directory).glob("*.csv"))
    files = [f for f in files if f.name != "summary.csv"]
    if not files:
        raise ValueError(f"no run CSVs in {directory}")
    for path in files:
        rows = read_run_csv(path)
        policy = rows[0]["policy"]
        points.setdefault(policy, []).append(pareto_row_from_rows(rows))
        ev = [r for r in rows if r["phase"] == "eval"]
        ex = extras.setdefault(policy, {"vol": [], "latency": [], "energy": []})
        for m in ex:
            ex[m].append(np.mean([r[m] for r in ev]))
    return summarize(points, {k: {m: float(np.mean(v)) for m, v in ex.items()} for k, ex in extras.items()})


SUMMARY_COLUMNS = ("policy", "runs", "total_mean", "total_std", "reward_mean", "vol_mean", "latency_mean", "energy_mean", "hvi")


def summary_text(table: Sequence[PolicySummary]) -> str:
    rows = []
    for s in table:
        row = {c: getattr(s, c) for c in SUMMARY_COLUMNS}
        row["reward_mean"] = " ".join(f"{x:.6g}" for x in s.reward_mean)
        rows.append(row)
    return csv_text(rows, SUMMARY_COLUMNS)


def parse_seeds(text: str) -> list[int]:
    """``"3"`` gives ``[3]``; ``"0..4"`` gives ``[0, 1, 2, 3, 4]`` (inclusive)."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo_i, hi_i = int(lo), int(hi)
        if hi_i < lo_i:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo_i, hi_i + 1))
    return [int(text)]


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))


__all__ = [
    "CSV_COLUMNS",
    "HeuristicController",
    "POLICIES",
    "PolicySummary",
    "RunRecord",
    "StaticController",
    "equal_split_action",
    "heuristic_policy_step",
    "load_checkpoint",
    "parse_seeds",
    "pareto_row_from_rows",
    "read_run_csv",
    "run",
    "run_many",
    "save_checkpoint",
    "summarize",
    "summarize_dir",
    "summarize_records",
    "summary_text",
    "write_run",
]
