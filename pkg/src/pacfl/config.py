"""Experiment configuration, unit handling and seeded random streams.

All values are held in SI base units (Hz, W, J, s, bits).  Config documents
are YAML (JSON is accepted too, being a YAML subset); any key may be omitted
and falls back to the defaults below.  Dimensional values may be written as
strings with a unit suffix, e.g. ``f_max: 3.5 GHz`` or ``b_max: "30 MHz"``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import re
from dataclasses import dataclass, field, fields
from typing import Any, Mapping

import numpy as np
import yaml


class ConfigError(ValueError):
    """Raised for unparsable documents or violated configuration bounds."""


def db_to_linear(x: float) -> float:
    return 10.0 ** (x / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def dbm_to_watts(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


def watts_to_dbm(x: float) -> float:
    return 10.0 * math.log10(x) + 30.0


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent, reproducible generator addressed by ``(seed, label)``.

    The label is hashed into the seed sequence entropy, so streams with
    different labels never share state and are stable across processes
    (unlike ``hash(str)``, which is salted per interpreter).
    """
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words])
    return np.random.Generator(np.random.PCG64(ss))


_UNITS: dict[str, tuple[str, float]] = {
    "hz": ("frequency", 1.0),
    "khz": ("frequency", 1e3),
    "mhz": ("frequency", 1e6),
    "ghz": ("frequency", 1e9),
    "w": ("power", 1.0),
    "mw": ("power", 1e-3),
    "j": ("energy", 1.0),
    "mj": ("energy", 1e-3),
    "s": ("time", 1.0),
    "ms": ("time", 1e-3),
    "bits": ("data", 1.0),
    "kbits": ("data", 1e3),
    "mbits": ("data", 1e6),
}

_QUANTITY = re.compile(r"^\s*([-+0-9.eE]+)\s*([A-Za-z]+)\s*$")


def parse_quantity(value: Any, dimension: str | None = None) -> float:
    """Convert ``"3.5 GHz"``-style strings (or bare numbers) to SI floats.

    ``dBm`` converts to watts and ``dB`` to a linear ratio.  When
    ``dimension`` is given, a suffix of another dimension is rejected.
    """
    if isinstance(value, bool):
        raise ConfigError(f"expected a quantity, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    m = _QUANTITY.match(str(value))
    if m is None:
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"cannot parse quantity {value!r}") from None
    number, unit = float(m.group(1)), m.group(2).lower()
    if unit == "dbm":
        dim, si = "power", dbm_to_watts(number)
    elif unit == "db":
        dim, si = "ratio", db_to_linear(number)
    elif unit in _UNITS:
        dim, scale = _UNITS[unit]
        si = number * scale
    else:
        raise ConfigError(f"unknown unit {m.group(2)!r} in {value!r}")
    if dimension is not None and dim != dimension:
        raise ConfigError(f"{value!r} is a {dim}, expected a {dimension}")
    return si


def _cycle(values: tuple, n: int) -> tuple:
    return tuple(values[i % len(values)] for i in range(n))


# Per-SP defaults for the three reference tasks (hard, medium, easy).
_TASKS = ("hard", "medium", "easy")
_SIGMA1 = (100.0, 100.0, 100.0)
_SIGMA2 = (4.8, 31.25, 12.5)
_SIGMA34 = (0.8, 25.0, 16.6)
_CYCLES = ((6.07e5, 7.41e5), (6.07e5, 7.41e5), (1.10e8, 1.34e8))
_PAYLOAD_DIM = (9_074_474, 21_840, 101_770)
_COST_SAMPLES = (2000.0, 100.0, 1.0)
_E_MAX = (60.0, 5.0, 5.0)
_T_MAX = (30.0, 2.0, 2.0)

_DIMENSIONS = {
    "f_min": "frequency",
    "f_max": "frequency",
    "b_min": "frequency",
    "b_max": "frequency",
    "jitter_f": "frequency",
    "gran_f": "frequency",
    "gran_b": "frequency",
    "e_max": "energy",
    "t_max": "time",
}

_PER_SP = (
    "tau",
    "sigma1",
    "sigma2",
    "sigma3",
    "sigma4",
    "e_max",
    "t_max",
    "tasks",
    "cycles_range",
    "payload_dim",
    "cost_samples",
)


@dataclass(frozen=True)
class ExperimentConfig:
    num_clients: int = 5
    num_sps: int = 3
    rounds: int = 35
    episodes: int = 200
    local_steps: int = 3
    local_batch: int = 64
    fl_lr: float = 0.01
    non_iid: float = 1.0
    quantize_target: str = "delta"
    p_norm: float = 2.0

    tau: tuple[float, ...] = (0.5, 0.5, 0.5)
    gamma: float = 0.99
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    sigma1: tuple[float, ...] = _SIGMA1
    sigma2: tuple[float, ...] = _SIGMA2
    sigma3: tuple[float, ...] = _SIGMA34
    sigma4: tuple[float, ...] = _SIGMA34
    epsilon: float = 0.01
    violation_penalty: float = 0.0

    jitter_q: float = 0.5
    jitter_f: float = 0.25e9
    f_min: float = 0.5e9
    f_max: float = 3.5e9
    b_min: float = 2e6
    b_max: float = 30e6
    q_min: int = 2
    q_max: int = 32
    e_max: tuple[float, ...] = _E_MAX
    t_max: tuple[float, ...] = _T_MAX

    gran_n: int = 1
    gran_f: float = 0.5e9
    gran_b: float = 2e6
    gran_q: int = 4

    capacitance: float = 1e-27
    cycles_range: tuple[tuple[float, float], ...] = _CYCLES
    channel_gain_db: tuple[float, float] = (-73.0, -63.0)
    noise_dbm_per_hz: tuple[float, float] = (-174.0, -124.0)
    tx_power_dbm: tuple[float, float] = (10.0, 33.0)
    payload_dim: tuple[int, ...] = _PAYLOAD_DIM
    cost_samples: tuple[float, ...] = _COST_SAMPLES
    tasks: tuple[str, ...] = _TASKS

    replay_capacity: int = 64
    warmup_episodes: int = 8
    batch_episodes: int = 4
    batch_transitions: int = 32
    polyak: float = 0.995
    critic_steps: int = 8
    reward_scale: float = 100.0
    chi: float = 0.1
    gen_samples: int = 8
    ema_decay: float = 0.99
    eval_episodes: int = 10

    adapt_tau: bool = False
    tau_threshold: float = 0.8
    tau_inc: float = 0.05
    tau_dec: float = 0.05
    tau_bounds: tuple[float, float] = (0.1, 0.9)

    seed: int = 0

    def __post_init__(self) -> None:
        _validate(self)

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return load_config({**to_dict(self), **changes})


def _validate(c: ExperimentConfig) -> None:
    def fail(msg: str) -> None:
        raise ConfigError(msg)

    if c.num_clients < 1:
        fail("num_clients below 1")
    if c.num_sps < 1:
        fail("num_sps below 1")
    if c.rounds < 1:
        fail("rounds below 1")
    if c.episodes < 0:
        fail("episodes negative")
    if c.critic_steps < 1:
        fail("critic_steps below 1")
    if c.local_steps < 1:
        fail("local_steps below 1")
    if c.q_min < 2:
        fail("q_min below 2")
    if c.q_min > c.q_max:
        fail("q_min above q_max")
    if c.f_min <= 0 or c.f_min > c.f_max:
        fail("f_min must satisfy 0 < f_min <= f_max")
    if c.b_min <= 0 or c.b_min > c.b_max:
        fail("b_min must satisfy 0 < b_min <= b_max")
    if not 0.0 < c.non_iid <= 1.0:
        fail("non_iid outside (0, 1]")
    if not 0.0 <= c.gamma < 1.0:
        fail("gamma outside [0, 1)")
    if any(not 0.0 < t < 1.0 for t in c.tau):
        fail("tau outside (0, 1)")
    if min(c.gran_n, c.gran_f, c.gran_b, c.gran_q) <= 0:
        fail("granularities must be positive")
    if c.epsilon < 0 or c.jitter_q < 0 or c.jitter_f < 0:
        fail("epsilon and jitter must be nonnegative")
    for name in ("sigma1", "sigma2", "sigma3", "sigma4"):
        if any(s < 0 for s in getattr(c, name)):
            fail(f"{name} must be nonnegative")
    for name in _PER_SP:
        if len(getattr(c, name)) != c.num_sps:
            fail(f"{name} needs {c.num_sps} entries, got {len(getattr(c, name))}")
    lo, hi = c.tau_bounds
    if not 0.0 < lo < hi < 1.0:
        fail("tau_bounds must satisfy 0 < min < max < 1")
    if c.quantize_target not in ("delta", "params"):
        fail("quantize_target must be 'delta' or 'params'")
    if c.warmup_episodes < c.batch_episodes:
        fail("warmup_episodes below batch_episodes")
    if c.batch_episodes > c.replay_capacity:
        fail("batch_episodes above replay_capacity")


def _coerce(name: str, value: Any, default: Any) -> Any:
    dim = _DIMENSIONS.get(name)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name} must be a list")
        if default and isinstance(default[0], tuple):
            return tuple(tuple(float(v) for v in item) for item in value)
        if default and isinstance(default[0], str):
            return tuple(str(v) for v in value)
        if default and isinstance(default[0], int) and not isinstance(default[0], bool):
            return tuple(int(v) for v in value)
        return tuple(parse_quantity(v, dim) for v in value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true/false")
        return value
    if isinstance(default, int):
        f = parse_quantity(value, dim)
        if f != int(f):
            raise ConfigError(f"{name} must be an integer")
        return int(f)
    if isinstance(default, float):
        return parse_quantity(value, dim)
    return value


def load_config(source: str | Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Parse a YAML/JSON document (or mapping) into a validated config.

    Per-SP lists left unspecified are sized to ``num_sps`` by cycling the
    three reference-task defaults.
    """
    if source is None:
        doc: Mapping[str, Any] = {}
    elif isinstance(source, Mapping):
        doc = source
    else:
        try:
            doc = yaml.safe_load(source) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        if not isinstance(doc, Mapping):
            raise ConfigError("config document must be a mapping")

    defaults = {f.name: f.default for f in fields(ExperimentConfig)}
    unknown = set(doc) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    values: dict[str, Any] = {}
    for name, value in doc.items():
        values[name] = _coerce(name, value, defaults[name])
    if "num_sps" in values:
        r = values["num_sps"]
        for name in _PER_SP:
            if name not in values:
                values[name] = _cycle(defaults[name], r)
    return ExperimentConfig(**values)


def to_dict(config: ExperimentConfig) -> dict[str, Any]:
    def plain(v: Any) -> Any:
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    return {k: plain(v) for k, v in dataclasses.asdict(config).items()}


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(config), sort_keys=True)


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(config).encode()).hexdigest()[:12]


__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "config_hash",
    "db_to_linear",
    "dbm_to_watts",
    "dump_config",
    "linear_to_db",
    "load_config",
    "parse_quantity",
    "rng_stream",
    "to_dict",
    "watts_to_dbm",
]
