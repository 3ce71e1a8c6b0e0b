"""Computation and FDMA communication cost model for one FL round."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ExperimentConfig, db_to_linear, dbm_to_watts


@dataclass(frozen=True)
class ClientProfile:
    """Physical constants of one client.

    ``cycles_per_sample`` and ``dataset_size`` are indexed by service.
    """

    capacitance: float
    cycles_per_sample: tuple[float, ...]
    dataset_size: tuple[float, ...]
    channel_gain: float
    tx_power: float
    noise_psd: float

    def __post_init__(self) -> None:
        if self.capacitance <= 0 or self.channel_gain <= 0:
            raise ValueError("capacitance and channel gain must be positive")
        if self.tx_power <= 0 or self.noise_psd <= 0:
            raise ValueError("tx power and noise density must be positive")
        if any(c <= 0 for c in self.cycles_per_sample):
            raise ValueError("cycles per sample must be positive")
        if any(d < 0 for d in self.dataset_size):
            raise ValueError("dataset sizes must be nonnegative")


@dataclass(frozen=True)
class ClientCost:
    e_cmp: float
    t_cmp: float
    e_com: float
    t_com: float
    vol: float

    @property
    def energy(self) -> float:
        return self.e_cmp + self.e_com

    @property
    def latency(self) -> float:
        return self.t_cmp + self.t_com


@dataclass(frozen=True)
class RoundCosts:
    clients: tuple[ClientCost, ...]
    e_total: float
    t_total: float
    vol_total: float


def _check_freq(f: float) -> None:
    if not f > 0:
        raise ValueError(f"CPU frequency must be positive, got {f}")


def energy_cmp(profile: ClientProfile, service: int, f: float) -> float:
    _check_freq(f)
    return (
        profile.capacitance
        * profile.cycles_per_sample[service]
        * profile.dataset_size[service]
        * f**2
    )


def latency_cmp(profile: ClientProfile, service: int, f: float) -> float:
    _check_freq(f)
    return profile.cycles_per_sample[service] * profile.dataset_size[service] / f


def tx_rate(bandwidth: float, gain: float, power: float, noise_psd: float) -> float:
    """Shannon rate ``B log2(1 + g p / (B N0))`` in bits/s."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive; unallocated clients are unschedulable")
    if not noise_psd > 0:
        raise ValueError("noise density must be positive")
    return bandwidth * math.log2(1.0 + gain * power / (bandwidth * noise_psd))


def comm_costs(vol: float, rate: float, power: float) -> tuple[float, float]:
    if not rate > 0:
        raise ValueError("transmission rate must be positive")
    t_com = vol / rate
    return t_com, t_com * power


def round_totals(costs: Sequence[ClientCost]) -> RoundCosts:
    """Energy sums over the selected clients; latency is the slowest client."""
    if not costs:
        raise ValueError("round needs at least one selected client")
    return RoundCosts(
        clients=tuple(costs),
        e_total=float(sum(c.energy for c in costs)),
        t_total=float(max(c.latency for c in costs)),
        vol_total=float(sum(c.vol for c in costs)),
    )


def client_round_cost(
    profile: ClientProfile,
    service: int,
    f: float,
    bandwidth: float,
    vol: float,
) -> ClientCost:
    rate = tx_rate(bandwidth, profile.channel_gain, profile.tx_power, profile.noise_psd)
    t_com, e_com = comm_costs(vol, rate, profile.tx_power)
    return ClientCost(
        e_cmp=energy_cmp(profile, service, f),
        t_cmp=latency_cmp(profile, service, f),
        e_com=e_com,
        t_com=t_com,
        vol=float(vol),
    )


def sample_profiles(config: ExperimentConfig, rng: np.random.Generator) -> list[ClientProfile]:
    """Draw one episode's client constants; dB-valued ranges are sampled in dB."""
    profiles = []
    for _ in range(config.num_clients):
        cycles = tuple(float(rng.uniform(lo, hi)) for lo, hi in config.cycles_range)
        gain = db_to_linear(rng.uniform(*sorted(config.channel_gain_db)))
        noise = dbm_to_watts(rng.uniform(*sorted(config.noise_dbm_per_hz)))
        power = dbm_to_watts(rng.uniform(*sorted(config.tx_power_dbm)))
        profiles.append(
            ClientProfile(
                capacitance=config.capacitance,
                cycles_per_sample=cycles,
                dataset_size=tuple(float(s) for s in config.cost_samples),
                channel_gain=gain,
                tx_power=power,
                noise_psd=noise,
            )
        )
    return profiles


__all__ = [
    "ClientCost",
    "ClientProfile",
    "RoundCosts",
    "client_round_cost",
    "comm_costs",
    "energy_cmp",
    "latency_cmp",
    "round_totals",
    "sample_profiles",
    "tx_rate",
]
