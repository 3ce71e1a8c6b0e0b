"""Self-contained verification scenarios with pinned seeds.

Each function measures one property of the implementation and returns a
:class:`CheckResult` holding the measured values next to the tolerance they
are judged against.  The command line exposes them so every scenario can
be re-run outside the test suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .agents import AgentController, make_agents, rollout
from .agents.conjgen import kl_bound_check, softened_argmax
from .agents.pac import expectile_grad, expectile_loss
from .agents.replay import ReplayBuffer
from .config import ExperimentConfig, load_config, rng_stream
from .env import MultiSPEnv
from .metrics import action_payload_bytes, encode_action, hypervolume_exact, hypervolume_mc
from .neural import Mlp
from .quantizer import dequantize_rows, payload_bits, quantize_rows
from .sysmodel import ClientProfile, energy_cmp, latency_cmp, tx_rate
from .tabular import (
    contraction_probe,
    expectile_pareto_apply,
    greedy_joint_action,
    iterate_to_fixed_point,
    pareto_apply,
    penalty_game,
    random_game,
    run_async_q,
    sup_distance,
    team_game,
)
from .tcad import Action, enumerate_deltas, initial_action


@dataclass
class CheckResult:
    name: str
    passed: bool
    values: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_short(v)}" for k, v in self.values.items())
        return f"{status} {self.name} ({self.seconds:.1f}s) {shown}"


def _short(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _timed(name: str, fn: Callable[[], tuple[bool, dict]]) -> CheckResult:
    t0 = time.perf_counter()
    passed, values = fn()
    return CheckResult(name, bool(passed), values, time.perf_counter() - t0)


# -- quantization and physical model --------------------------------------


def quantization_unbiasedness(
    draws: int = 100_000, dim: int = 100, levels=(2, 8, 32), seed: int = 0, chunk: int = 10_000
) -> CheckResult:
    """Largest element-wise z-score of the Monte Carlo mean of dequantized draws."""

    def body():
        rng = rng_stream(seed, "check/quantization")
        worst = 0.0
        exact_ok = True
        for q in levels:
            v = rng.standard_normal(dim)
            total = np.zeros(dim)
            total_sq = np.zeros(dim)
            done = 0
            while done < draws:
                m = min(chunk, draws - done)
                x = dequantize_rows(*quantize_rows(np.broadcast_to(v, (m, dim)), q, rng), q)
                total += x.sum(axis=0)
                total_sq += (x * x).sum(axis=0)
                done += m
            mean = total / draws
            var = np.maximum(total_sq / draws - mean**2, 0.0) * draws / (draws - 1)
            se = np.sqrt(var / draws)
            random_part = se > 0
            exact_ok &= bool(np.allclose(mean[~random_part], v[~random_part], rtol=0, atol=1e-12))
            if random_part.any():
                worst = max(worst, float(np.max(np.abs(mean - v)[random_part] / se[random_part])))
        return worst <= 4.0 and exact_ok, {"max_z": worst, "deterministic_elements_exact": exact_ok}

    return _timed("quantization_unbiasedness", body)


def payload_formula() -> CheckResult:
    def body():
        got8, got2 = payload_bits(21840, 8), payload_bits(21840, 2)
        return got8 == 87_392 and got2 == 43_712, {"payload_q8": got8, "payload_q2": got2}

    return _timed("payload_formula", body)


def physical_golden() -> CheckResult:
    def body():
        profile = ClientProfile(1e-27, (6.07e5,), (1e4,), 1e-7, 0.1, 10 ** (-174 / 10) * 1e-3)
        e = energy_cmp(profile, 0, 1e9)
        t = latency_cmp(profile, 0, 1e9)
        gain = 10 ** (-70 / 10)
        power = 10 ** (20 / 10) * 1e-3
        noise = 10 ** (-174 / 10) * 1e-3
        rate = tx_rate(1e6, gain, power, noise)
        rel = abs(rate - 2.126e7) / 2.126e7
        ok = abs(e - 6.07) <= 1e-12 * 6.07 and abs(t - 6.07) <= 1e-12 * 6.07 and rel <= 1e-3
        return ok, {"E_cmp": e, "T_cmp": t, "rate": rate, "rate_rel_err": rel}

    return _timed("physical_golden", body)


# -- TCAD -------------------------------------------------------------------


def tcad_cardinality(config: ExperimentConfig | None = None) -> CheckResult:
    """81 ternary deltas and exactly 81**(R-1) critic calls per brute-force conjecture."""

    def body():
        cfg = config or load_config({"num_sps": 3})
        deltas = enumerate_deltas()
        agent = make_agents(cfg, "pac", 9 + cfg.num_sps, 0)[0]
        rng = rng_stream(0, "check/tcad")
        obs = rng.random(agent.obs_dim)
        own = initial_action(cfg).as_array()
        opp = np.stack([own] * agent.num_opponents)
        before = agent.counter.count
        agent.conjecture(agent.critic, obs, own, opp)
        evals = agent.counter.count - before
        expected = 81 ** (cfg.num_sps - 1)
        ok = len(deltas) == 81 and len(set(deltas)) == 81 and evals == expected
        return ok, {"deltas": len(deltas), "critic_evals": evals, "expected_evals": expected}

    return _timed("tcad_cardinality", body)


# -- gradients --------------------------------------------------------------


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


def mlp_gradient_error(seed: int = 0, sizes=(6, 16, 8, 3), batch: int = 5, h: float = 1e-6) -> float:
    """Worst relative error between backprop and central differences over all parameters."""
    rng = rng_stream(seed, "check/mlp-grad")
    net = Mlp(sizes, rng)
    x = rng.standard_normal((batch, sizes[0]))
    w = rng.standard_normal((batch, sizes[-1]))

    def loss(flat: np.ndarray) -> float:
        net.set_flat(flat)
        return float(np.sum(net.predict(x) * w))

    theta = net.get_flat().copy()
    net.set_flat(theta)
    net.forward(x)
    grads, _ = net.backward(w)
    analytic = np.concatenate([g.ravel() for g in grads])
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        numeric[i] = (loss(theta + e) - loss(theta - e)) / (2 * h)
    net.set_flat(theta)
    return _rel_err(analytic, numeric)


def expectile_gradient_error(seed: int = 0, taus=(0.1, 0.5, 0.9), n: int = 64, h: float = 1e-6) -> float:
    """Worst relative error of the expectile-loss gradient, excluding zero residuals."""
    rng = rng_stream(seed, "check/expectile-grad")
    worst = 0.0
    for tau in taus:
        delta = rng.standard_normal(n)
        delta[np.abs(delta) < 10 * h] += 20 * h
        analytic = expectile_grad(delta, tau)
        numeric = np.empty(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            numeric[i] = (expectile_loss(delta + e, tau) - expectile_loss(delta - e, tau)) / (2 * h)
        worst = max(worst, _rel_err(analytic, numeric))
    return worst


def gradient_correctness() -> CheckResult:
    def body():
        mlp_err = mlp_gradient_error()
        exp_err = expectile_gradient_error()
        return mlp_err <= 1e-5 and exp_err <= 1e-4, {"mlp_rel_err": mlp_err, "expectile_rel_err": exp_err}

    return _timed("gradient_correctness", body)


# -- tabular operators ------------------------------------------------------


def contraction(trials: int = 1000, seed: int = 0, gamma: float = 0.9, taus=(0.1, 0.5, 0.9)) -> CheckResult:
    """Worst Lipschitz ratio of each operator on a random 2-agent, 2-state game."""

    def body():
        rng = rng_stream(seed, "check/contraction")
        game = random_game(rng, states=2, actions=(2, 2), gamma=gamma)
        ratios = {}
        for variant in ("literal", "joint_max", "pessimistic"):
            ratios[f"pareto/{variant}"] = contraction_probe(game, lambda q, v=variant: pareto_apply(game, q, v), trials, rng)
            for tau in taus:
                ratios[f"expectile/{variant}/tau={tau}"] = contraction_probe(
                    game, lambda q, v=variant, t=tau: expectile_pareto_apply(game, q, t, v), trials, rng
                )
        worst = max(ratios.values())
        return worst <= gamma + 1e-12, {"worst_ratio": worst, "operators": len(ratios)}

    return _timed("contraction", body)


def fixed_point(samples: int = 100_000, seed: int = 0, rate_exponent: float = 0.6) -> CheckResult:
    """Value iteration on the 2x2 team game and asynchronous sampled updates."""

    def body():
        game = team_game([[10.0, 0.0], [0.0, 5.0]], 0.9)
        res = iterate_to_fixed_point(game, lambda q: pareto_apply(game, q, "joint_max"), tol=1e-9)
        q_max = float(max(t.max() for t in res.q))
        async_q = run_async_q(game, samples, rng_stream(seed, "check/async"), "joint_max", rate_exponent)
        gap = sup_distance(async_q, res.q)
        ok = res.converged and abs(q_max - 100.0) <= 1e-6 and gap <= 1e-2
        return ok, {"max_q": q_max, "iterations": res.iterations, "async_gap": gap}

    return _timed("fixed_point", body)


def equilibrium_selection() -> CheckResult:
    """Optimistic fixed point picks the payoff-10 corner, pessimistic the safe one."""

    def body():
        game = penalty_game(0.9)
        picks = {}
        for variant in ("joint_max", "pessimistic"):
            res = iterate_to_fixed_point(game, lambda q, v=variant: pareto_apply(game, q, v), tol=1e-9)
            picks[variant] = greedy_joint_action(game, res.q, 0, variant)
        payoff = game.rewards[0][0]
        best = tuple(int(i) for i in np.unravel_index(int(np.argmax(payoff)), payoff.shape))
        safe_row = int(np.argmax(payoff.min(axis=1)))
        ok = picks["joint_max"] == best and picks["pessimistic"] == (safe_row, safe_row)
        return ok, {"optimistic": picks["joint_max"], "pessimistic": picks["pessimistic"]}

    return _timed("equilibrium_selection", body)


# -- conjecture bound -------------------------------------------------------


def kl_bound(instances: int = 1000, seed: int = 0, temperature: float = 0.01) -> CheckResult:
    """Randomized ``(Q, pi~)`` instances against a temperature-softened argmax.

    The softening temperature is 1% of the Q spread.  The inequality
    compares against ``max Q`` rather than the softened expectation, so it
    can only fail when ``pi~`` lies within the softening gap of ``pi+``;
    a colder ``pi+`` shrinks that gap.
    """

    def body():
        rng = rng_stream(seed, "check/kl-bound")
        held = 0
        worst_slack = np.inf
        for _ in range(instances):
            q = rng.normal(0.0, 10.0, 3)
            spread = float(q.max() - q.min())
            pi_dagger = softened_argmax(q, temperature * spread)
            pi_tilde = rng.dirichlet(np.ones(3))
            check = kl_bound_check(q, pi_tilde, pi_dagger)
            held += check.holds
            worst_slack = min(worst_slack, check.rhs - check.lhs)
        return held == instances, {"held": held, "instances": instances, "min_slack": float(worst_slack)}

    return _timed("kl_bound", body)


# -- metrics ----------------------------------------------------------------


def hvi_correctness(sets: int = 20, samples: int = 1_000_000, seed: int = 0) -> CheckResult:
    def body():
        fixture = np.array([[0.3, 0.9], [0.9, 0.3]])
        ref2 = np.array([1.1, 1.1])
        exact2 = hypervolume_exact(fixture, ref2)
        fixture_ok = abs(exact2 - 0.28) <= 1e-12
        invariant_ok = hypervolume_exact(np.vstack([fixture, [1.0, 1.0]]), ref2) == exact2
        rng = rng_stream(seed, "check/hvi")
        ref3 = np.full(3, 1.1)
        worst_z = 0.0
        for _ in range(sets):
            pts = rng.uniform(0.1, 1.1, (int(rng.integers(1, 9)), 3))
            exact = hypervolume_exact(pts, ref3)
            est, se = hypervolume_mc(pts, ref3, samples, rng)
            if se > 0:
                worst_z = max(worst_z, abs(est - exact) / se)
            elif not np.isclose(est, exact, rtol=1e-12, atol=0.0):
                # Zero spread only happens when the sampling box is fully dominated.
                worst_z = np.inf
        ok = fixture_ok and invariant_ok and worst_z <= 4.0
        return ok, {"hv_fixture": exact2, "domination_invariant": invariant_ok, "max_z": worst_z}

    return _timed("hvi_correctness", body)


def action_overhead(dim: int = 21840) -> CheckResult:
    def body():
        a = Action(5, 3.5e9, 30e6, 32)
        size = len(encode_action(0, a.n, a.f, a.B, a.q))
        ratio = size / (dim * 4)
        ok = size == action_payload_bytes(a) and size <= 14 and size < 20 and ratio < 0.0002
        return ok, {"bytes": size, "payload_fraction": ratio}

    return _timed("action_overhead", body)


# -- learning ---------------------------------------------------------------


def expectile_equivalence(updates: int = 100, seed: int = 0, config: ExperimentConfig | None = None) -> CheckResult:
    """At tau = 0.5 the expectile critic and a halved squared-error critic coincide."""

    def body():
        cfg = (config or load_config()).replace(tau=(0.5,) * (config or load_config()).num_sps, seed=seed)
        env = MultiSPEnv(cfg)
        exp_agent = make_agents(cfg, "pac", env.obs_dim, seed)[0]
        mse_agent = make_agents(cfg, "pac", env.obs_dim, seed)[0]
        start = np.max(np.abs(exp_agent.critic.mlp.get_flat() - mse_agent.critic.mlp.get_flat()))
        collectors = make_agents(cfg, "pac", env.obs_dim, seed)
        buffer = ReplayBuffer(cfg.replay_capacity)
        data_rng = rng_stream(seed, "check/expectile-data")
        for ep in range(2):
            buffer.insert(rollout(env, [AgentController(a) for a in collectors], ep, data_rng, "sample", collectors).batches)
        rng_a, rng_b = rng_stream(seed, "check/expectile-a"), rng_stream(seed, "check/expectile-b")
        sample_rng = rng_stream(seed, "check/expectile-sample")
        worst = float(start)
        for _ in range(updates):
            batch = buffer.sample(sample_rng, cfg.batch_episodes, cfg.batch_transitions)[0]
            state = rng_a.bit_generator.state
            t_exp = exp_agent.td_targets(batch, rng_a)
            rng_b.bit_generator.state = state
            t_mse = mse_agent.td_targets(batch, rng_b)
            exp_agent.critic_step(batch, t_exp, "expectile")
            mse_agent.critic_step(batch, t_mse, "half_mse")
            worst = max(
                worst,
                float(np.max(np.abs(exp_agent.critic.mlp.get_flat() - mse_agent.critic.mlp.get_flat()))),
                float(np.max(np.abs(exp_agent.target.mlp.get_flat() - mse_agent.target.mlp.get_flat()))),
            )
        return worst <= 1e-9, {"max_param_gap": worst, "updates": updates}

    return _timed("expectile_equivalence", body)


def learning_signal(totals: Sequence[np.ndarray], min_seeds: int = 4) -> CheckResult:
    """Final-fifth mean of training total reward versus the first fifth, per seed."""

    def body():
        gains = []
        for tot in totals:
            k = max(1, len(tot) // 5)
            gains.append(float(np.mean(tot[-k:]) - np.mean(tot[:k])))
        improved = sum(g >= 0 for g in gains)
        return improved >= min_seeds, {"improved_seeds": improved, "gains": [round(g, 2) for g in gains]}

    return _timed("learning_signal", body)


def conjecture_benefit(
    pac: Sequence[float], independent: Sequence[float], pac_p: Sequence[float], min_seeds: int = 4, gap: float = 0.10
) -> CheckResult:
    """pac beats independent learners seed by seed; pac_p stays near pac on average."""

    def body():
        wins = sum(a >= b for a, b in zip(pac, independent))
        pac_mean, gen_mean = float(np.mean(pac)), float(np.mean(pac_p))
        rel_gap = abs(gen_mean - pac_mean) / abs(pac_mean)
        ok = wins >= min_seeds and rel_gap <= gap
        per_seed = {
            "pac": [round(float(v), 2) for v in pac],
            "independent_ac": [round(float(v), 2) for v in independent],
            "pac_p": [round(float(v), 2) for v in pac_p],
        }
        return ok, {"pac_wins": wins, "pac_mean": pac_mean, "pac_p_mean": gen_mean, "rel_gap": rel_gap, **per_seed}

    return _timed("conjecture_benefit", body)


QUICK_CHECKS: dict[str, Callable[[], CheckResult]] = {
    "quantization": quantization_unbiasedness,
    "payload": payload_formula,
    "physical": physical_golden,
    "tcad": tcad_cardinality,
    "gradcheck": gradient_correctness,
    "contraction": contraction,
    "fixed-point": fixed_point,
    "equilibrium": equilibrium_selection,
    "bound": kl_bound,
    "hvi": hvi_correctness,
    "overhead": action_overhead,
    "expectile": expectile_equivalence,
}


__all__ = [
    "CheckResult",
    "QUICK_CHECKS",
    "action_overhead",
    "conjecture_benefit",
    "contraction",
    "equilibrium_selection",
    "expectile_equivalence",
    "expectile_gradient_error",
    "fixed_point",
    "gradient_correctness",
    "hvi_correctness",
    "kl_bound",
    "learning_signal",
    "mlp_gradient_error",
    "payload_formula",
    "physical_golden",
    "quantization_unbiasedness",
    "tcad_cardinality",
]
