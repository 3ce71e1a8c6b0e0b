"""Actor-critic agents with conjectured opponent actions.

Each SP owns a factorized ternary actor and a critic over the joint action
``Q(o, a_own, a_opp)``.  The opponent part is never observed at decision
time, so the agent conjectures it: the brute-force variant scores every
opponent joint delta and takes the argmax, while the generator variant
samples a handful of candidates from a learned proposal.  The independent
baseline drops opponents from the critic altogether.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..config import ExperimentConfig
from ..neural import Adam, Mlp, log_softmax
from ..tcad import DELTAS, NUM_DELTAS, NUM_DIMS, ActionSpace, apply_deltas, joint_delta_indices
from .conjgen import GeneratorNet, TargetPolicyEMA, generate, generator_loss
from .replay import TransitionBatch

VARIANTS = ("pac", "pac_p", "independent_ac")

# HEAD_ONEHOT[m, d, k] is 1 when joint delta d picks class k on head m.
HEAD_ONEHOT = (DELTAS.T[:, :, None] + 1 == np.arange(3)).astype(np.float64)
# Greedy tie-break prefers the 0 delta, then -1, then +1.
_GREEDY_ORDER = np.array([1, 0, 2])


@dataclass
class EvalCounter:
    """Running count of critic evaluations spent on conjectures."""

    count: int = 0

    def add(self, k: int) -> None:
        self.count += int(k)


class ActorNet:
    """MLP trunk with four 3-way softmax heads over ``{-1, 0, +1}``."""

    def __init__(self, obs_dim: int, rng: np.random.Generator | None, hidden=(64, 128, 64)):
        self.mlp = Mlp([obs_dim, *hidden, NUM_DIMS * 3], rng)

    def log_probs(self, obs: np.ndarray, cache: bool = False) -> np.ndarray:
        x = np.atleast_2d(obs)
        z = self.mlp.forward(x) if cache else self.mlp.predict(x)
        return log_softmax(z.reshape(-1, NUM_DIMS, 3), axis=-1)

    def head_probs(self, obs: np.ndarray) -> np.ndarray:
        return np.exp(self.log_probs(obs))

    def joint_log_probs(self, obs: np.ndarray) -> np.ndarray:
        """Log-probability of each of the 81 joint deltas, shape ``(B, 81)``."""
        return joint_from_heads(self.log_probs(obs))

    def backward(self, grad_logits: np.ndarray) -> list[np.ndarray]:
        grads, _ = self.mlp.backward(grad_logits.reshape(grad_logits.shape[0], -1))
        return grads


def joint_from_heads(log_probs: np.ndarray) -> np.ndarray:
    """Sum per-head log-probs into joint-delta log-probs, ``(B,4,3) -> (B,81)``."""
    cols = DELTAS + 1
    return sum(log_probs[:, m, cols[:, m]] for m in range(NUM_DIMS))


def select_action(
    actor: ActorNet, obs: np.ndarray, rng: np.random.Generator | None, mode: str = "sample"
) -> tuple[np.ndarray, float]:
    """Pick a ternary delta; returns it with its joint log-probability."""
    lp = actor.log_probs(obs)[0]
    if mode == "greedy":
        idx = _GREEDY_ORDER[np.argmax(lp[:, _GREEDY_ORDER], axis=1)]
    elif mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs a random stream")
        cdf = np.cumsum(np.exp(lp), axis=1)
        idx = np.minimum((rng.random((NUM_DIMS, 1)) > cdf).sum(axis=1), 2)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return idx - 1, float(lp[np.arange(NUM_DIMS), idx].sum())


class CriticNet:
    """``Q(o, a_own, a_opp)`` on normalized inputs; ``num_opponents=0`` drops
    the opponent block."""

    def __init__(
        self, obs_dim: int, num_opponents: int, rng: np.random.Generator | None, hidden=(64, 128)
    ):
        self.obs_dim = int(obs_dim)
        self.num_opponents = int(num_opponents)
        self.mlp = Mlp([self.obs_dim + NUM_DIMS * (1 + self.num_opponents), *hidden, 1], rng)

    def copy(self) -> "CriticNet":
        twin = CriticNet.__new__(CriticNet)
        twin.obs_dim, twin.num_opponents = self.obs_dim, self.num_opponents
        twin.mlp = self.mlp.copy()
        return twin

    def inputs(self, obs: np.ndarray, own: np.ndarray, opp: np.ndarray | None) -> np.ndarray:
        """Row-wise concatenation; ``opp`` is ``(B, 4*(R-1))`` encoded."""
        parts = [np.atleast_2d(obs), np.atleast_2d(own)]
        if self.num_opponents:
            parts.append(np.atleast_2d(opp))
        return np.concatenate(parts, axis=1)

    def value(self, obs: np.ndarray, own: np.ndarray, opp: np.ndarray | None = None) -> np.ndarray:
        return self.mlp.predict(self.inputs(obs, own, opp))[:, 0]

    def opponent_scores(
        self,
        obs: np.ndarray,
        own: np.ndarray,
        blocks: Sequence[np.ndarray],
        digits: np.ndarray,
        dtype=np.float32,
    ) -> np.ndarray:
        """``Q`` for one ``(obs, own)`` against many opponent joint actions.

        Row ``i`` pairs opponent ``j`` with candidate ``blocks[j][digits[i, j]]``.
        Each opponent's block is pushed through its slice of the first layer
        once and then gathered, which avoids a tall, thin matrix product.
        When ``digits`` is the full enumeration the gathers become an outer
        sum, which is cheaper still.
        """
        w = [m.astype(dtype) for m in self.mlp.weights]
        b = [v.astype(dtype) for v in self.mlp.biases]
        split = self.obs_dim + NUM_DIMS
        head = np.concatenate([obs, own]).astype(dtype)
        width = w[0].shape[1]
        parts = [
            block.astype(dtype) @ w[0][split + NUM_DIMS * j : split + NUM_DIMS * (j + 1)]
            for j, block in enumerate(blocks)
        ]
        if _is_full_product(digits, [p.shape[0] for p in parts]):
            # Every combination in enumeration order: an outer sum replaces the gathers.
            h = parts[0] + (head @ w[0][:split] + b[0])
            for p in parts[1:]:
                out = np.empty((h.shape[0], p.shape[0], width), dtype=dtype)
                np.add(h[:, None, :], p[None, :, :], out=out)
                h = out.reshape(-1, width)
        else:
            h = np.broadcast_to(head @ w[0][:split] + b[0], (digits.shape[0], width)).copy()
            for j, p in enumerate(parts):
                h += p[digits[:, j]]
        np.maximum(h, 0, out=h)
        for i in range(1, len(w)):
            h = h @ w[i]
            h += b[i]
            if i < len(w) - 1:
                np.maximum(h, 0, out=h)
        return h[:, 0]


_FULL_PRODUCT: dict[tuple[int, ...], np.ndarray] = {}


def _is_full_product(digits: np.ndarray, sizes: Sequence[int]) -> bool:
    """True when ``digits`` lists every combination in mixed-radix order."""
    key = tuple(int(n) for n in sizes)
    total = int(np.prod(key)) if key else 0
    if digits.shape != (total, len(key)) or total > 1 << 15:
        return False
    full = _FULL_PRODUCT.get(key)
    if full is None:
        full = np.stack(np.unravel_index(np.arange(total), key), axis=1)
        _FULL_PRODUCT[key] = full
    return bool(np.array_equal(digits, full))


def opponent_rows(blocks: Sequence[np.ndarray], digits: np.ndarray) -> np.ndarray:
    """Materialize encoded opponent rows from per-opponent candidate blocks."""
    return np.concatenate([blocks[j][digits[:, j]] for j in range(len(blocks))], axis=1)


@dataclass(frozen=True)
class Conjecture:
    actions: np.ndarray  # (R-1, 4) absolute
    index: int  # position in enumeration order
    value: float


def conjecture_bruteforce(
    critic_fn: Callable[[np.ndarray, np.ndarray, Sequence[np.ndarray], np.ndarray], np.ndarray],
    obs: np.ndarray,
    own: np.ndarray,
    opp_current: np.ndarray,
    space: ActionSpace,
    counter: EvalCounter | None = None,
    chunk: int = 1 << 15,
) -> Conjecture:
    """Score every opponent joint delta and return the best joint action.

    ``critic_fn(obs, own, blocks, digits)`` must return one value per row of
    ``digits``: row ``i`` pairs opponent ``j`` with encoded candidate
    ``blocks[j][digits[i, j]]`` (see :func:`opponent_rows`).  Candidates
    follow the order of :func:`pacfl.tcad.enumerate_joint`; ties keep the
    earliest.

    Args:
        critic_fn: Batched critic over opponent joint actions.
        obs: Encoded observation.
        own: Encoded own action.
        opp_current: ``(R-1, 4)`` absolute opponent actions the deltas apply to.
        space: Action bounds and granularities.
        counter: Incremented by the number of critic evaluations.
        chunk: Rows scored per call, bounding memory for many opponents.
    """
    opp_current = np.atleast_2d(opp_current)
    m = opp_current.shape[0]
    cands = np.stack([apply_deltas(opp_current[j], DELTAS, space) for j in range(m)])
    enc = space.encode(cands)  # (R-1, 81, 4)
    total = NUM_DELTAS**m
    best_val, best_idx = -np.inf, 0
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        digits = joint_delta_indices(m, start, stop)
        scores = np.asarray(critic_fn(obs, own, list(enc), digits))
        if counter is not None:
            counter.add(digits.shape[0])
        k = int(np.argmax(scores))
        if scores[k] > best_val:
            best_val, best_idx = float(scores[k]), start + k
    digits = joint_delta_indices(m, best_idx, best_idx + 1)[0]
    actions = np.stack([cands[j, digits[j]] for j in range(m)])
    return Conjecture(actions, best_idx, best_val)


def expectile_loss(delta: np.ndarray, tau: float) -> float:
    """``mean(tau * max(d,0)^2 + (1 - tau) * min(d,0)^2)``."""
    d = np.asarray(delta, dtype=np.float64)
    return float(np.mean(tau * np.maximum(d, 0.0) ** 2 + (1.0 - tau) * np.minimum(d, 0.0) ** 2))


def expectile_grad(delta: np.ndarray, tau: float) -> np.ndarray:
    """Derivative of :func:`expectile_loss` w.r.t. each ``delta``; 0 at the kink."""
    d = np.asarray(delta, dtype=np.float64)
    return 2.0 * (tau * np.maximum(d, 0.0) + (1.0 - tau) * np.minimum(d, 0.0)) / d.size


def half_mse_loss(delta: np.ndarray) -> float:
    d = np.asarray(delta, dtype=np.float64)
    return float(0.5 * np.mean(d * d))


def half_mse_grad(delta: np.ndarray) -> np.ndarray:
    d = np.asarray(delta, dtype=np.float64)
    return d / d.size


def adapt_tau(
    tau: float, accuracy: float, threshold: float, inc: float, dec: float, bounds: tuple[float, float]
) -> float:
    """Raise tau while accuracy is under ``threshold``, lower it otherwise."""
    lo, hi = bounds
    if not 0.0 < lo < hi < 1.0:
        raise ValueError("tau bounds must satisfy 0 < lo < hi < 1")
    step = inc if accuracy < threshold else -dec
    return float(min(max(tau + step, lo), hi))


def policy_gradient_logits(log_probs: np.ndarray, q_values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradient of ``J = sum_d pi(d) Q(d)`` w.r.t. the head logits.

    With the exact baseline ``b = sum_d pi(d) Q(d)`` and advantage
    ``A = Q - b``, the logit gradient for head m, class k is the mass of
    ``pi * A`` over deltas choosing k on that head.

    Returns:
        ``(grad (B,4,3), advantage (B,81))``.
    """
    pi = np.exp(joint_from_heads(log_probs))
    baseline = (pi * q_values).sum(axis=1, keepdims=True)
    adv = q_values - baseline
    grad = np.einsum("bd,mdk->bmk", pi * adv, HEAD_ONEHOT)
    return grad, adv


class PacAgent:
    """One SP's learner; ``variant`` selects how opponents are conjectured."""

    def __init__(
        self,
        index: int,
        config: ExperimentConfig,
        obs_dim: int,
        variant: str,
        rng: np.random.Generator,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown agent variant {variant!r}; expected one of {VARIANTS}")
        self.index = int(index)
        self.config = config
        self.variant = variant
        self.space = ActionSpace.from_config(config)
        self.num_opponents = config.num_sps - 1
        self.obs_dim = int(obs_dim)
        self.tau = float(config.tau[index])
        self.gamma = config.gamma
        self.actor = ActorNet(obs_dim, rng)
        critic_opp = 0 if variant == "independent_ac" else self.num_opponents
        self.critic = CriticNet(obs_dim, critic_opp, rng)
        self.target = self.critic.copy()
        self.actor_opt = Adam(config.actor_lr)
        self.critic_opt = Adam(config.critic_lr)
        self.counter = EvalCounter()
        self.generator: GeneratorNet | None = None
        self.ema: TargetPolicyEMA | None = None
        if variant == "pac_p":
            gen_in = NUM_DIMS + obs_dim + 3 * self.num_opponents
            self.generator = GeneratorNet(gen_in, self.num_opponents, rng)
            self.gen_opt = Adam(config.actor_lr)
            self.ema = TargetPolicyEMA(self.num_opponents, config.ema_decay)

    # -- acting -----------------------------------------------------------

    def act(self, obs: np.ndarray, rng: np.random.Generator | None, mode: str = "sample") -> np.ndarray:
        delta, _ = select_action(self.actor, obs, rng, mode)
        return delta

    # -- conjecture -------------------------------------------------------

    def opponent_summary(self, opp: np.ndarray) -> np.ndarray:
        """Operator-visible opponent metadata ``(n, q, B)``, normalized."""
        enc = self.space.encode(np.atleast_2d(opp))
        return enc[:, [0, 3, 2]].ravel()

    def _generator_inputs(self, obs: np.ndarray, own: np.ndarray, opp_prev: np.ndarray) -> np.ndarray:
        own_enc = self.space.encode(own)
        summary = np.stack([self.opponent_summary(o) for o in opp_prev])
        return np.concatenate([own_enc, obs, summary], axis=1)

    def _opp_rows(self, opp_prev: np.ndarray, deltas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Apply ``(K, R-1, 4)`` deltas to ``(R-1, 4)`` actions; return absolute and encoded rows."""
        acts = np.stack(
            [apply_deltas(opp_prev[j], deltas[:, j], self.space) for j in range(self.num_opponents)], axis=1
        )
        return acts, self.space.encode(acts).reshape(acts.shape[0], -1)

    def conjecture(
        self, critic: CriticNet, obs: np.ndarray, own: np.ndarray, opp_prev: np.ndarray
    ) -> np.ndarray:
        """Brute-force argmax opponent actions for one transition."""
        own_enc = self.space.encode(own)
        conj = conjecture_bruteforce(critic.opponent_scores, obs, own_enc, opp_prev, self.space, self.counter)
        return conj.actions

    def _sampled_conjectures(
        self,
        critic: CriticNet,
        obs: np.ndarray,
        own: np.ndarray,
        opp_prev: np.ndarray,
        rng: np.random.Generator,
        cache: bool = False,
    ) -> tuple[np.ndarray, np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
        """Best of K generator samples per row; also returns samples for the loss."""
        assert self.generator is not None
        k = self.config.gen_samples
        probs = np.exp(self.generator.log_probs(self._generator_inputs(obs, own, opp_prev), cache=cache))
        best, draws = [], []
        own_enc = self.space.encode(own)
        for i in range(obs.shape[0]):
            deltas = generate(probs[i], rng, "sample", k)
            acts, rows = self._opp_rows(opp_prev[i], deltas)
            scores = critic.value(np.repeat(obs[i][None], k, 0), np.repeat(own_enc[i][None], k, 0), rows)
            self.counter.add(k)
            best.append(acts[int(np.argmax(scores))])
            draws.append((deltas, scores))
        return np.stack(best), probs, draws

    def conjecture_batch(
        self, critic: CriticNet, obs: np.ndarray, own: np.ndarray, opp_prev: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        if self.variant == "pac_p":
            return self._sampled_conjectures(critic, obs, own, opp_prev, rng)[0]
        return np.stack([self.conjecture(critic, obs[i], own[i], opp_prev[i]) for i in range(obs.shape[0])])

    def _q(self, critic: CriticNet, obs: np.ndarray, own: np.ndarray, opp: np.ndarray | None) -> np.ndarray:
        opp_enc = None if opp is None else self.space.encode(opp).reshape(opp.shape[0], -1)
        return critic.value(obs, self.space.encode(own), opp_enc)

    # -- learning ---------------------------------------------------------

    def td_targets(self, batch: TransitionBatch, rng: np.random.Generator) -> np.ndarray:
        """``r + gamma * max_opp Q_target(o', a', opp)`` with ``a' ~ pi(o')``."""
        n = len(batch)
        next_own = np.empty_like(batch.own)
        for i in range(n):
            delta = self.act(batch.next_obs[i], rng, "sample")
            next_own[i] = apply_deltas(batch.own[i], delta[None], self.space)[0]
        if self.variant == "independent_ac":
            q_next = self._q(self.target, batch.next_obs, next_own, None)
        else:
            opp_next = self.conjecture_batch(self.target, batch.next_obs, next_own, batch.opp, rng)
            q_next = self._q(self.target, batch.next_obs, next_own, opp_next)
        scaled = batch.reward / self.config.reward_scale
        return scaled + self.gamma * (~batch.done) * q_next

    def critic_step(self, batch: TransitionBatch, targets: np.ndarray, loss: str = "expectile") -> float:
        """One optimizer step of the critic toward fixed targets, then Polyak."""
        opp_enc = None
        if self.critic.num_opponents:
            opp_enc = self.space.encode(batch.opp).reshape(len(batch), -1)
        x = self.critic.inputs(batch.obs, self.space.encode(batch.own), opp_enc)
        q = self.critic.mlp.forward(x)[:, 0]
        delta = targets - q
        if loss == "expectile":
            value, d_delta = expectile_loss(delta, self.tau), expectile_grad(delta, self.tau)
        elif loss == "half_mse":
            value, d_delta = half_mse_loss(delta), half_mse_grad(delta)
        else:
            raise ValueError(f"unknown critic loss {loss!r}")
        grads, _ = self.critic.mlp.backward(-d_delta[:, None])
        self.critic_opt.step(self.critic.mlp.params, grads)
        self.target.mlp.soft_update(self.critic.mlp, self.config.polyak)
        return value

    def critic_update(self, batch: TransitionBatch, rng: np.random.Generator, loss: str = "expectile") -> float:
        return self.critic_step(batch, self.td_targets(batch, rng), loss)

    def actor_update(
        self, batch: TransitionBatch, rng: np.random.Generator, conjectured: np.ndarray | None = None
    ) -> float:
        """Exact-expectation policy-gradient step; returns mean |advantage|.

        ``conjectured`` holds fixed opponent actions per row; when omitted
        they are conjectured here with the online critic.
        """
        n = len(batch)
        if self.variant == "independent_ac":
            opp = None
        elif conjectured is not None:
            opp = conjectured
        elif self.variant == "pac_p":
            opp = self._generator_step(batch, rng)
        else:
            opp = self.conjecture_batch(self.critic, batch.obs, batch.own, batch.opp_prev, rng)
        q_all = np.empty((n, NUM_DELTAS))
        for i in range(n):
            cands = apply_deltas(batch.own_prev[i], DELTAS, self.space)
            obs_rep = np.repeat(batch.obs[i][None], NUM_DELTAS, 0)
            opp_rep = None if opp is None else np.repeat(opp[i][None], NUM_DELTAS, 0)
            q_all[i] = self._q(self.critic, obs_rep, cands, opp_rep)
        log_probs = self.actor.log_probs(batch.obs, cache=True)
        grad_j, adv = policy_gradient_logits(log_probs, q_all)
        grads = self.actor.backward(-grad_j / n)
        self.actor_opt.step(self.actor.mlp.params, grads)
        return float(np.abs(adv).mean())

    def _generator_step(self, batch: TransitionBatch, rng: np.random.Generator) -> np.ndarray:
        """Pick conjectures from generator samples and train the generator on them."""
        assert self.generator is not None and self.ema is not None
        best, probs, draws = self._sampled_conjectures(
            self.critic, batch.obs, batch.own, batch.opp_prev, rng, cache=True
        )
        targets = self.ema.targets()
        grad = np.empty_like(probs)
        for i, (deltas, scores) in enumerate(draws):
            _, grad[i] = generator_loss(probs[i], deltas, scores, targets, self.config.chi)
        grads = self.generator.backward(grad / len(batch))
        self.gen_opt.step(self.generator.mlp.params, grads)
        return best

    def update(self, batch: TransitionBatch, rng: np.random.Generator) -> dict[str, float]:
        """Conjecture, critic step, then actor step on one sampled batch.

        The actor's opponent conjecture is formed with the critic as it was
        before this round's critic step.
        """
        conj = None
        if self.variant == "pac":
            conj = self.conjecture_batch(self.critic, batch.obs, batch.own, batch.opp_prev, rng)
        elif self.variant == "pac_p":
            conj = self._generator_step(batch, rng)
        targets = self.td_targets(batch, rng)
        for _ in range(self.config.critic_steps):
            critic_loss = self.critic_step(batch, targets)
        adv = self.actor_update(batch, rng, conj)
        return {"critic_loss": critic_loss, "mean_abs_advantage": adv}

    # -- persistence ------------------------------------------------------

    def networks(self) -> dict[str, Mlp]:
        nets = {"actor": self.actor.mlp, "critic": self.critic.mlp, "target": self.target.mlp}
        if self.generator is not None:
            nets["generator"] = self.generator.mlp
        return nets


__all__ = [
    "ActorNet",
    "Conjecture",
    "CriticNet",
    "EvalCounter",
    "HEAD_ONEHOT",
    "PacAgent",
    "VARIANTS",
    "adapt_tau",
    "conjecture_bruteforce",
    "expectile_grad",
    "expectile_loss",
    "half_mse_grad",
    "half_mse_loss",
    "joint_from_heads",
    "opponent_rows",
    "policy_gradient_logits",
    "select_action",
]
