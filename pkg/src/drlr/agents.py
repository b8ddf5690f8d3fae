"""Trainable policies and critics: BC, TD3, SAC, TD3+BC building blocks.

Loss functions return (scalar loss, gradients) so optimizer steps stay
separate and every gradient can be checked against finite differences.
Actions live in [-1, 1] via tanh squashing; the Gaussian policy is
reparameterized, so gradients flow through the sampled action.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .buffers import Batch

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# policies


@dataclass
class DeterministicPolicy:
    """tanh(mlp(s)) actor; used for BC, TD3, TD3+BC and reference policies."""

    trunk: nn.MlpParams

    @property
    def action_dim(self):
        return self.trunk.out_dim


@dataclass
class GaussianPolicy:
    """Squashed-Gaussian actor. The trunk emits [mean, log_std] per action
    dimension; log_std is clamped to [LOG_STD_MIN, LOG_STD_MAX]."""

    trunk: nn.MlpParams

    @property
    def action_dim(self):
        return self.trunk.out_dim // 2


@dataclass
class TwinCritic:
    q1: nn.MlpParams
    q2: nn.MlpParams


@dataclass
class Temperature:
    log_alpha: float
    learnable: bool
    target_entropy: float
    # scalar Adam accumulators for the dual update
    m: float = 0.0
    v: float = 0.0
    t: int = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))


def make_deterministic_policy(state_dim, action_dim, hidden=(64, 64),
                              activation="relu", rng=None) -> DeterministicPolicy:
    return DeterministicPolicy(nn.init_params((state_dim, *hidden, action_dim),
                                              activation, rng))


def make_gaussian_policy(state_dim, action_dim, hidden=(64, 64),
                         activation="relu", rng=None) -> GaussianPolicy:
    return GaussianPolicy(nn.init_params((state_dim, *hidden, 2 * action_dim),
                                         activation, rng))


def make_twin_critic(state_dim, action_dim, hidden=(64, 64),
                     activation="relu", rng=None) -> TwinCritic:
    rng = np.random.default_rng(rng)
    sizes = (state_dim + action_dim, *hidden, 1)
    return TwinCritic(nn.init_params(sizes, activation, rng),
                      nn.init_params(sizes, activation, rng))


def det_actions(policy: DeterministicPolicy, states: np.ndarray):
    """Returns (actions, cache); actions = tanh(trunk(s))."""
    u, cache = nn.forward(policy.trunk, states)
    return np.tanh(u), cache


def det_backward(policy: DeterministicPolicy, cache, actions, g_actions) -> nn.Grad:
    g_u = g_actions * (1.0 - actions ** 2)
    grad, _ = nn.backward(policy.trunk, cache, g_u)
    return grad


def gaussian_stats(policy: GaussianPolicy, states: np.ndarray):
    """Returns (mean, clamped log_std, trunk cache, inside-clamp mask)."""
    out, cache = nn.forward(policy.trunk, states)
    d = policy.action_dim
    mean = out[..., :d]
    raw = out[..., d:]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    inside = ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)).astype(np.float64)
    return mean, log_std, cache, inside


def _log1m_tanh2(u):
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), numerically stable
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def sample_actions(policy: GaussianPolicy, states: np.ndarray, eps: np.ndarray):
    """Reparameterized batch sample with explicit noise.

    Returns (actions, log_probs, aux); aux carries everything needed for the
    analytic actor gradient.
    """
    mean, log_std, cache, inside = gaussian_stats(policy, states)
    sigma = np.exp(log_std)
    u = mean + sigma * eps
    # tanh rounds to exactly +-1 in float64 for |u| > ~19; keep the sample
    # strictly inside the open interval
    a = np.clip(np.tanh(u), -1.0 + 1e-12, 1.0 - 1e-12)
    lp = np.sum(-0.5 * LOG_2PI - log_std - 0.5 * eps ** 2 - _log1m_tanh2(u), axis=-1)
    aux = {"mean": mean, "log_std": log_std, "sigma": sigma, "eps": eps,
           "u": u, "a": a, "cache": cache, "inside": inside}
    return a, lp, aux


def sample_action(policy: GaussianPolicy, state: np.ndarray, rng: np.random.Generator):
    """Single-state stochastic action with its log-probability."""
    eps = rng.standard_normal(policy.action_dim)
    a, lp, _ = sample_actions(policy, state[None, :], eps[None, :])
    return a[0], float(lp[0])


def mean_actions(policy: GaussianPolicy, states: np.ndarray) -> np.ndarray:
    """Deterministic evaluation head: tanh of the Gaussian mean."""
    mean, _, _, _ = gaussian_stats(policy, states)
    return np.tanh(mean)


def policy_trunk_backward(policy: GaussianPolicy, aux, g_mean, g_log_std) -> nn.Grad:
    g_out = np.concatenate([g_mean, g_log_std * aux["inside"]], axis=-1)
    grad, _ = nn.backward(policy.trunk, aux["cache"], g_out)
    return grad


# ---------------------------------------------------------------------------
# critics


def critic_values(critic: TwinCritic, states, actions):
    x = np.concatenate([states, actions], axis=-1)
    q1, c1 = nn.forward(critic.q1, x)
    q2, c2 = nn.forward(critic.q2, x)
    return q1[..., 0], q2[..., 0], (c1, c2)


def reduce_q(q1, q2, how: str = "min"):
    if how == "min":
        return np.minimum(q1, q2)
    if how == "mean":
        return 0.5 * (q1 + q2)
    raise ValueError(f"unknown q reduction {how!r}")


def critic_value(critic: TwinCritic, states, actions, how: str = "min"):
    q1, q2, _ = critic_values(critic, states, actions)
    return reduce_q(q1, q2, how)


def min_q_action_grad(critic: TwinCritic, states, actions, gout):
    """d(sum gout_i * min(q1, q2)_i)/d action_i, plus the min values."""
    q1, q2, (c1, c2) = critic_values(critic, states, actions)
    pick1 = (q1 <= q2).astype(np.float64)
    _, gin1 = nn.backward(critic.q1, c1, (gout * pick1)[:, None])
    _, gin2 = nn.backward(critic.q2, c2, (gout * (1.0 - pick1))[:, None])
    sd = states.shape[-1]
    return (gin1 + gin2)[:, sd:], np.minimum(q1, q2)


# ---------------------------------------------------------------------------
# losses


def bc_loss(policy: DeterministicPolicy, states, demo_actions):
    """Mean squared Euclidean distance to demonstration actions."""
    if len(states) == 0:
        raise ValueError("empty batch")
    a, cache = det_actions(policy, states)
    diff = a - demo_actions
    loss = float(np.mean(np.sum(diff ** 2, axis=-1)))
    grad = det_backward(policy, cache, a, 2.0 * diff / len(states))
    return loss, grad


def bc_diagnostic(policy, states, actions) -> float:
    """E |pi(s) - a|^2 over a batch; for Gaussian policies uses the tanh-mean."""
    if isinstance(policy, GaussianPolicy):
        out = mean_actions(policy, states)
    else:
        out, _ = det_actions(policy, states)
    return float(np.mean(np.sum((out - actions) ** 2, axis=-1)))


def critic_loss(critic: TwinCritic, states, actions, targets):
    """Half mean squared error of both heads against the targets."""
    if not np.all(np.isfinite(targets)):
        raise ValueError("non-finite critic targets")
    n = len(states)
    q1, q2, (c1, c2) = critic_values(critic, states, actions)
    d1, d2 = q1 - targets, q2 - targets
    loss = 0.5 * float(np.mean(np.concatenate([d1 ** 2, d2 ** 2])))
    g1, _ = nn.backward(critic.q1, c1, (d1 / (2 * n))[:, None])
    g2, _ = nn.backward(critic.q2, c2, (d2 / (2 * n))[:, None])
    return loss, g1, g2


def td3_target(target_critic: TwinCritic, target_actor: DeterministicPolicy,
               batch: Batch, gamma: float, smooth_noise_std: float,
               smooth_noise_clip: float, rng: np.random.Generator,
               q_reduce: str = "min"):
    """y = r + gamma (1-terminal) min Q'(s', clip(mu'(s') + clipped noise))."""
    a_next, _ = det_actions(target_actor, batch.next_states)
    if smooth_noise_std > 0:
        noise = np.clip(rng.normal(0.0, smooth_noise_std, size=a_next.shape),
                        -smooth_noise_clip, smooth_noise_clip)
        a_next = np.clip(a_next + noise, -1.0, 1.0)
    q = critic_value(target_critic, batch.next_states, a_next, q_reduce)
    return batch.rewards + gamma * (1.0 - batch.terminals) * q


def sac_target(target_critic: TwinCritic, policy: GaussianPolicy, batch: Batch,
               gamma: float, alpha: float, rng: np.random.Generator,
               q_reduce: str = "min"):
    """Entropy-regularized target with the next action sampled from the policy."""
    eps = rng.standard_normal((len(batch), policy.action_dim))
    a_next, lp, _ = sample_actions(policy, batch.next_states, eps)
    q = critic_value(target_critic, batch.next_states, a_next, q_reduce)
    return batch.rewards + gamma * (1.0 - batch.terminals) * (q - alpha * lp)


def td3_actor_loss(actor: DeterministicPolicy, critic: TwinCritic, states):
    """L = -mean q1(s, mu(s))."""
    n = len(states)
    a, cache = det_actions(actor, states)
    x = np.concatenate([states, a], axis=-1)
    q1, c1 = nn.forward(critic.q1, x)
    loss = -float(np.mean(q1[:, 0]))
    _, gin = nn.backward(critic.q1, c1, np.full((n, 1), -1.0 / n))
    grad = det_backward(actor, cache, a, gin[:, states.shape[-1]:])
    return loss, grad


def td3bc_lambda(critic: TwinCritic, states, actions, alpha_bc: float = 2.5) -> float:
    """lambda = alpha_bc / mean |q1(s, a)|, treated as a constant in the loss."""
    x = np.concatenate([states, actions], axis=-1)
    q1, _ = nn.forward(critic.q1, x)
    return alpha_bc / (float(np.mean(np.abs(q1[:, 0]))) + 1e-8)


def td3bc_actor_loss(actor: DeterministicPolicy, critic: TwinCritic,
                     states, demo_actions, lam: float):
    """L = -lambda mean q1(s, mu(s)) + mean |mu(s) - a|^2."""
    n = len(states)
    a, cache = det_actions(actor, states)
    x = np.concatenate([states, a], axis=-1)
    q1, c1 = nn.forward(critic.q1, x)
    diff = a - demo_actions
    loss = -lam * float(np.mean(q1[:, 0])) + float(np.mean(np.sum(diff ** 2, axis=-1)))
    _, gin = nn.backward(critic.q1, c1, np.full((n, 1), -lam / n))
    g_a = gin[:, states.shape[-1]:] + 2.0 * diff / n
    return loss, det_backward(actor, cache, a, g_a)


def sac_actor_loss(policy: GaussianPolicy, critic: TwinCritic, states,
                   alpha: float, eps: np.ndarray):
    """L = mean(alpha log pi(a|s) - min Q(s, a)), a reparameterized with eps."""
    n = len(states)
    a, lp, aux = sample_actions(policy, states, eps)
    g_a_q, qmin = min_q_action_grad(critic, states, a, np.full(n, -1.0 / n))
    loss = float(np.mean(alpha * lp - qmin))
    # d log pi / da = 2a / (1 - a^2); combined with the critic path, then
    # chained through a = tanh(u), u = mean + sigma * eps
    one_m_a2 = 1.0 - a ** 2
    g_a = (alpha / n) * (2.0 * a / np.maximum(one_m_a2, 1e-12)) + g_a_q
    g_u = g_a * one_m_a2
    g_mean = g_u
    g_log_std = g_u * aux["sigma"] * eps - (alpha / n)
    grad = policy_trunk_backward(policy, aux, g_mean, g_log_std)
    return loss, grad


def alpha_step(temp: Temperature, mean_log_prob: float, lr: float = 3e-4) -> Temperature:
    """Dual-descent step on J(alpha) = -alpha (mean log pi + target entropy)."""
    if not temp.learnable:
        return temp
    g = -temp.alpha * (mean_log_prob + temp.target_entropy)
    t = temp.t + 1
    b1, b2, eps = 0.9, 0.999, 1e-8
    m = b1 * temp.m + (1 - b1) * g
    v = b2 * temp.v + (1 - b2) * g * g
    step = lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return replace(temp, log_alpha=float(temp.log_alpha - step), m=m, v=v, t=t)
