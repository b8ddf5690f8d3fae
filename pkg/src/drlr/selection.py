"""Action selection between a frozen reference policy and the RL policy.

Two families:

* ibrl_hard / ibrl_soft: both candidate actions are evaluated by the target
  critic at the SAME state; hard takes the argmax, soft samples from a
  Boltzmann distribution over the two Q-values.
* drlr: the reference branch is scored at states freshly sampled from the
  demonstration buffer, giving a calibrated mean Q anchored to in-distribution
  data; the RL branch is scored at the query states. The branch with the
  higher mean wins (ties go to the RL branch), and one branch is used for the
  whole query batch.

Every selection event is recorded as a SelectionDecision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import agents
from .agents import DeterministicPolicy, GaussianPolicy, TwinCritic
from .buffers import Batch, DemoBuffer, ReplayBuffer, stack


@dataclass
class SelectorConfig:
    mode: str = "drlr"  # ibrl_hard | ibrl_soft | drlr
    softmax_temperature: float = 1.0
    demo_eval_batch: int = 128
    q_reduce: str = "min"  # min | mean over the twin heads
    per_row: bool = False  # drlr bootstrap: select per transition instead of per batch

    def validate(self):
        if self.mode not in ("ibrl_hard", "ibrl_soft", "drlr"):
            raise ValueError(f"unknown selector mode {self.mode!r}")
        if self.softmax_temperature <= 0:
            raise ValueError("softmax_temperature must be positive")
        if self.demo_eval_batch < 1:
            raise ValueError("demo_eval_batch must be positive")


@dataclass
class SelectionDecision:
    q_ref: float
    q_rl: float
    chosen: str  # "ref" | "rl"
    phase: str  # "actor_proposal" | "bootstrap_proposal"
    step: int


@dataclass
class RefPolicy:
    """Frozen offline-trained policy (BC or TD3+BC); never updated online."""

    kind: str  # "bc" | "td3bc"
    policy: DeterministicPolicy

    def actions(self, states: np.ndarray) -> np.ndarray:
        a, _ = agents.det_actions(self.policy, states)
        return a


def _rl_candidate(rl_policy, states, rng, exploration_noise_std=0.1):
    """Stochastic RL action: policy sample for SAC, mean + exploration noise
    for a deterministic actor. Returns (actions, log_probs or None)."""
    if isinstance(rl_policy, GaussianPolicy):
        eps = rng.standard_normal((len(states), rl_policy.action_dim))
        a, lp, _ = agents.sample_actions(rl_policy, states, eps)
        return a, lp
    a, _ = agents.det_actions(rl_policy, states)
    if exploration_noise_std > 0:
        a = np.clip(a + rng.normal(0.0, exploration_noise_std, size=a.shape), -1.0, 1.0)
    return a, None


def ibrl_propose(state: np.ndarray, ref: RefPolicy, rl_policy,
                 target_critic: TwinCritic, cfg: SelectorConfig,
                 rng: np.random.Generator, step: int = 0,
                 exploration_noise_std: float = 0.1):
    """Pick between the reference and RL action at one state by target-critic
    Q-value. Ties in hard mode go to the RL branch."""
    cfg.validate()
    if cfg.mode not in ("ibrl_hard", "ibrl_soft"):
        raise ValueError(f"ibrl_propose called with mode {cfg.mode!r}")
    s = state[None, :]
    a_ref = ref.actions(s)
    a_rl, _ = _rl_candidate(rl_policy, s, rng, exploration_noise_std)
    q_ref = float(agents.critic_value(target_critic, s, a_ref, cfg.q_reduce)[0])
    q_rl = float(agents.critic_value(target_critic, s, a_rl, cfg.q_reduce)[0])
    if cfg.mode == "ibrl_hard":
        pick_ref = q_ref > q_rl
    else:
        t = cfg.softmax_temperature
        z = max(q_ref, q_rl)
        p_ref = np.exp((q_ref - z) / t) / (np.exp((q_ref - z) / t) + np.exp((q_rl - z) / t))
        pick_ref = rng.random() < p_ref
    decision = SelectionDecision(q_ref, q_rl, "ref" if pick_ref else "rl",
                                 "actor_proposal", step)
    return (a_ref[0] if pick_ref else a_rl[0]), decision


def drlr_select(states: np.ndarray, ref: RefPolicy, rl_policy,
                target_critic: TwinCritic, demo: DemoBuffer, cfg: SelectorConfig,
                rng: np.random.Generator, phase: str = "actor_proposal",
                step: int = 0, rl_actions: np.ndarray | None = None):
    """Calibrated batch-level selection between the reference and RL branch.

    The reference branch is scored at demo_eval_batch states sampled fresh
    from the demo buffer; the RL branch at the query states. Returns
    (actions for the query states, decision). When rl_actions is given it is
    used as the RL candidate (so a caller can reuse a sampled action and its
    log-probability); otherwise the RL candidate is drawn here.
    """
    cfg.validate()
    if cfg.mode != "drlr":
        raise ValueError(f"drlr_select called with mode {cfg.mode!r}")
    if len(demo) == 0:
        raise ValueError("drlr selection needs a non-empty demo buffer")
    states = np.atleast_2d(states)
    demo_states = demo.sample_states(cfg.demo_eval_batch, rng)
    q_ref = float(np.mean(agents.critic_value(
        target_critic, demo_states, ref.actions(demo_states), cfg.q_reduce)))
    if rl_actions is None:
        rl_actions, _ = _rl_candidate(rl_policy, states, rng)
    q_rl = float(np.mean(agents.critic_value(
        target_critic, states, rl_actions, cfg.q_reduce)))
    pick_ref = q_ref > q_rl  # strict: ties go to the RL branch
    actions = ref.actions(states) if pick_ref else rl_actions
    decision = SelectionDecision(q_ref, q_rl, "ref" if pick_ref else "rl", phase, step)
    return actions, decision


def ibrl_bellman_target(batch: Batch, ref: RefPolicy, rl_next_actions: np.ndarray,
                        target_critic: TwinCritic, gamma: float,
                        cfg: SelectorConfig, rng: np.random.Generator):
    """Per-transition target using the better (or Boltzmann-sampled) of the
    two candidate next actions under the target critic."""
    cfg.validate()
    if cfg.mode not in ("ibrl_hard", "ibrl_soft"):
        raise ValueError(f"ibrl_bellman_target called with mode {cfg.mode!r}")
    a_ref = ref.actions(batch.next_states)
    q_ref = agents.critic_value(target_critic, batch.next_states, a_ref, cfg.q_reduce)
    q_rl = agents.critic_value(target_critic, batch.next_states, rl_next_actions,
                               cfg.q_reduce)
    if cfg.mode == "ibrl_hard":
        q_next = np.maximum(q_ref, q_rl)
    else:
        t = cfg.softmax_temperature
        z = np.maximum(q_ref, q_rl)
        p_ref = np.exp((q_ref - z) / t) / (np.exp((q_ref - z) / t)
                                           + np.exp((q_rl - z) / t))
        q_next = np.where(rng.random(len(batch)) < p_ref, q_ref, q_rl)
    return batch.rewards + gamma * (1.0 - batch.terminals) * q_next


def drlr_bellman_target(batch: Batch, demo: DemoBuffer, ref: RefPolicy,
                        rl_policy, target_critic: TwinCritic, gamma: float,
                        alpha: float, cfg: SelectorConfig,
                        rng: np.random.Generator, step: int = 0,
                        rl_next_actions=None, rl_next_log_probs=None):
    """Calibrated bootstrap target.

    If the RL branch wins, the target is the entropy-regularized value of the
    RL next action (alpha * log pi subtracted when the RL policy is
    stochastic); if the reference branch wins, the deterministic reference
    action is evaluated at the batch's next states with no entropy term.
    Returns (targets, decision).
    """
    cfg.validate()
    if cfg.mode != "drlr":
        raise ValueError(f"drlr_bellman_target called with mode {cfg.mode!r}")
    if len(demo) == 0:
        raise ValueError("drlr selection needs a non-empty demo buffer")
    if rl_next_actions is None:
        rl_next_actions, rl_next_log_probs = _rl_candidate(
            rl_policy, batch.next_states, rng)
    # Same comparison as drlr_select (and the same rng draw), but the RL
    # branch's per-row Q-values are reused instead of recomputed.
    demo_states = demo.sample_states(cfg.demo_eval_batch, rng)
    q_ref_anchor = float(np.mean(agents.critic_value(
        target_critic, demo_states, ref.actions(demo_states), cfg.q_reduce)))
    q_rl_rows = agents.critic_value(target_critic, batch.next_states,
                                    rl_next_actions, cfg.q_reduce)
    pick_ref = q_ref_anchor > float(np.mean(q_rl_rows))
    decision = SelectionDecision(q_ref_anchor, float(np.mean(q_rl_rows)),
                                 "ref" if pick_ref else "rl",
                                 "bootstrap_proposal", step)
    if rl_next_log_probs is not None and alpha > 0:
        q_rl_rows = q_rl_rows - alpha * rl_next_log_probs
    if cfg.per_row or pick_ref:
        q_ref_rows = agents.critic_value(target_critic, batch.next_states,
                                         ref.actions(batch.next_states),
                                         cfg.q_reduce)
    if cfg.per_row:
        q_next = np.where(q_ref_rows > q_rl_rows, q_ref_rows, q_rl_rows)
    else:
        q_next = q_ref_rows if pick_ref else q_rl_rows
    y = batch.rewards + gamma * (1.0 - batch.terminals) * q_next
    return y, decision


def mixed_minibatch(replay: ReplayBuffer, demo: DemoBuffer, n: int,
                    ratio: float, rng: np.random.Generator) -> Batch:
    """ceil(ratio * n) demo transitions, remainder from the replay buffer."""
    n_demo = int(np.ceil(ratio * n))
    n_replay = n - n_demo
    parts = []
    if n_demo > 0:
        if len(demo) == 0:
            raise ValueError("mixed minibatch: demo buffer is empty")
        parts.append(demo.sample(n_demo, rng))
    if n_replay > 0:
        if replay.count == 0:
            raise ValueError("mixed minibatch: replay buffer is empty")
        parts.append(replay.sample(n_replay, rng))
    if len(parts) == 1:
        return parts[0]
    return Batch(*[np.concatenate([getattr(p, f) for p in parts])
                   for f in ("states", "actions", "rewards", "next_states", "terminals")])
