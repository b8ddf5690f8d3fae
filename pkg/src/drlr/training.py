"""Training loops for every algorithm, plus per-step metric logging.

Offline: bc, td3bc (trained purely on the demo buffer; also used to build
frozen reference policies). Online: td3, sac, and the four selection
variants ibrl_td3, ibrl_sac, drlr_td3, drlr_sac, which pick between a frozen
reference action and the RL action both when acting and when bootstrapping.

Every run writes one metric row per training step; the row carries whatever
was produced at that step (selection decision, losses, temperature, the
behavior-cloning diagnostic E|pi(s) - a|^2 against replay actions, and the
episode return on episode-ending steps).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import agents, nn, selection
from .agents import DeterministicPolicy, GaussianPolicy, Temperature, TwinCritic
from .buffers import DemoBuffer, ReplayBuffer, Transition
from .config import RunConfig, rng_streams
from .envs import make_env, rollout
from .selection import RefPolicy, SelectorConfig

METRIC_COLUMNS = ("step", "phase", "q_ref", "q_rl", "chosen", "critic_loss",
                  "actor_loss", "alpha", "bc_diag_loss", "episode_return",
                  "success")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return f"{float(v):.10g}"


class MetricWriter:
    """One CSV row per training step; None fields render empty. Rows are also
    kept in memory so callers can aggregate without re-reading the file."""

    def __init__(self, path=None):
        self.path = path
        self.rows: list[dict] = []
        self._fh = open(path, "w") if path else None
        if self._fh:
            self._fh.write(",".join(METRIC_COLUMNS) + "\n")

    def write(self, **fields):
        unknown = set(fields) - set(METRIC_COLUMNS)
        if unknown:
            raise ValueError(f"unknown metric fields {sorted(unknown)}")
        self.rows.append(fields)
        if self._fh:
            self._fh.write(",".join(_fmt(fields.get(c)) for c in METRIC_COLUMNS) + "\n")

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class TrainResult:
    algo: str
    actor: object
    critic: TwinCritic | None
    ref: RefPolicy | None
    temperature: Temperature | None
    eval_steps: list = field(default_factory=list)
    eval_returns: list = field(default_factory=list)
    eval_success: list = field(default_factory=list)
    final_return: float = float("nan")
    final_success: float = float("nan")


def greedy_policy(actor):
    """Deterministic evaluation head: Gaussian mean or the tanh output."""
    if isinstance(actor, GaussianPolicy):
        return lambda s: agents.mean_actions(actor, s[None])[0]
    return lambda s: agents.det_actions(actor, s[None])[0][0]


def ibrl_system_policy(actor, ref, critic, q_reduce="min"):
    """Deployed policy: at each state take whichever of the reference and the
    greedy RL action the critic scores higher (ties to the RL branch)."""
    rl = greedy_policy(actor)

    def policy(s):
        s2 = s[None, :]
        a_ref = ref.actions(s2)
        a_rl = rl(s)[None, :]
        q_ref = float(agents.critic_value(critic, s2, a_ref, q_reduce)[0])
        q_rl = float(agents.critic_value(critic, s2, a_rl, q_reduce)[0])
        return a_ref[0] if q_ref > q_rl else a_rl[0]

    return policy


def drlr_system_policy(actor, ref, use_ref: bool):
    """Deployed policy: one branch for the whole rollout, the branch the
    calibrated bootstrap comparison has been choosing during training."""
    if use_ref:
        return lambda s: ref.actions(s[None])[0]
    return greedy_policy(actor)


def evaluate(env, policy_fn, n_episodes: int):
    """Noise-free rollouts; returns (mean return, success rate)."""
    returns, hits = [], 0
    for _ in range(n_episodes):
        _, total, success = rollout(env, policy_fn, 0.0, None)
        returns.append(total)
        hits += bool(success)
    return float(np.mean(returns)), hits / n_episodes


# ---------------------------------------------------------------------------
# offline trainers (also produce reference policies)


def train_bc(demo: DemoBuffer, cfg: RunConfig, steps: int, init_rng, sample_rng,
             writer: MetricWriter | None = None, eval_fn=None) -> DeterministicPolicy:
    policy = agents.make_deterministic_policy(demo.state_dim, demo.action_dim,
                                              cfg.hidden_sizes, rng=init_rng)
    opt = nn.init_adam(policy.trunk)
    for step in range(1, steps + 1):
        batch = demo.sample(cfg.batch_size, sample_rng)
        loss, grad = agents.bc_loss(policy, batch.states, batch.actions)
        policy.trunk, opt = nn.adam_step(policy.trunk, grad, opt, cfg.lr)
        if writer is not None:
            writer.write(step=step, actor_loss=loss, bc_diag_loss=loss)
        if eval_fn is not None:
            eval_fn(step, policy)
    return policy


def train_td3bc(demo: DemoBuffer, cfg: RunConfig, steps: int, init_rng,
                sample_rng, noise_rng, writer: MetricWriter | None = None,
                eval_fn=None):
    """Offline TD3 with a behavior-cloning term in the actor loss. The critic
    is trained on demo transitions only. Returns (actor, critic)."""
    sd, ad = demo.state_dim, demo.action_dim
    actor = agents.make_deterministic_policy(sd, ad, cfg.hidden_sizes, rng=init_rng)
    actor_t = DeterministicPolicy(actor.trunk.copy())
    critic = agents.make_twin_critic(sd, ad, cfg.hidden_sizes, rng=init_rng)
    critic_t = TwinCritic(critic.q1.copy(), critic.q2.copy())
    opt_a = nn.init_adam(actor.trunk)
    opt_1, opt_2 = nn.init_adam(critic.q1), nn.init_adam(critic.q2)
    for step in range(1, steps + 1):
        batch = demo.sample(cfg.batch_size, sample_rng, ground_episode_ends=True)
        y = agents.td3_target(critic_t, actor_t, batch, cfg.gamma,
                              cfg.smooth_noise_std, cfg.smooth_noise_clip, noise_rng)
        closs, g1, g2 = agents.critic_loss(critic, batch.states, batch.actions, y)
        critic.q1, opt_1 = nn.adam_step(critic.q1, g1, opt_1, cfg.lr)
        critic.q2, opt_2 = nn.adam_step(critic.q2, g2, opt_2, cfg.lr)
        aloss = None
        if step % cfg.policy_delay == 0:
            lam = agents.td3bc_lambda(critic, batch.states, batch.actions, cfg.alpha_bc)
            aloss, ga = agents.td3bc_actor_loss(actor, critic, batch.states,
                                                batch.actions, lam)
            actor.trunk, opt_a = nn.adam_step(actor.trunk, ga, opt_a, cfg.lr)
            actor_t.trunk = nn.polyak_update(actor_t.trunk, actor.trunk, cfg.tau)
            critic_t.q1 = nn.polyak_update(critic_t.q1, critic.q1, cfg.tau)
            critic_t.q2 = nn.polyak_update(critic_t.q2, critic.q2, cfg.tau)
        if writer is not None:
            writer.write(step=step, critic_loss=closs, actor_loss=aloss)
        if eval_fn is not None:
            eval_fn(step, actor)
    return actor, critic


def train_ref_policy(demo: DemoBuffer, cfg: RunConfig, init_rng, sample_rng,
                     noise_rng) -> RefPolicy:
    if cfg.ref_kind == "bc":
        policy = train_bc(demo, cfg, cfg.ref_steps, init_rng, sample_rng)
    else:
        policy, _ = train_td3bc(demo, cfg, cfg.ref_steps, init_rng, sample_rng,
                                noise_rng)
    return RefPolicy(cfg.ref_kind, policy)


# ---------------------------------------------------------------------------
# online training


def _offline(demo, cfg, writer, streams, eval_env) -> TrainResult:
    result = TrainResult(cfg.algo, None, None, None, None)

    def eval_fn(step, actor):
        if cfg.eval_every and step % cfg.eval_every == 0:
            r, s = evaluate(eval_env, greedy_policy(actor), cfg.eval_episodes)
            result.eval_steps.append(step)
            result.eval_returns.append(r)
            result.eval_success.append(s)

    if cfg.algo == "bc":
        actor = train_bc(demo, cfg, cfg.total_steps, streams["init"],
                         streams["buffer"], writer, eval_fn)
        critic = None
    else:
        actor, critic = train_td3bc(demo, cfg, cfg.total_steps, streams["init"],
                                    streams["buffer"], streams["update"],
                                    writer, eval_fn)
    result.actor, result.critic = actor, critic
    result.final_return, result.final_success = evaluate(
        eval_env, greedy_policy(actor), cfg.eval_episodes)
    return result


def _smoothed_target_actions(actor_t, states, cfg, rng):
    a, _ = agents.det_actions(actor_t, states)
    if cfg.smooth_noise_std > 0:
        noise = np.clip(rng.normal(0.0, cfg.smooth_noise_std, size=a.shape),
                        -cfg.smooth_noise_clip, cfg.smooth_noise_clip)
        a = np.clip(a + noise, -1.0, 1.0)
    return a


def _online(env, demo, cfg, writer, streams, eval_env) -> TrainResult:
    sd, ad = env.spec.state_dim, env.spec.action_dim
    algo = cfg.algo
    sac_family = algo.endswith("sac")
    is_drlr = algo.startswith("drlr")
    is_ibrl = algo.startswith("ibrl")

    init_rng = streams["init"]
    if sac_family:
        actor = agents.make_gaussian_policy(sd, ad, cfg.hidden_sizes, rng=init_rng)
        actor_t = None
    else:
        actor = agents.make_deterministic_policy(sd, ad, cfg.hidden_sizes, rng=init_rng)
        actor_t = DeterministicPolicy(actor.trunk.copy())
    critic = agents.make_twin_critic(sd, ad, cfg.hidden_sizes, rng=init_rng)
    critic_t = TwinCritic(critic.q1.copy(), critic.q2.copy())
    opt_a = nn.init_adam(actor.trunk)
    opt_1, opt_2 = nn.init_adam(critic.q1), nn.init_adam(critic.q2)
    temp = Temperature(float(np.log(cfg.initial_alpha)),
                       cfg.learn_alpha and sac_family, -float(ad))

    ref = None
    sel_cfg = None
    if is_drlr or is_ibrl:
        if demo is None or len(demo) == 0:
            raise ValueError(f"{algo} requires a non-empty demo buffer")
        ref = train_ref_policy(demo, cfg, streams["ref"], streams["ref"],
                               streams["ref"])
        sel_cfg = SelectorConfig(cfg.resolved_selector_mode,
                                 cfg.softmax_temperature,
                                 min(cfg.demo_eval_batch, len(demo)),
                                 cfg.q_reduce, cfg.per_row)

    replay = ReplayBuffer(cfg.replay_capacity, sd, ad)
    if is_ibrl and cfg.prefill_replay:
        for t in demo.transitions():
            replay.push(t)

    result = TrainResult(algo, actor, critic, ref, temp)
    sel_rng = streams["selector"]
    act_rng = streams["action_noise"]
    buf_rng = streams["buffer"]
    upd_rng = streams["update"]

    def _eval_policy():
        # the deployed policy: selection variants keep their selection module
        if is_ibrl:
            return ibrl_system_policy(actor, ref, critic_t, cfg.q_reduce)
        if is_drlr:
            # majority of the recent calibrated comparisons; before the first
            # update the reference acts, matching the interaction rule
            use_ref = (not recent_choices
                       or sum(recent_choices) * 2 >= len(recent_choices))
            return drlr_system_policy(actor, ref, use_ref)
        return greedy_policy(actor)

    s = env.reset()
    ep_ret = 0.0
    critic_updates = 0
    # Acting branch for drlr: follow the most recent calibrated batch
    # comparison (computed during the bootstrap update); until the first
    # update the reference policy acts. Evaluation deploys the majority
    # branch over a recent window to smooth single-batch flips.
    drlr_act_ref = True
    recent_choices: deque = deque(maxlen=200)
    for step in range(1, cfg.total_steps + 1):
        decision = None
        if is_ibrl:
            a, decision = selection.ibrl_propose(
                s, ref, actor, critic_t, sel_cfg, sel_rng, step,
                cfg.exploration_noise)
        elif is_drlr:
            if drlr_act_ref:
                a = ref.actions(s[None])[0]
            elif sac_family:
                a, _ = agents.sample_action(actor, s, sel_rng)
            else:
                a, _ = agents.det_actions(actor, s[None])
                a = np.clip(a[0] + sel_rng.normal(0.0, cfg.exploration_noise,
                                                  size=ad), -1.0, 1.0)
        elif step <= cfg.warmup_steps:
            a = act_rng.uniform(-1.0, 1.0, size=ad)
        elif sac_family:
            a, _ = agents.sample_action(actor, s, act_rng)
        else:
            a, _ = agents.det_actions(actor, s[None])
            a = np.clip(a[0] + act_rng.normal(0.0, cfg.exploration_noise, size=ad),
                        -1.0, 1.0)

        res = env.step(a)
        replay.push(Transition(s, np.asarray(a, dtype=np.float64), res.reward,
                               res.observation, res.terminal))
        ep_ret += res.reward
        done = res.terminal or res.truncated
        row_ret = row_success = None
        if done:
            row_ret = ep_ret
            row_success = bool(res.info.get("success", False))
            s = env.reset()
            ep_ret = 0.0
        else:
            s = res.observation

        closs = aloss = bc_diag = None
        can_update = replay.count >= cfg.batch_size
        if not (is_drlr or is_ibrl):
            can_update = can_update and step > cfg.warmup_steps
        if can_update:
            for _ in range(cfg.utd):
                if is_drlr:
                    batch = selection.mixed_minibatch(replay, demo,
                                                      cfg.batch_size,
                                                      cfg.demo_ratio, buf_rng)
                else:
                    batch = replay.sample(cfg.batch_size, buf_rng)

                if algo == "td3":
                    y = agents.td3_target(critic_t, actor_t, batch, cfg.gamma,
                                          cfg.smooth_noise_std,
                                          cfg.smooth_noise_clip, upd_rng)
                elif algo == "sac":
                    y = agents.sac_target(critic_t, actor, batch, cfg.gamma,
                                          temp.alpha, upd_rng)
                elif is_ibrl:
                    if sac_family:
                        eps = upd_rng.standard_normal((len(batch), ad))
                        a2, _, _ = agents.sample_actions(actor, batch.next_states, eps)
                    else:
                        a2 = _smoothed_target_actions(actor_t, batch.next_states,
                                                      cfg, upd_rng)
                    y = selection.ibrl_bellman_target(batch, ref, a2, critic_t,
                                                      cfg.gamma, sel_cfg, upd_rng)
                else:  # drlr
                    lp2 = None
                    if sac_family:
                        eps = upd_rng.standard_normal((len(batch), ad))
                        a2, lp2, _ = agents.sample_actions(actor, batch.next_states, eps)
                        alpha = temp.alpha
                    else:
                        a2 = _smoothed_target_actions(actor_t, batch.next_states,
                                                      cfg, upd_rng)
                        alpha = 0.0
                    y, decision = selection.drlr_bellman_target(
                        batch, demo, ref, actor, critic_t, cfg.gamma, alpha,
                        sel_cfg, upd_rng, step, rl_next_actions=a2,
                        rl_next_log_probs=lp2)
                    drlr_act_ref = decision.chosen == "ref"
                    recent_choices.append(drlr_act_ref)

                closs, g1, g2 = agents.critic_loss(critic, batch.states,
                                                   batch.actions, y)
                critic.q1, opt_1 = nn.adam_step(critic.q1, g1, opt_1, cfg.lr)
                critic.q2, opt_2 = nn.adam_step(critic.q2, g2, opt_2, cfg.lr)
                critic_updates += 1

                if sac_family:
                    eps = upd_rng.standard_normal((len(batch), ad))
                    aloss, ga = agents.sac_actor_loss(actor, critic,
                                                      batch.states, temp.alpha, eps)
                    actor.trunk, opt_a = nn.adam_step(actor.trunk, ga, opt_a, cfg.lr)
                    if temp.learnable:
                        _, lp, _ = agents.sample_actions(actor, batch.states, eps)
                        temp = agents.alpha_step(temp, float(np.mean(lp)), cfg.lr)
                    critic_t.q1 = nn.polyak_update(critic_t.q1, critic.q1, cfg.tau)
                    critic_t.q2 = nn.polyak_update(critic_t.q2, critic.q2, cfg.tau)
                elif critic_updates % cfg.policy_delay == 0:
                    aloss, ga = agents.td3_actor_loss(actor, critic, batch.states)
                    actor.trunk, opt_a = nn.adam_step(actor.trunk, ga, opt_a, cfg.lr)
                    actor_t.trunk = nn.polyak_update(actor_t.trunk, actor.trunk,
                                                     cfg.tau)
                    critic_t.q1 = nn.polyak_update(critic_t.q1, critic.q1, cfg.tau)
                    critic_t.q2 = nn.polyak_update(critic_t.q2, critic.q2, cfg.tau)

            # imitation-drift diagnostic: distance of the RL actor from the
            # actions actually taken, sampled from the replay buffer
            diag_batch = replay.sample(cfg.batch_size, buf_rng)
            bc_diag = agents.bc_diagnostic(actor, diag_batch.states,
                                           diag_batch.actions)

        if writer is not None:
            kw = dict(step=step, critic_loss=closs, actor_loss=aloss,
                      bc_diag_loss=bc_diag, episode_return=row_ret,
                      success=row_success)
            if sac_family:
                kw["alpha"] = temp.alpha
            if decision is not None:
                kw.update(phase=decision.phase, q_ref=decision.q_ref,
                          q_rl=decision.q_rl, chosen=decision.chosen)
            writer.write(**kw)

        if cfg.eval_every and step % cfg.eval_every == 0:
            r, sr = evaluate(eval_env, _eval_policy(), cfg.eval_episodes)
            result.eval_steps.append(step)
            result.eval_returns.append(r)
            result.eval_success.append(sr)

    result.temperature = temp
    result.final_return, result.final_success = evaluate(
        eval_env, _eval_policy(), cfg.eval_episodes)
    return result


def train(cfg: RunConfig, demo: DemoBuffer | None = None,
          writer: MetricWriter | None = None, streams=None,
          env=None, eval_env=None) -> TrainResult:
    """Run one training configuration end to end.

    The caller may supply the demo buffer, environments, and RNG streams
    (the harness does, so it can also persist them); anything omitted is
    built here from the config.
    """
    cfg.validate()
    if streams is None:
        streams = rng_streams(cfg.seed)
    if cfg.needs_demos() and (demo is None or len(demo) == 0):
        raise ValueError(f"algo {cfg.algo!r} requires demonstrations")
    if eval_env is None:
        eval_env = make_env(cfg.env, rng=streams["eval_env"])
    if cfg.algo in ("bc", "td3bc"):
        return _offline(demo, cfg, writer, streams, eval_env)
    if env is None:
        env = make_env(cfg.env, rng=streams["env"])
    return _online(env, demo, cfg, writer, streams, eval_env)
