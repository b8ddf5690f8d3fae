"""Desk-scale continuous-control environments and scripted experts.

Three tasks covering the low-dim vs high-dim and dense vs sparse axes:

* point_reach   (state 4, action 2): 2-D point mass driven to the origin.
* arm_drawer    (state 12, action 5): planar 5-joint arm opening a prismatic
  drawer along +x by pulling the handle in -x.
* scoop_loader  (state 4, action 3): boom/bucket loader with an admittance
  controller and a spring-like pile resistance; terminal fill/end reward.

All envs take actions in [-1, 1]^action_dim (out-of-range values are clipped
and counted in info), own their RNG, and are deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import admittance as adm
from .buffers import DemoBuffer, Transition, from_episodes


@dataclass
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    max_episode_steps: int
    reward_mode: str  # "dense" | "sparse"


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminal: bool
    truncated: bool
    info: dict = field(default_factory=dict)


def _clip_action(action, dim, info):
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (dim,):
        raise ValueError(f"action shape {a.shape}, expected ({dim},)")
    clipped = np.clip(a, -1.0, 1.0)
    if not np.array_equal(a, clipped):
        info["action_clipped"] = True
    return clipped


class PointReachEnv:
    """2-D point mass: state (x, y, vx, vy), action = force in [-1, 1]^2.

    Semi-implicit Euler with dt = 0.05 and linear damping 0.1. The goal is the
    origin; episodes terminate on reaching it (radius 0.05) in both reward
    modes, with reward 1 at that step in sparse mode and -|pos| per step in
    dense mode.
    """

    DT = 0.05
    DAMPING = 0.1
    GOAL_RADIUS = 0.05

    def __init__(self, reward_mode: str = "dense", rng=None):
        if reward_mode not in ("dense", "sparse"):
            raise ValueError(f"unknown reward_mode {reward_mode!r}")
        self.spec = EnvSpec("point_reach", 4, 2, 100, reward_mode)
        self.rng = np.random.default_rng(rng)
        self._pos = np.zeros(2)
        self._vel = np.zeros(2)
        self._steps = 0

    def reset(self) -> np.ndarray:
        mag = self.rng.uniform(0.5, 1.0, size=2)
        sign = np.where(self.rng.random(2) < 0.5, -1.0, 1.0)
        self._pos = mag * sign
        self._vel = np.zeros(2)
        self._steps = 0
        return self._obs()

    def set_state(self, pos, vel=(0.0, 0.0)):
        """Test hook: place the mass directly."""
        self._pos = np.asarray(pos, dtype=np.float64).copy()
        self._vel = np.asarray(vel, dtype=np.float64).copy()

    def _obs(self):
        return np.concatenate([self._pos, self._vel])

    def step(self, action) -> StepResult:
        info = {}
        force = _clip_action(action, 2, info)
        self._vel = self._vel + self.DT * (force - self.DAMPING * self._vel)
        self._pos = self._pos + self.DT * self._vel
        self._steps += 1
        dist = float(np.linalg.norm(self._pos))
        info["distance"] = dist
        reached = dist < self.GOAL_RADIUS
        if self.spec.reward_mode == "dense":
            reward = -dist
        else:
            reward = 1.0 if reached else 0.0
        terminal = reached
        truncated = (not terminal) and self._steps >= self.spec.max_episode_steps
        info["success"] = reached
        return StepResult(self._obs(), reward, terminal, truncated, info)


class ArmDrawerEnv:
    """Planar 5-joint torque-controlled arm (unit links, viscous joints, no
    gravity) opening a prismatic drawer.

    The drawer extends along +x; pulling the handle in -x while the
    end-effector is engaged (within 0.1 of the handle) increases the
    extension. State: 5 joint angles, 5 joint velocities, drawer extension,
    handle distance. Dense reward: -w_d * handle_distance + w_o * d(extension)
    with a +10 terminal bonus at extension >= 0.3; sparse mode sets w_d = 0.
    """

    DT = 0.05
    VISCOUS = 1.0
    TORQUE_SCALE = 2.0
    ENGAGE_RADIUS = 0.1
    OPEN_TARGET = 0.3
    MAX_EXTENSION = 0.4
    W_DIST = 0.1
    W_OPEN = 5.0
    BONUS = 10.0
    HANDLE_BASE = np.array([4.6, 0.6])
    START_Q = np.zeros(5)

    def __init__(self, reward_mode: str = "dense", rng=None):
        if reward_mode not in ("dense", "sparse"):
            raise ValueError(f"unknown reward_mode {reward_mode!r}")
        self.spec = EnvSpec("arm_drawer", 12, 5, 120, reward_mode)
        self.rng = np.random.default_rng(rng)
        self._q = np.zeros(5)
        self._qd = np.zeros(5)
        self._ext = 0.0
        self._steps = 0

    @staticmethod
    def fk(q):
        c = np.cumsum(q)
        return np.array([np.sum(np.cos(c)), np.sum(np.sin(c))])

    @staticmethod
    def jacobian(q):
        c = np.cumsum(q)
        J = np.zeros((2, 5))
        for j in range(5):
            J[0, j] = -np.sin(c[j:]).sum()
            J[1, j] = np.cos(c[j:]).sum()
        return J

    def handle_pos(self):
        return np.array([self.HANDLE_BASE[0] - self._ext, self.HANDLE_BASE[1]])

    def reset(self) -> np.ndarray:
        self._q = self.START_Q + self.rng.uniform(-0.05, 0.05, size=5)
        self._qd = np.zeros(5)
        self._ext = 0.0
        self._steps = 0
        return self._obs()

    def set_state(self, q, qd=None, ext=0.0):
        """Test hook."""
        self._q = np.asarray(q, dtype=np.float64).copy()
        self._qd = np.zeros(5) if qd is None else np.asarray(qd, dtype=np.float64).copy()
        self._ext = float(ext)

    def _obs(self):
        ee = self.fk(self._q)
        dist = float(np.linalg.norm(ee - self.handle_pos()))
        return np.concatenate([self._q, self._qd, [self._ext, dist]])

    def step(self, action) -> StepResult:
        info = {}
        tau = self.TORQUE_SCALE * _clip_action(action, 5, info)
        ee_before = self.fk(self._q)
        self._qd = self._qd + self.DT * (tau - self.VISCOUS * self._qd)
        self._q = self._q + self.DT * self._qd
        ee = self.fk(self._q)
        ee_vel = (ee - ee_before) / self.DT
        engaged = np.linalg.norm(ee - self.handle_pos()) < self.ENGAGE_RADIUS
        d_ext = 0.0
        if engaged and ee_vel[0] < 0 and self._ext < self.MAX_EXTENSION:
            d_ext = min(-ee_vel[0] * self.DT, self.MAX_EXTENSION - self._ext)
            self._ext += d_ext
        self._steps += 1
        dist = float(np.linalg.norm(ee - self.handle_pos()))
        opened = self._ext >= self.OPEN_TARGET
        w_d = 0.0 if self.spec.reward_mode == "sparse" else self.W_DIST
        reward = -w_d * dist + self.W_OPEN * d_ext + (self.BONUS if opened else 0.0)
        terminal = opened
        truncated = (not terminal) and self._steps >= self.spec.max_episode_steps
        info.update(handle_distance=dist, extension=self._ext, success=opened)
        return StepResult(self._obs(), reward, terminal, truncated, info)


class ScoopLoaderEnv:
    """Boom/bucket loading with admittance control and a 1-D pile model.

    Observation: [q1, q2, advance, tau_e scaled to [-1, 1]]. Action:
    [qd1, qd2, tau_d] in [-1, 1]; qd1/qd2 map to joint reference ranges and
    tau_d to the admittance torque reference. Phase P1 (penetration, commanded
    qd2 > -0.5): the bucket joint tracks an admittance offset and the loader
    advances at constant speed; otherwise (P2&3) pure position tracking, no
    advance. The sparse reward R_f + R_e (or -10 on failure) is granted 50
    steps before the time limit, terminating the episode; the dense variant
    (debug only) shapes by R_f + R_e each step.
    """

    DT_ENV = 0.1
    DT_SIM = 1e-3
    ADVANCE_SPEED = 0.5
    PILE_START = 0.5
    V_MAX = 1.0
    SWEEP_GAIN = 1.6
    TAU_E_SCALE = 100.0
    TAU_D_SCALE = 50.0
    TAU_MAX = 200.0
    Q1_RANGE = (-0.5, 1.0)
    Q2_RANGE = (-1.2, 1.2)
    START_Q = np.array([-0.3, 0.8])
    END_Q = np.array([0.85, -1.08])
    STIFFNESS_RANGE = (30.0, 60.0)
    KP, KV = 60.0, 16.0

    def __init__(self, reward_mode: str = "sparse", rng=None):
        if reward_mode not in ("dense", "sparse"):
            raise ValueError(f"unknown reward_mode {reward_mode!r}")
        self.spec = EnvSpec("scoop_loader", 4, 3, 120, reward_mode)
        self.rng = np.random.default_rng(rng)
        self.dyn = adm.JointDynamics(viscous=np.array([3.0, 1.5]))
        self.gains = adm.AdmittanceGains(M_d=1.0, K_D=8.0, K_P=20.0, tau_sat=80.0)
        self.d_max = float(np.linalg.norm(self.START_Q - self.END_Q))
        self.reward_step = self.spec.max_episode_steps - 50
        self._reset_internals(self.START_Q.copy(), 45.0)

    def _reset_internals(self, q, stiffness):
        self._q = q
        self._qd = np.zeros(2)
        self._adm = adm.AdmittanceState.zero(1)
        self._advance = 0.0
        self._volume = 0.0
        self._tau_e = 0.0
        self._stiffness = stiffness
        self._steps = 0

    def reset(self) -> np.ndarray:
        q = self.START_Q + self.rng.uniform(-0.02, 0.02, size=2)
        stiffness = self.rng.uniform(*self.STIFFNESS_RANGE)
        self._reset_internals(q, stiffness)
        return self._obs()

    def set_state(self, q=None, volume=None, advance=None):
        """Test hook."""
        if q is not None:
            self._q = np.asarray(q, dtype=np.float64).copy()
            self._qd = np.zeros(2)
        if volume is not None:
            self._volume = float(volume)
        if advance is not None:
            self._advance = float(advance)

    def _obs(self):
        tau_scaled = np.clip(self._tau_e / self.TAU_E_SCALE, -1.0, 1.0)
        return np.array([self._q[0], self._q[1], self._advance, tau_scaled])

    @staticmethod
    def _map(a, lo, hi):
        return lo + (a + 1.0) * 0.5 * (hi - lo)

    def rewards_now(self):
        r_f = self._volume / self.V_MAX
        d = float(np.linalg.norm(self._q - self.END_Q))
        r_e = 1.0 - d / self.d_max
        return r_f, r_e

    def step(self, action) -> StepResult:
        info = {}
        a = _clip_action(action, 3, info)
        q1_ref = self._map(a[0], *self.Q1_RANGE)
        q2_ref = self._map(a[1], *self.Q2_RANGE)
        tau_d = a[2] * self.TAU_D_SCALE
        phase1 = a[1] > -0.5
        info["phase"] = "P1" if phase1 else "P2"

        n_sub = int(round(self.DT_ENV / self.DT_SIM))
        for _ in range(n_sub):
            if phase1:
                penetration = max(0.0, self._advance - self.PILE_START)
                self._tau_e = -self._stiffness * penetration
                self._adm = adm.admittance_two_sided(
                    self._adm, self.gains, np.array([tau_d]),
                    np.array([self._tau_e]), self.DT_SIM)
                refs = np.array([q1_ref, q2_ref + float(self._adm.q_f[0])])
            else:
                self._tau_e = 0.0
                refs = np.array([q1_ref, q2_ref])
            tau = adm.tracking_controller(self.dyn, self._q, self._qd, refs,
                                          np.zeros(2), self.KP, self.KV)
            tau = np.clip(tau, -self.TAU_MAX, self.TAU_MAX)
            tau_ext = np.array([0.0, self._tau_e])
            self._q, self._qd = adm.dynamics_step(self.dyn, self._q, self._qd,
                                                  tau, tau_ext, self.DT_SIM)
        if phase1:
            penetration = max(0.0, self._advance - self.PILE_START)
            self._volume = min(self.V_MAX, self._volume + self.SWEEP_GAIN
                               * penetration * self.ADVANCE_SPEED * self.DT_ENV)
            self._advance += self.ADVANCE_SPEED * self.DT_ENV

        self._steps += 1
        r_f, r_e = self.rewards_now()
        info.update(fill_rate=r_f, end_reward=r_e, volume=self._volume,
                    advance=self._advance, admittance_crossings=self._adm.crossings)
        terminal = False
        reward = 0.0
        if self._steps == self.reward_step:
            failed = r_f < 0.5 * 1.0 or r_e < 0.5 * 1.0
            reward = -10.0 if failed else r_f + r_e
            terminal = True
            info["success"] = not failed
        elif self.spec.reward_mode == "dense":
            reward = (r_f + r_e) * self.DT_ENV
        truncated = (not terminal) and self._steps >= self.spec.max_episode_steps
        return StepResult(self._obs(), reward, terminal, truncated, info)


class PointReachExpert:
    """PD controller toward the origin."""

    def __init__(self, kp=4.0, kd=2.5):
        self.kp, self.kd = kp, kd

    def __call__(self, obs):
        pos, vel = obs[:2], obs[2:4]
        return np.clip(-self.kp * pos - self.kd * vel, -1.0, 1.0)


class ArmDrawerExpert:
    """Joint-space PD toward an IK solution for the handle, then for a pull
    point behind the (receding) handle."""

    def __init__(self, kp=4.0, kd=2.5, pull_offset=0.08):
        self.kp, self.kd = kp, kd
        self.pull_offset = pull_offset

    @staticmethod
    def ik(q0, target, iters=30, damping=0.1):
        q = np.asarray(q0, dtype=np.float64).copy()
        for _ in range(iters):
            err = target - ArmDrawerEnv.fk(q)
            J = ArmDrawerEnv.jacobian(q)
            JJt = J @ J.T + damping * np.eye(2)
            q = q + J.T @ np.linalg.solve(JJt, err)
        return q

    def __call__(self, obs):
        q, qd, ext = obs[:5], obs[5:10], obs[10]
        ee = ArmDrawerEnv.fk(q)
        handle = np.array([ArmDrawerEnv.HANDLE_BASE[0] - ext,
                           ArmDrawerEnv.HANDLE_BASE[1]])
        target = handle.copy()
        if np.linalg.norm(ee - handle) < 0.09:
            target[0] -= self.pull_offset
        q_star = self.ik(q, target)
        tau = self.kp * (q_star - q) - self.kd * qd
        return np.clip(tau / ArmDrawerEnv.TORQUE_SCALE, -1.0, 1.0)


class ScoopLoaderExpert:
    """Waypoint policy: penetrate with admittance torque, then lift to the
    end configuration."""

    PHASE_SWITCH_STEP = 45

    def __init__(self):
        self._step = 0

    def reset(self):
        self._step = 0

    def __call__(self, obs):
        # stateless w.r.t. the env; phase tracked by advance distance
        advance = obs[2]
        if advance < ScoopLoaderEnv.PILE_START + 1.75:
            # penetration: boom held low, bucket mid, positive torque reference
            a1 = self._inv(ScoopLoaderEnv.START_Q[0], *ScoopLoaderEnv.Q1_RANGE)
            return np.array([a1, 0.0, 0.6])
        a1 = self._inv(ScoopLoaderEnv.END_Q[0], *ScoopLoaderEnv.Q1_RANGE)
        a2 = self._inv(ScoopLoaderEnv.END_Q[1], *ScoopLoaderEnv.Q2_RANGE)
        return np.array([a1, a2, 0.0])

    @staticmethod
    def _inv(q, lo, hi):
        return 2.0 * (q - lo) / (hi - lo) - 1.0


_ENVS = {
    "point_reach": PointReachEnv,
    "arm_drawer": ArmDrawerEnv,
    "scoop_loader": ScoopLoaderEnv,
}

_EXPERTS = {
    "point_reach": PointReachExpert,
    "arm_drawer": ArmDrawerExpert,
    "scoop_loader": ScoopLoaderExpert,
}


def env_names():
    return sorted(_ENVS)


def make_env(name: str, rng=None):
    """Build an environment from a registry key like "point_reach:sparse"."""
    base, _, mode = name.partition(":")
    if base not in _ENVS:
        raise ValueError(f"unknown environment {base!r}; known: {sorted(_ENVS)}")
    return _ENVS[base](mode or "dense", rng=rng)


def scripted_expert(env_name: str):
    base = env_name.partition(":")[0]
    if base not in _EXPERTS:
        raise ValueError(f"no scripted expert for {base!r}")
    return _EXPERTS[base]()


def rollout(env, policy, noise_std: float = 0.0, rng=None):
    """One episode; returns (transitions, total_reward, success)."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    if hasattr(policy, "reset"):
        policy.reset()
    transitions = []
    s = env.reset()
    total = 0.0
    success = False
    while True:
        a = np.asarray(policy(s), dtype=np.float64)
        if noise_std > 0:
            a = a + rng.normal(0.0, noise_std, size=a.shape)
        a = np.clip(a, -1.0, 1.0)
        res = env.step(a)
        transitions.append(Transition(s, a, res.reward, res.observation, res.terminal))
        total += res.reward
        success = success or bool(res.info.get("success", False))
        s = res.observation
        if res.terminal or res.truncated:
            return transitions, total, success


def generate_demos(env, expert, n_episodes: int, noise_std: float,
                   rng: np.random.Generator) -> DemoBuffer:
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    episodes = []
    for _ in range(n_episodes):
        transitions, _, _ = rollout(env, expert, noise_std, rng)
        episodes.append(transitions)
    return from_episodes(episodes, env.spec.state_dim, env.spec.action_dim)
