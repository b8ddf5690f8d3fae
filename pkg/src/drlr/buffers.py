"""Replay buffer for online transitions and an immutable demonstration buffer.

Demo files are plain text, one record per line, with a versioned header; the
17-significant-digit float formatting makes save/load round-trips bit exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _csv(v: np.ndarray) -> str:
    return ",".join(_fmt(x) for x in v)


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool  # true termination; time-limit truncation stays False

    def validate(self, state_dim=None, action_dim=None):
        s, a, s2 = np.asarray(self.state), np.asarray(self.action), np.asarray(self.next_state)
        if state_dim is not None and (s.shape != (state_dim,) or s2.shape != (state_dim,)):
            raise ValueError(f"state dims {s.shape}/{s2.shape}, expected ({state_dim},)")
        if action_dim is not None and a.shape != (action_dim,):
            raise ValueError(f"action dim {a.shape}, expected ({action_dim},)")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))
                and np.isfinite(self.reward) and np.all(np.isfinite(s2))):
            raise ValueError("non-finite transition field")


@dataclass
class Batch:
    """Column-stacked transitions, ready for vectorized network evaluation."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray  # float64 mask, 1.0 = true terminal

    def __len__(self):
        return self.states.shape[0]


def stack(transitions) -> Batch:
    return Batch(
        np.stack([np.asarray(t.state, dtype=np.float64) for t in transitions]),
        np.stack([np.asarray(t.action, dtype=np.float64) for t in transitions]),
        np.array([t.reward for t in transitions], dtype=np.float64),
        np.stack([np.asarray(t.next_state, dtype=np.float64) for t in transitions]),
        np.array([1.0 if t.terminal else 0.0 for t in transitions]),
    )


class ReplayBuffer:
    """FIFO ring buffer with uniform with-replacement sampling. Transitions
    are stored column-wise in contiguous arrays so sampling is a fancy-index
    gather rather than a per-row stack."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.state_dim = state_dim
        self.action_dim = action_dim
        self._states = np.zeros((capacity, state_dim))
        self._actions = np.zeros((capacity, action_dim))
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, state_dim))
        self._terminals = np.zeros(capacity)
        self._count = 0
        self._next = 0

    @property
    def count(self) -> int:
        return self._count

    def push(self, t: Transition):
        t.validate(self.state_dim, self.action_dim)
        i = self._next if self._count == self.capacity else self._count
        self._states[i] = t.state
        self._actions[i] = t.action
        self._rewards[i] = t.reward
        self._next_states[i] = t.next_state
        self._terminals[i] = 1.0 if t.terminal else 0.0
        if self._count < self.capacity:
            self._count += 1
        else:
            self._next = (self._next + 1) % self.capacity

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        if self.count == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.count, size=n)
        return Batch(self._states[idx], self._actions[idx], self._rewards[idx],
                     self._next_states[idx], self._terminals[idx])

    def transitions(self):
        return [Transition(self._states[i].copy(), self._actions[i].copy(),
                           float(self._rewards[i]), self._next_states[i].copy(),
                           bool(self._terminals[i]))
                for i in range(self._count)]


class DemoBuffer:
    """Fixed expert transitions with per-episode boundaries. Never mutated
    after construction; corruption produces a new buffer."""

    def __init__(self, transitions, episode_starts, state_dim: int, action_dim: int):
        self._transitions = tuple(transitions)
        self.episode_starts = tuple(episode_starts)
        self.state_dim = state_dim
        self.action_dim = action_dim
        for t in self._transitions:
            t.validate(state_dim, action_dim)
        if self._transitions and (not self.episode_starts or self.episode_starts[0] != 0):
            raise ValueError("episode boundaries must start at 0")
        self._columns = (stack(self._transitions) if self._transitions
                         else Batch(np.zeros((0, state_dim)), np.zeros((0, action_dim)),
                                    np.zeros(0), np.zeros((0, state_dim)), np.zeros(0)))
        self._states = self._columns.states
        # Terminal mask with every episode's last transition marked, so an
        # offline learner can refuse to bootstrap past a time-limit cutoff.
        self._end_terminals = self._columns.terminals.copy()
        for k in range(self.n_episodes):
            hi = (self.episode_starts[k + 1] if k + 1 < self.n_episodes
                  else len(self._transitions))
            if hi > 0:
                self._end_terminals[hi - 1] = 1.0

    def __len__(self):
        return len(self._transitions)

    @property
    def n_episodes(self) -> int:
        return len(self.episode_starts)

    def episode(self, k: int):
        lo = self.episode_starts[k]
        hi = self.episode_starts[k + 1] if k + 1 < self.n_episodes else len(self)
        return self._transitions[lo:hi]

    def transitions(self):
        return list(self._transitions)

    def sample(self, n: int, rng: np.random.Generator,
               ground_episode_ends: bool = False) -> Batch:
        if len(self) == 0:
            raise ValueError("cannot sample from an empty demo buffer")
        idx = rng.integers(0, len(self), size=n)
        c = self._columns
        term = self._end_terminals if ground_episode_ends else c.terminals
        return Batch(c.states[idx], c.actions[idx], c.rewards[idx],
                     c.next_states[idx], term[idx])

    @property
    def states(self) -> np.ndarray:
        """All demo states, in storage order (read-only view by convention)."""
        return self._states

    def sample_states(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if len(self) == 0:
            raise ValueError("cannot sample from an empty demo buffer")
        idx = rng.integers(0, len(self), size=n)
        return self._states[idx]

    def contains_state(self, s: np.ndarray) -> bool:
        return bool(np.any(np.all(self._states == np.asarray(s), axis=1)))


def from_episodes(episodes, state_dim: int, action_dim: int) -> DemoBuffer:
    transitions, starts = [], []
    for ep in episodes:
        starts.append(len(transitions))
        transitions.extend(ep)
    return DemoBuffer(transitions, starts, state_dim, action_dim)


def save_demos(demo: DemoBuffer, path):
    with open(path, "w") as f:
        f.write(f"drlr-demo v1 state_dim={demo.state_dim} action_dim={demo.action_dim}\n")
        for k in range(demo.n_episodes):
            for t in demo.episode(k):
                f.write(f"ep={k} s={_csv(t.state)} a={_csv(t.action)} r={_fmt(t.reward)} "
                        f"s2={_csv(t.next_state)} term={1 if t.terminal else 0}\n")


def load_demos(path) -> DemoBuffer:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty demo file")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "drlr-demo" or header[1] != "v1":
        raise ValueError(f"{path}: bad header {lines[0]!r}")
    try:
        state_dim = int(header[2].split("=")[1])
        action_dim = int(header[3].split("=")[1])
    except (IndexError, ValueError) as e:
        raise ValueError(f"{path}: bad header dims") from e
    episodes: dict[int, list[Transition]] = {}
    order: list[int] = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            fields = dict(kv.split("=", 1) for kv in line.split())
            ep = int(fields["ep"])
            t = Transition(
                np.array([float(x) for x in fields["s"].split(",")]),
                np.array([float(x) for x in fields["a"].split(",")]),
                float(fields["r"]),
                np.array([float(x) for x in fields["s2"].split(",")]),
                fields["term"] == "1",
            )
            t.validate(state_dim, action_dim)
        except (KeyError, ValueError) as e:
            raise ValueError(f"{path}: malformed record at line {i}: {e}") from e
        if ep not in episodes:
            episodes[ep] = []
            order.append(ep)
        episodes[ep].append(t)
    if not order:
        raise ValueError(f"{path}: no records")
    return from_episodes([episodes[k] for k in order], state_dim, action_dim)


def corrupt_demos(demo: DemoBuffer, mode: str, level: float,
                  rng: np.random.Generator, env=None) -> DemoBuffer:
    """Degrade demonstration quality.

    half_random: replace a uniformly chosen 50% of episodes with rollouts of
    uniform-random actions in the given environment. noisy: add zero-mean
    Gaussian noise (std = level) to every action, re-clipped to [-1, 1].
    """
    if len(demo) == 0:
        raise ValueError("demo buffer is empty")
    if level < 0:
        raise ValueError("noise level must be non-negative")
    if mode == "noisy":
        episodes = []
        for k in range(demo.n_episodes):
            ep = []
            for t in demo.episode(k):
                a = np.clip(t.action + rng.normal(0.0, level, size=t.action.shape), -1.0, 1.0)
                ep.append(Transition(t.state.copy(), a, t.reward, t.next_state.copy(), t.terminal))
            episodes.append(ep)
        return from_episodes(episodes, demo.state_dim, demo.action_dim)
    if mode == "half_random":
        if env is None:
            raise ValueError("half_random corruption needs an environment to roll out in")
        n = demo.n_episodes
        replace = set(rng.choice(n, size=n // 2, replace=False).tolist())
        episodes = []
        for k in range(demo.n_episodes):
            if k not in replace:
                episodes.append(list(demo.episode(k)))
                continue
            ep = []
            s = env.reset()
            for _ in range(env.spec.max_episode_steps):
                a = rng.uniform(-1.0, 1.0, size=demo.action_dim)
                res = env.step(a)
                ep.append(Transition(s, a, res.reward, res.observation, res.terminal))
                s = res.observation
                if res.terminal or res.truncated:
                    break
            episodes.append(ep)
        return from_episodes(episodes, demo.state_dim, demo.action_dim)
    raise ValueError(f"unknown corruption mode {mode!r}")
