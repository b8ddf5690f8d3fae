"""Run configuration: a flat key=value file format, validation, and the
derivation of named RNG streams from one master seed.

Every tunable of a training run lives in RunConfig so that a run is a pure
function of (config, demo file bytes). Streams are spawned from independent
SeedSequence children, so toggling a feature that consumes one stream does
not shift the draws of any other.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import envs

ALGOS = ("bc", "td3", "sac", "td3bc", "ibrl_td3", "ibrl_sac", "drlr_td3", "drlr_sac")
OFFLINE_ALGOS = ("bc", "td3bc")
SELECTION_ALGOS = ("ibrl_td3", "ibrl_sac", "drlr_td3", "drlr_sac")

# One generator per concern; spawned in this fixed order.
STREAM_NAMES = ("env", "eval_env", "action_noise", "buffer", "update",
                "selector", "init", "ref", "eval", "demo")


@dataclass
class RunConfig:
    env: str = "point_reach:sparse"
    algo: str = "drlr_sac"
    seed: int = 10
    total_steps: int = 20000
    batch_size: int = 128
    lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 0.005
    utd: int = 1
    initial_alpha: float = 0.1
    learn_alpha: bool = True
    selector_mode: str = "auto"  # auto | ibrl_hard | ibrl_soft | drlr
    softmax_temperature: float = 1.0
    demo_eval_batch: int = 128
    q_reduce: str = "min"
    per_row: bool = False
    replay_capacity: int = 200000
    demo_file: str = ""
    demo_episodes: int = 30
    demo_noise: float = 0.05
    demo_corruption: str = ""  # "" | half_random | noisy
    corruption_level: float = 0.3
    demo_ratio: float = 0.5
    prefill_replay: bool = True
    eval_every: int = 1000
    eval_episodes: int = 5
    warmup_steps: int = 500
    exploration_noise: float = 0.1
    smooth_noise_std: float = 0.1
    smooth_noise_clip: float = 0.5
    policy_delay: int = 2
    ref_kind: str = "bc"  # bc | td3bc
    ref_steps: int = 3000
    alpha_bc: float = 2.5
    hidden: str = "64,64"

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        try:
            sizes = tuple(int(s) for s in self.hidden.split(","))
        except ValueError:
            raise ValueError(f"hidden: cannot parse {self.hidden!r}") from None
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError(f"hidden: sizes must be positive, got {self.hidden!r}")
        return sizes

    @property
    def resolved_selector_mode(self) -> str:
        if self.selector_mode != "auto":
            return self.selector_mode
        if self.algo.startswith("drlr"):
            return "drlr"
        if self.algo.startswith("ibrl"):
            return "ibrl_hard"
        return ""

    def needs_demos(self) -> bool:
        return self.algo in OFFLINE_ALGOS or self.algo in SELECTION_ALGOS

    def validate(self):
        if self.algo not in ALGOS:
            raise ValueError(f"algo: unknown {self.algo!r}; known: {ALGOS}")
        base, _, mode = self.env.partition(":")
        if base not in envs.env_names():
            raise ValueError(f"env: unknown {base!r}; known: {envs.env_names()}")
        if mode not in ("", "dense", "sparse"):
            raise ValueError(f"env: unknown reward mode {mode!r}")
        if self.total_steps < 0:
            raise ValueError("total_steps: must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size: must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr: must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma: must be in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau: must be in (0, 1]")
        if self.utd < 1:
            raise ValueError("utd: must be >= 1")
        if self.algo.startswith("drlr") and self.utd != 1:
            raise ValueError("utd: drlr algorithms use utd=1")
        if self.initial_alpha <= 0:
            raise ValueError("initial_alpha: must be positive")
        mode_sel = self.resolved_selector_mode
        if self.algo.startswith("drlr") and mode_sel != "drlr":
            raise ValueError(f"selector_mode: {self.selector_mode!r} conflicts with algo {self.algo!r}")
        if self.algo.startswith("ibrl") and mode_sel not in ("ibrl_hard", "ibrl_soft"):
            raise ValueError(f"selector_mode: {self.selector_mode!r} conflicts with algo {self.algo!r}")
        if self.softmax_temperature <= 0:
            raise ValueError("softmax_temperature: must be positive")
        if self.demo_eval_batch < 1:
            raise ValueError("demo_eval_batch: must be >= 1")
        if self.q_reduce not in ("min", "mean"):
            raise ValueError(f"q_reduce: unknown {self.q_reduce!r}")
        if self.replay_capacity < 1:
            raise ValueError("replay_capacity: must be >= 1")
        if self.demo_episodes < 1:
            raise ValueError("demo_episodes: must be >= 1")
        if self.demo_noise < 0:
            raise ValueError("demo_noise: must be >= 0")
        if self.demo_corruption not in ("", "half_random", "noisy"):
            raise ValueError(f"demo_corruption: unknown {self.demo_corruption!r}")
        if self.corruption_level < 0:
            raise ValueError("corruption_level: must be >= 0")
        if not 0.0 <= self.demo_ratio <= 1.0:
            raise ValueError("demo_ratio: must be in [0, 1]")
        if self.eval_every < 0:
            raise ValueError("eval_every: must be >= 0")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes: must be >= 1")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps: must be >= 0")
        if self.exploration_noise < 0 or self.smooth_noise_std < 0:
            raise ValueError("exploration_noise/smooth_noise_std: must be >= 0")
        if self.smooth_noise_clip < 0:
            raise ValueError("smooth_noise_clip: must be >= 0")
        if self.policy_delay < 1:
            raise ValueError("policy_delay: must be >= 1")
        if self.ref_kind not in ("bc", "td3bc"):
            raise ValueError(f"ref_kind: unknown {self.ref_kind!r}")
        if self.ref_steps < 0:
            raise ValueError("ref_steps: must be >= 0")
        if self.alpha_bc <= 0:
            raise ValueError("alpha_bc: must be positive")
        self.hidden_sizes  # raises on malformed strings

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    typ = _FIELD_TYPES[key]
    raw = raw.strip()
    if typ == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ValueError(f"{key}: expected {typ}, got {raw!r}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse flat key=value lines; '#' starts a comment. Unknown or repeated
    keys are errors."""
    values = {}
    for i, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {i}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"line {i}: unknown config key {key!r}")
        if key in values:
            raise ValueError(f"line {i}: duplicate config key {key!r}")
        values[key] = _parse_value(key, raw)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    with open(path) as f:
        return parse_config(f.read())


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(s) for name, s in zip(STREAM_NAMES, children)}
