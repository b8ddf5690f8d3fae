"""Run orchestration: single runs, experiment grids, and summaries.

A run directory is self-describing: it holds the resolved config, the exact
demonstrations used (and their hash), the per-step metric CSV, evaluation
curves, checkpoints, and a machine-readable summary.
"""

from __future__ import annotations

import csv
import hashlib
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, nn
from .buffers import DemoBuffer, corrupt_demos, load_demos, save_demos
from .config import OFFLINE_ALGOS, RunConfig, rng_streams
from .envs import generate_demos, make_env, scripted_expert
from .training import MetricWriter, TrainResult, train

SEEDS = (10, 11, 12)

_TOTAL_STEPS = {"point_reach": 20000, "arm_drawer": 30000, "scoop_loader": 40000}
_OFFLINE_STEPS = 5000

PRESETS = ("expB", "expC", "expD")


def default_out_root() -> Path:
    return Path(os.environ.get("DRLR_OUT", "runs"))


@dataclass
class RunSummary:
    env: str
    algo: str
    seed: int
    final_return: float
    final_success: float
    run_dir: str
    wall_clock: float
    eval_steps: list = field(default_factory=list)
    eval_returns: list = field(default_factory=list)
    eval_success: list = field(default_factory=list)


def prepare_demos(cfg: RunConfig, streams) -> DemoBuffer:
    """Load or generate the demonstrations a config asks for, then apply the
    configured corruption."""
    if cfg.demo_file:
        demo = load_demos(cfg.demo_file)
    else:
        env = make_env(cfg.env, rng=streams["demo"])
        demo = generate_demos(env, scripted_expert(cfg.env), cfg.demo_episodes,
                              cfg.demo_noise, streams["demo"])
    if cfg.demo_corruption:
        env = make_env(cfg.env, rng=streams["demo"]) if cfg.demo_corruption == "half_random" else None
        demo = corrupt_demos(demo, cfg.demo_corruption, cfg.corruption_level,
                             streams["demo"], env=env)
    return demo


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_name(cfg: RunConfig) -> str:
    env = cfg.env.replace(":", "-")
    tag = f"_{cfg.demo_corruption}" if cfg.demo_corruption else ""
    return f"{env}_{cfg.algo}{tag}_seed{cfg.seed}"


def run(cfg: RunConfig, out_dir=None) -> RunSummary:
    """Execute one configuration and persist everything into its run dir."""
    cfg.validate()
    out = Path(out_dir) if out_dir else default_out_root() / run_name(cfg)
    out.mkdir(parents=True, exist_ok=True)
    streams = rng_streams(cfg.seed)

    demo = None
    demo_hash = ""
    if cfg.needs_demos():
        demo = prepare_demos(cfg, streams)
        save_demos(demo, out / "demos.txt")
        demo_hash = _sha256(out / "demos.txt")

    t0 = time.monotonic()
    with MetricWriter(out / "metrics.csv") as writer:
        result = train(cfg, demo, writer, streams)
    wall = time.monotonic() - t0

    _save_checkpoints(result, out)
    with open(out / "evals.csv", "w") as f:
        f.write("step,mean_return,success_rate\n")
        for s, r, sr in zip(result.eval_steps, result.eval_returns,
                            result.eval_success):
            f.write(f"{s},{r:.10g},{sr:.10g}\n")
    with open(out / "run.meta", "w") as f:
        f.write(cfg.to_text())
        f.write(f"demo_sha256={demo_hash}\n")
        f.write(f"code_version={__version__}\n")
    with open(out / "summary.txt", "w") as f:
        f.write(f"final_return={result.final_return:.10g}\n")
        f.write(f"final_success={result.final_success:.10g}\n")
        f.write(f"wall_clock={wall:.3f}\n")
    return RunSummary(cfg.env, cfg.algo, cfg.seed, result.final_return,
                      result.final_success, str(out), wall,
                      list(result.eval_steps), list(result.eval_returns),
                      list(result.eval_success))


def _save_checkpoints(result: TrainResult, out: Path):
    nn.save_params(result.actor.trunk, out / "actor.ckpt")
    if result.critic is not None:
        nn.save_params(result.critic.q1, out / "critic_q1.ckpt")
        nn.save_params(result.critic.q2, out / "critic_q2.ckpt")
    if result.ref is not None:
        nn.save_params(result.ref.policy.trunk, out / "ref_actor.ckpt")


# ---------------------------------------------------------------------------
# experiment grids


def _base_config(env: str, seed: int) -> RunConfig:
    base = env.partition(":")[0]
    alpha, learn = (0.1, True) if base == "arm_drawer" else (0.01, False)
    total = _TOTAL_STEPS[base]
    return RunConfig(env=env, seed=seed, total_steps=total,
                     initial_alpha=alpha, learn_alpha=learn,
                     eval_every=max(1000, total // 20))


def grid(preset: str, env: str, seeds=SEEDS) -> list[RunConfig]:
    """Fully resolved configs for one experiment preset on one environment."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; known: {PRESETS}")
    configs = []
    for seed in seeds:
        base = _base_config(env, seed)
        if preset == "expB":
            # the diagnostic pairing runs each method at its own update-to-data
            # ratio: 1 for the calibrated selector, 5 for actor proposals
            configs += [replace(base, algo="ibrl_td3", utd=5),
                        replace(base, algo="drlr_td3")]
        elif preset == "expC":
            algos = ("ibrl_td3", "drlr_td3", "ibrl_sac", "drlr_sac")
            configs += [replace(base, algo=a) for a in algos]
        else:  # expD: offline policies across demo-quality regimes
            for algo in ("bc", "td3bc"):
                for corruption in ("", "half_random", "noisy"):
                    configs.append(replace(base, algo=algo,
                                           demo_corruption=corruption,
                                           total_steps=_OFFLINE_STEPS,
                                           eval_every=1000))
    for cfg in configs:
        cfg.validate()
    return configs


def _run_one(args):
    cfg, out_root = args
    return run(cfg, Path(out_root) / run_name(cfg))


def run_grid(configs, out_root, workers: int = 1) -> list[RunSummary]:
    jobs = [(cfg, str(out_root)) for cfg in configs]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


# ---------------------------------------------------------------------------
# summaries


@dataclass
class Summary:
    cells: dict            # (env, algo) -> dict with returns/successes per seed
    curves: dict           # (env, algo) -> (steps, mean returns over seeds)
    errors: list           # unreadable run dirs, reported but not fatal

    def csv_rows(self):
        rows = [("env", "algo", "seeds", "mean_return", "std_return",
                 "mean_success")]
        for (env, algo) in sorted(self.cells):
            c = self.cells[(env, algo)]
            r = np.array(c["returns"])
            rows.append((env, algo, len(r), f"{r.mean():.6g}",
                         f"{r.std():.6g}", f"{np.mean(c['successes']):.6g}"))
        return rows

    def text_table(self) -> str:
        envs_ = sorted({e for e, _ in self.cells})
        algos = sorted({a for _, a in self.cells})
        width = max([len(a) for a in algos] + [16])
        head = "env".ljust(24) + "".join(a.rjust(width + 2) for a in algos)
        lines = [head, "-" * len(head)]
        for env in envs_:
            row = env.ljust(24)
            for algo in algos:
                c = self.cells.get((env, algo))
                if c is None:
                    cell = "-"
                else:
                    r = np.array(c["returns"])
                    cell = f"{r.mean():.2f} +/- {r.std():.2f}"
                row += cell.rjust(width + 2)
            lines.append(row)
        for err in self.errors:
            lines.append(f"skipped: {err}")
        return "\n".join(lines) + "\n"


def _read_kv(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def summarize(run_dirs) -> Summary:
    """Aggregate completed run directories into a table and mean curves."""
    cells: dict = {}
    curve_acc: dict = {}
    errors = []
    for d in run_dirs:
        d = Path(d)
        try:
            meta = _read_kv(d / "run.meta")
            summ = _read_kv(d / "summary.txt")
            key = (meta["env"], meta["algo"])
            cell = cells.setdefault(key, {"returns": [], "successes": []})
            cell["returns"].append(float(summ["final_return"]))
            cell["successes"].append(float(summ["final_success"]))
            with open(d / "evals.csv") as f:
                rows = list(csv.DictReader(f))
            steps = tuple(int(r["step"]) for r in rows)
            rets = [float(r["mean_return"]) for r in rows]
            curve_acc.setdefault(key, []).append((steps, rets))
        except (OSError, KeyError, ValueError) as e:
            errors.append(f"{d}: {e}")
    curves = {}
    for key, series in curve_acc.items():
        steps = series[0][0]
        aligned = [r for s, r in series if s == steps]
        if aligned:
            curves[key] = (list(steps), np.mean(aligned, axis=0).tolist())
    return Summary(cells, curves, errors)


def write_summary(summary: Summary, out_dir) -> list[str]:
    """Write the delimited outputs and render the figures next to them.
    Returns the list of files written."""
    from . import plots

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    with open(out / "summary.csv", "w", newline="") as f:
        csv.writer(f).writerows(summary.csv_rows())
    written.append(str(out / "summary.csv"))
    (out / "summary.txt").write_text(summary.text_table())
    written.append(str(out / "summary.txt"))
    with open(out / "curves.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("env", "algo", "step", "mean_return"))
        for (env, algo), (steps, rets) in sorted(summary.curves.items()):
            for s, r in zip(steps, rets):
                w.writerow((env, algo, s, f"{r:.6g}"))
    written.append(str(out / "curves.csv"))
    written += plots.render_summary_figures(summary, out)
    return written
