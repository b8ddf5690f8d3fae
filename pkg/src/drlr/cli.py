"""Command-line interface.

Subcommands: run (one config file), grid (experiment presets), demos
(generate expert demonstrations), summarize (aggregate run directories into
tables, curves, and figures).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness
from .buffers import save_demos
from .config import load_config
from .envs import generate_demos, make_env, scripted_expert


def _cmd_run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    summary = harness.run(cfg, args.out)
    print(f"run dir: {summary.run_dir}")
    print(f"final return: {summary.final_return:.4f}  "
          f"success rate: {summary.final_success:.2f}  "
          f"({summary.wall_clock:.1f}s)")
    return 0


def _cmd_grid(args):
    configs = harness.grid(args.preset, args.env)
    print(f"{args.preset} on {args.env}: {len(configs)} runs, "
          f"{args.workers} worker(s)")
    summaries = harness.run_grid(configs, args.out, args.workers)
    run_dirs = [s.run_dir for s in summaries]
    table = harness.summarize(run_dirs)
    written = harness.write_summary(table, args.out)
    print(table.text_table())
    print("wrote: " + ", ".join(written))
    return 0


def _cmd_demos(args):
    env = make_env(args.env, rng=args.seed)
    expert = scripted_expert(args.env)
    demo = generate_demos(env, expert, args.episodes, args.noise,
                          np.random.default_rng(args.seed))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_demos(demo, args.out)
    print(f"wrote {len(demo)} transitions ({demo.n_episodes} episodes) to {args.out}")
    return 0


def _cmd_summarize(args):
    summary = harness.summarize(args.dirs)
    if not summary.cells:
        print("no readable run directories", file=sys.stderr)
        for err in summary.errors:
            print(err, file=sys.stderr)
        return 1
    written = harness.write_summary(summary, args.out)
    print(summary.text_table())
    print("wrote: " + ", ".join(written))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drlr",
                                description="Demonstration-guided RL training runs")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="execute one run from a config file")
    pr.add_argument("--config", required=True)
    pr.add_argument("--seed", type=int, default=None,
                    help="override the config's seed")
    pr.add_argument("--out", default=None, help="run directory")
    pr.set_defaults(fn=_cmd_run)

    pg = sub.add_parser("grid", help="run an experiment preset")
    pg.add_argument("--preset", required=True, choices=harness.PRESETS)
    pg.add_argument("--env", required=True)
    pg.add_argument("--out", required=True)
    pg.add_argument("--workers", type=int, default=1)
    pg.set_defaults(fn=_cmd_grid)

    pd = sub.add_parser("demos", help="record scripted-expert demonstrations")
    pd.add_argument("--env", required=True)
    pd.add_argument("--episodes", type=int, required=True)
    pd.add_argument("--noise", type=float, default=0.0)
    pd.add_argument("--out", required=True)
    pd.add_argument("--seed", type=int, default=0)
    pd.set_defaults(fn=_cmd_demos)

    ps = sub.add_parser("summarize", help="aggregate run directories")
    ps.add_argument("dirs", nargs="+")
    ps.add_argument("--out", default=".",
                    help="where to write tables and figures")
    ps.set_defaults(fn=_cmd_summarize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
