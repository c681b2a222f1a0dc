"""Command-line interface: train, evaluate, plot, replay, selftest.

Exit codes: 0 success, 2 configuration error, 3 runtime fault.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .errors import ConfigError


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bomberac",
        description="Asynchronous actor-critic training with a terminal-"
                    "prediction head and an optional tree-search demonstrator "
                    "on a two-player mini bomber arena.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run asynchronous training")
    p_train.add_argument("--config", default=None,
                         help="key=value config file (# comments allowed)")
    p_train.add_argument("--override", action="append", default=[],
                         metavar="KEY=VALUE",
                         help="override a config key (repeatable)")

    p_eval = sub.add_parser("evaluate", help="play greedy evaluation games")
    p_eval.add_argument("--checkpoint", default=None,
                        help="checkpoint path for the evaluated network")
    p_eval.add_argument("--agent", default=None,
                        help="agent token instead of a checkpoint "
                             "(mcts:<rollouts> | rulebased | static | net:<path>)")
    p_eval.add_argument("--opponent", required=True,
                        help="static | rulebased | mcts:<rollouts> | net:<path>")
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--board-size", type=int, default=8)
    p_eval.add_argument("--out", default=None,
                        help="write the summary as JSON to this path")

    p_plot = sub.add_parser("plot", help="render learning curves from CSVs")
    p_plot.add_argument("--csv", nargs="+", required=True)
    p_plot.add_argument("--window", type=int, default=0,
                        help="moving-average window (default: rows/10)")
    p_plot.add_argument("--out", required=True)

    p_replay = sub.add_parser("replay", help="replay a snapshot + action list")
    p_replay.add_argument("--snapshot", required=True)
    p_replay.add_argument("--actions", required=True)

    sub.add_parser("selftest", help="run the fast oracle/invariant battery")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            from . import harness
            cfg = load_config(args.config, args.override)
            run_dir = harness.train(cfg)
            print(f"run directory: {run_dir}")
            return 0
        if args.command == "evaluate":
            from . import harness
            agent = args.agent or args.checkpoint
            if not agent:
                raise ConfigError("evaluate needs --checkpoint or --agent")
            summary = harness.evaluate(agent, args.opponent, args.episodes,
                                       args.seed, board_size=args.board_size)
            text = json.dumps(summary, indent=2, sort_keys=True)
            print(text)
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(text + "\n")
            return 0
        if args.command == "plot":
            from . import plotting
            window = args.window
            if window <= 0:
                rows = plotting.read_episode_csv(args.csv[0])
                window = max(1, len(rows) // 10)
            out = plotting.plot_learning_curves(args.csv, window, args.out)
            print(f"wrote {out}")
            return 0
        if args.command == "replay":
            from . import harness
            harness.replay(args.snapshot, args.actions)
            return 0
        if args.command == "selftest":
            from . import harness
            return 0 if harness.selftest() else 3
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime fault
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 2


if __name__ == "__main__":
    sys.exit(main())
