"""Command line entry point: ``l2e train | eval | inspect-plan | plot``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .config import ExperimentConfig
from .envs import ENV_IDS
from .planmdp import PlanMDP
from .planners import dump_plan
from .plots import emit_plots


def _overrides(pairs):
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def cmd_train(args):
    config = (ExperimentConfig.load(args.config, _overrides(args.set)) if args.config
              else ExperimentConfig.loads("", _overrides(args.set)))
    if args.agents and args.agents > 1:
        if args.seed is not None:
            config.experiment.seed = args.seed
        harness.train_agents(config, args.out, agents=args.agents)
        print(f"trained {args.agents} agents into {args.out}")
        return 0
    res = harness.train(config, args.seed, args.out)
    last = [r for r in res.metrics if r.get("type") == "eval"][-1]
    print(f"steps {res.steps} episodes {res.episodes} final success {last['success_rate']:.3f}")
    return 0


def cmd_eval(args):
    config = ExperimentConfig.load(args.config) if args.config else None
    rec = harness.evaluate(args.ckpt, config, rollouts=args.episodes, seed=args.eval_seed)
    print(json.dumps(rec, sort_keys=True))
    return 0


def cmd_inspect(args):
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    mdp = PlanMDP.make(args.env, config.env, config.shaping.sigma, args.density, seed=args.seed)
    _, plan = mdp.sample_task()
    sys.stdout.write(dump_plan(plan))
    return 0


def cmd_plot(args):
    for path in emit_plots(args.runs, args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="l2e", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one agent (or several with --agents)")
    t.add_argument("--config", help="key = value config file (defaults if omitted)")
    t.add_argument("--seed", type=int, default=None, help="agent seed (default experiment.seed)")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--agents", type=int, default=None,
                   help="train this many seeds into out/agent_<i>")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--episodes", type=int, default=None, help="rollouts (default eval_rollouts)")
    e.add_argument("--config", help="refuse to run unless the checkpoint used this config")
    e.add_argument("--eval-seed", type=int, default=12345)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect-plan", help="print the serialized plan of a sampled task")
    i.add_argument("--env", required=True, choices=ENV_IDS)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--density", type=int, default=None, help="subsample to this many waypoints")
    i.add_argument("--config", help="take environment settings from this config")
    i.set_defaults(func=cmd_inspect)

    pl = sub.add_parser("plot", help="write success-rate tables and a render script")
    pl.add_argument("--runs", nargs="+", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
