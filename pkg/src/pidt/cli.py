"""Command-line entry point: ``pidt <subcommand> [flags]``.

Exit codes: 0 on success, 1 on usage errors (bad flags, missing or invalid
inputs and configs), 2 on runtime errors.
"""

import argparse
import csv
import glob
import json
import os
import sys
from dataclasses import replace

import numpy as np
from threadpoolctl import threadpool_limits

from .config import build_config, default_config_text, dump_config, parse_config_text
from .errors import (
    ConfigurationError,
    CsvParseError,
    IntegrityError,
    ScenarioParseError,
    ShapeError,
    UsageError,
    VersionError,
)
from .metrics import evaluate
from .plot import plot_trainlog
from .scenario import KINDS, generate_scenario, read_scenario, write_scenario
from .simulator import ExpertPolicy, RandomPolicy, SimConfig, rollout
from .trainer import PidtModel, Trainer, thread_count

SCENARIO_SUFFIX = ".scn"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(v):
    return f"{float(v):.9g}"


def _sim_config(args, base=None):
    base = base or SimConfig()
    if getattr(args, "sim_mode", None):
        base = replace(base, sim_agent_mode=args.sim_mode)
    return base


def _load_policy(spec, seed):
    """``(policy, sim config or None)`` for ``expert``, ``random`` or a checkpoint path."""
    if spec == "expert":
        return ExpertPolicy(), None
    if spec == "random":
        return RandomPolicy(seed), None
    if not os.path.isfile(spec):
        raise UsageError(f"policy must be 'expert', 'random' or a checkpoint file; {spec!r} not found")
    model = PidtModel.load(spec)
    return model.policy(), model.cfg.sim


def _scenario_files(path):
    if os.path.isfile(path):
        return [path]
    if not os.path.isdir(path):
        raise UsageError(f"scenario path not found: {path}")
    files = sorted(glob.glob(os.path.join(path, f"*{SCENARIO_SUFFIX}")))
    if not files:
        raise UsageError(f"no *{SCENARIO_SUFFIX} files in {path}")
    return files


# subcommands

def cmd_gen(args):
    kinds = KINDS if args.kind == "all" else (args.kind,)
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    os.makedirs(args.out_dir, exist_ok=True)
    for i in range(args.count):
        kind = kinds[i % len(kinds)]
        seed = args.seed + i
        path = os.path.join(args.out_dir, f"{kind}_{seed:06d}{SCENARIO_SUFFIX}")
        write_scenario(generate_scenario(kind, seed), path)
        print(path)
    return 0


def _read_run_config(args):
    values = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    if args.config:
        if not os.path.isfile(args.config):
            raise UsageError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            base = parse_config_text(fh.read())
        merged = dict(line.split("=", 1) for line in dump_config(base).splitlines())
        merged.update(values)
        return build_config(merged)
    return build_config(values)


def cmd_train(args):
    cfg = _read_run_config(args)
    tr = Trainer(cfg, args.out)

    def progress(rec):
        if not args.quiet:
            print(f"cycle {rec.cycle} stage {rec.stage} scenarios {rec.scenarios_consumed} "
                  f"probe {rec.probe_before:.6g} -> {rec.probe_after:.6g} reward {rec.mean_reward:.4g}", flush=True)

    tr.run(progress)
    print(os.path.join(args.out, "trainlog.csv"))
    return 0


def cmd_eval(args):
    policy, sim = _load_policy(args.policy, args.seed)
    scenarios = [read_scenario(p) for p in _scenario_files(args.scenarios)]
    report = evaluate(scenarios, policy, _sim_config(args, sim))
    out = args.out or "report.csv"
    if os.path.dirname(out):
        os.makedirs(os.path.dirname(out), exist_ok=True)
    report.write_csv(out)
    for k, v in report.aggregates().items():
        print(f"{k},{_fmt(v)}")
    return 0


def cmd_rollout(args):
    policy, sim = _load_policy(args.policy, args.seed)
    ep = rollout(read_scenario(args.scenario), policy, _sim_config(args, sim))
    cols = ["step", "x", "y", "yaw", "speed", "accel", "curvature", "reward", "collided", "off_road",
            "log_divergence"]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for k in range(len(ep)):
            s = ep.ego_states[k + 1]
            w.writerow([k, *map(_fmt, s), _fmt(ep.actions[k, 0]), _fmt(ep.actions[k, 1]), _fmt(ep.rewards[k]),
                        int(ep.collided[k]), int(ep.off_road[k]), _fmt(ep.log_divergence[k])])
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_inspect_buffer(args):
    path = args.run
    if os.path.isdir(path):
        path = os.path.join(path, "buffers.json")
    if not os.path.isfile(path):
        raise UsageError(f"buffer statistics not found: {path}")
    with open(path) as fh:
        stats = json.load(fh)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["buffer", "size", "capacity", "p_min", "p25", "p50", "p75", "p_max", "episodes"])
        w.writerow(["trajectory", stats["trajectory_episodes"], "", "", "", "", "", "", stats["trajectory_steps"]])
        for name in sorted(stats["hes"]):
            h = stats["hes"][name]
            pr = np.array(h["priorities"], float)
            q = [_fmt(v) for v in np.quantile(pr, [0, 0.25, 0.5, 0.75, 1.0])] if len(pr) else [""] * 5
            w.writerow([f"hes_{name}", len(pr), h["capacity"], *q, len(set(h["episodes"]))])
        for tag in sorted(stats["provenance"]):
            w.writerow([f"provenance_{tag}", stats["provenance"][tag], "", "", "", "", "", "", ""])
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_plot(args):
    if not os.path.isfile(args.trainlog):
        raise UsageError(f"trainlog not found: {args.trainlog}")
    for p in plot_trainlog(args.trainlog, args.out_dir):
        print(p)
    return 0


def build_parser():
    p = _Parser(prog="pidt", description="Physics-informed decision transformer driving toolkit.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="generate synthetic scenarios")
    g.add_argument("--kind", default="all", choices=("all",) + KINDS, help="scenario family (default: all, cycled)")
    g.add_argument("--seed", type=int, default=0, help="first seed; file i uses seed+i")
    g.add_argument("--count", type=int, default=1, help="number of scenarios")
    g.add_argument("--out-dir", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="run two-stage training", formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="config keys and defaults:\n" + default_config_text())
    t.add_argument("--config", help="flat key=value config file (missing keys take defaults)")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    t.add_argument("--out", required=True, help="run directory for checkpoints and trainlog.csv")
    t.add_argument("--quiet", action="store_true", help="no per-cycle progress lines")
    t.set_defaults(func=cmd_train)

    for name, helptext in (("eval", "evaluate a policy on a scenario set"), ("rollout", "roll out one scenario")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--policy", required=True, help="checkpoint path, 'expert' or 'random'")
        if name == "eval":
            e.add_argument("--scenarios", required=True, help="directory of .scn files (or one file)")
            e.add_argument("--out", default="report.csv", help="report path (default: report.csv)")
        else:
            e.add_argument("--scenario", required=True, help="scenario file")
            e.add_argument("--out", help="CSV path (default: stdout)")
        e.add_argument("--seed", type=int, default=0, help="seed for the random policy")
        e.add_argument("--sim-mode", choices=("playback", "idm"), help="non-ego agent behaviour")
        e.set_defaults(func=cmd_eval if name == "eval" else cmd_rollout)

    b = sub.add_parser("inspect-buffer", help="buffer statistics of a training run as CSV")
    b.add_argument("--run", required=True, help="run directory or buffers.json")
    b.add_argument("--out", help="CSV path (default: stdout)")
    b.set_defaults(func=cmd_inspect_buffer)

    pl = sub.add_parser("plot", help="learning-curve SVGs from trainlog.csv")
    pl.add_argument("--trainlog", required=True, help="trainlog.csv path")
    pl.add_argument("--out-dir", required=True, help="output directory")
    pl.set_defaults(func=cmd_plot)
    return p


USAGE_ERRORS = (UsageError, ConfigurationError, CsvParseError, ScenarioParseError, VersionError, IntegrityError,
                ShapeError, FileNotFoundError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("missing subcommand; see pidt --help")
        with threadpool_limits(limits=thread_count()):
            return args.func(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
