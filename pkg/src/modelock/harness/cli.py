"""``modelock`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 unrecoverable blow-up,
4 divergence-guard abort, 5 hybrid handoff failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_DIVERGED, EXIT_HANDOFF = 0, 2, 3, 4, 5

log = logging.getLogger("modelock")


def _angles(text: str) -> list[float]:
    vals = [float(x) for x in text.split(",")]
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("expected four comma-separated angles")
    return vals


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modelock", description="Mode-locked fiber laser control")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (completed and written back)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default: config 'out')")
    common.add_argument("--threads", type=int, help="worker threads for sweeps")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="settle the cavity and dump fields")
    s.add_argument("--angles", type=_angles, help="alpha1,alpha2,alpha3,alpha_p in degrees")
    s.add_argument("--trips", type=int)
    s.add_argument("--K", type=float)

    s = sub.add_parser("sweep", parents=[common], help="angle and birefringence sweeps")
    s.add_argument("--K", type=float)
    s.add_argument("--no-K-sweep", action="store_true")

    sub.add_parser("train", parents=[common], help="train a Q-network (curriculum aware)")

    for name, text in (("eval", "greedy success over the initial-angle grid"),
                       ("transfer", "zero-shot vs fine-tuned success over K"),
                       ("hybrid", "RL-to-ESC hybrid control run")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--checkpoint", required=True)
        if name == "eval":
            s.add_argument("--K", type=float)
        elif name == "transfer":
            s.add_argument("--K-list", type=_floats)
        else:
            s.add_argument("--drift", action="store_true", help="apply the configured K drift")
            s.add_argument("--initial", type=float, help="initial value of the first angle")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    from modelock.cavity import BlowUpError, ControlState
    from modelock.dqn.agent import DivergenceError
    from modelock.dqn.checkpoint import CheckpointError, load_checkpoint
    from modelock.harness import commands as cmd
    from modelock.harness.config import ConfigError, load_config

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    try:
        cfg = load_config(args.config, overrides)
        out = Path(args.out or cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        cfg = cmd.ensure_calibrated(cfg, args.config)
        threads = cfg["threads"]
        net = None
        if getattr(args, "checkpoint", None):
            net = load_checkpoint(args.checkpoint)
    except (ConfigError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "simulate":
            ctrl = ControlState(*args.angles) if args.angles else None
            r = cmd.cmd_simulate(cfg, out, ctrl, args.trips, args.K)
            print(f"raw_reward {r!r}")
        elif args.command == "sweep":
            rep = cmd.cmd_sweep(cfg, out, threads, args.K, not args.no_K_sweep)
            print(f"argmax {rep['angle']}={rep['argmax']} reward {rep['best_reward']:.4f} "
                  f"threshold {rep['threshold']:.4f}")
        elif args.command == "train":
            res = cmd.cmd_train(cfg, out)
            print(f"trained {len(res.log)} episodes -> {out / 'model.ckpt'}")
        elif args.command == "eval":
            rep = cmd.cmd_eval(cfg, out, net, args.K, threads=threads)
            print(f"success {rep.success_rate:.3f} ({sum(rep.success)}/{len(rep.initials)}) "
                  f"threshold {rep.threshold:.4f}")
        elif args.command == "transfer":
            for row in cmd.cmd_transfer(cfg, out, net, args.K_list, threads):
                print(f"K {row.K:+.3f} zero-shot {row.zero_shot:.3f} "
                      f"fine-tuned {row.finetuned:.3f} episodes {row.episodes}")
        elif args.command == "hybrid":
            hl = cmd.cmd_hybrid(cfg, out, net, args.drift, args.initial, threads)
            if hl.failed:
                print("handoff failed", file=sys.stderr)
                return EXIT_HANDOFF
            print(f"handoff at step {hl.handoff_step} reward {hl.handoff_reward:.4f}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"error: field blow-up ({exc})", file=sys.stderr)
        return EXIT_BLOWUP
    except DivergenceError as exc:
        print(f"error: training diverged ({exc})", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
