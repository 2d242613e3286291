"""Command-line entry points.

Subcommands: train, eval, theory-check, toy-graph, ablate, plot. Every
failure path prints a diagnostic to stderr and exits nonzero; partially
written logs are left on disk (rows are flushed as they are produced).
"""

from __future__ import annotations

import argparse
import os
import sys
import time

from .exceptions import (
    ConfigurationError,
    ContractError,
    DomainError,
    NumericsError,
    ParseError,
)

HANDLED_ERRORS = (ConfigurationError, ContractError, DomainError,
                  NumericsError, ParseError, OSError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdmpclab",
        description="Latent-space planning with a constrained policy prior: "
                    "training, evaluation, exact bound checks, and plots.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training experiment")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--variant",
                         choices=("constrained", "baseline-b0", "bc"))
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--out", help="override run.out_dir")
    p_train.add_argument("--resume", help="checkpoint to resume from")

    p_eval = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, required=True)

    p_theory = sub.add_parser("theory-check",
                              help="verify the suboptimality bounds exactly")
    p_theory.add_argument("--theorem", default="all",
                          choices=("1", "2", "3", "lemma-a2", "all"))
    p_theory.add_argument("--mdps", type=int)

    p_graph = sub.add_parser("toy-graph",
                             help="replay the two-terminal mismatch example")
    p_graph.add_argument("--delta", type=float, default=0.5)
    p_graph.add_argument("--episodes", type=int, default=100)

    p_ablate = sub.add_parser("ablate", help="sweep one axis over variants")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--betas",
                          help="comma list of beta values and/or 'bc'")
    p_ablate.add_argument("--horizons", help="comma list of planner horizons")
    p_ablate.add_argument("--seeds", default="0")
    p_ablate.add_argument("--out", help="sweep output root")

    p_plot = sub.add_parser("plot", help="render SVG charts from metrics CSVs")
    p_plot.add_argument("--in", dest="inputs", nargs="+", required=True)
    p_plot.add_argument("--out", required=True)
    return parser


def cmd_train(args) -> int:
    from .config import load_config
    from .harness import run_experiment

    cfg = load_config(args.config)
    if args.variant is not None:
        cfg.run.variant = args.variant
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.out is not None:
        cfg.run.out_dir = args.out
    cfg.validate()
    report = run_experiment(cfg, resume_from=args.resume)
    print(f"run complete: {report.out_dir}")
    for key in ("env_steps", "best_eval_return", "final_eval_return",
                "final_ratio"):
        print(f"  {key} = {report.summary[key]}")
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_run
    from .harness import error_ratio, evaluate_true_value, evaluate_value_estimate

    agent, _ = load_run(args.checkpoint)
    eval_env = _fresh_env(agent.cfg)
    step = agent.loop.env_step
    v_true, ret = evaluate_true_value(agent, eval_env, args.episodes, step)
    v_hat = evaluate_value_estimate(agent, eval_env,
                                    agent.cfg.run.eval_value_samples, step)
    print(f"checkpoint: {args.checkpoint} (env step {step})")
    print(f"  mean return          = {ret:.6g}")
    print(f"  true value (MC)      = {v_true:.6g}")
    print(f"  value estimate       = {v_hat:.6g}")
    print(f"  overestimation ratio = {error_ratio(v_hat, v_true):.6g}")
    return 0


def _fresh_env(cfg):
    from .harness import build_env

    return build_env(cfg)


def cmd_theory_check(args) -> int:
    from .theory import THEOREM_SWEEPS

    keys = list(THEOREM_SWEEPS) if args.theorem == "all" else [args.theorem]
    failures = 0
    for key in keys:
        label, sweep = THEOREM_SWEEPS[key]
        t0 = time.time()
        reports = sweep(args.mdps) if args.mdps else sweep()
        dt = time.time() - t0
        failed = sum(not r.holds for r in reports)
        failures += failed
        worst = min(r.slack for r in reports)
        status = "ok" if failed == 0 else "FAILED"
        print(f"[{status}] {label}: {len(reports)} checks, {failed} "
              f"violations, min slack {worst:.3e}, {dt:.2f}s")
    return 0 if failures == 0 else 1


def cmd_toy_graph(args) -> int:
    from .theory import graph_world_mismatch

    rep = graph_world_mismatch(delta=args.delta, episodes=args.episodes)
    print(f"delta = {rep.delta}, episodes = {rep.episodes}")
    print(f"  lookahead (left start) visited poor terminal: "
          f"{rep.poor_visited_by_lookahead}")
    print(f"  residual error at poor terminal: {rep.residual_error}")
    print(f"  greedy agent first visit episode: "
          f"{rep.greedy_first_visit_episode}")
    print(f"  right-start action before/after correction: "
          f"{rep.right_action_before} / {rep.right_action_after}")
    print(f"  lookahead path (episode 1): {rep.lookahead_paths[0]}")
    print(f"  greedy path (episode 1): {rep.greedy_path}")
    return 0


def _sweep_axis(args):
    if (args.betas is None) == (args.horizons is None):
        raise ConfigurationError(
            "ablate needs exactly one of --betas or --horizons")
    if args.betas is not None:
        runs = []
        for token in args.betas.split(","):
            token = token.strip()
            if token == "bc":
                runs.append(("bc", [("run.variant", "bc", 0)]))
            else:
                try:
                    value = float(token)
                except ValueError:
                    raise ConfigurationError(
                        f"--betas entry {token!r} is neither a number nor 'bc'")
                variant = "baseline-b0" if value == 0.0 else "constrained"
                runs.append((f"beta-{token}",
                             [("run.variant", variant, 0),
                              ("policy.beta", token, 0)]))
        return runs
    runs = []
    for token in args.horizons.split(","):
        token = token.strip()
        if not token.isdigit():
            raise ConfigurationError(
                f"--horizons entry {token!r} is not a positive integer")
        runs.append((f"h-{token}", [("planner.horizon", token, 0)]))
    return runs


def cmd_ablate(args) -> int:
    from .config import apply_overrides, load_config
    from .harness import run_experiment
    from .plots import emit_plots

    runs = _sweep_axis(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    root = args.out or os.path.join(
        os.path.dirname(os.path.abspath(args.config)), "ablation")
    csv_paths = []
    for label, overrides in runs:
        for seed in seeds:
            cfg = load_config(args.config)
            apply_overrides(cfg, overrides)
            cfg.run.seed = seed
            cfg.run.out_dir = os.path.join(root, f"{label}-seed{seed}")
            cfg.validate()
            report = run_experiment(cfg)
            csv_paths.append(report.metrics_path)
            print(f"[done] {label} seed {seed}: "
                  f"final return {report.summary['final_eval_return']}, "
                  f"final ratio {report.summary['final_ratio']}")
    written = emit_plots(csv_paths, os.path.join(root, "plots"))
    for path in written:
        print(f"[plot] {path}")
    return 0


def cmd_plot(args) -> int:
    from .plots import emit_plots

    for path in emit_plots(args.inputs, args.out):
        print(f"[plot] {path}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "theory-check": cmd_theory_check,
    "toy-graph": cmd_toy_graph,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except HANDLED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
