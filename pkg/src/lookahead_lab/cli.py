"""Command-line entry point: ``lookahead-lab {plan,learn,eval,claims,plot}``.

Exit status is 0 on success, 1 on user error (bad flags, config or input
files) and 2 on internal errors.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from .harness import (
    AGENTS,
    ExperimentConfig,
    UserError,
    claims_csv,
    emit_plot,
    evaluate_rows,
    plan_document,
    reproduce_claims,
    run_experiment,
)
from .mdp import save_mdp

ENV_KINDS = {"claim1": "claim1_tree", "claim2": "claim2_tree_and_line", "random": "random", "delayed": "delayed"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_env_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("environment")
    g.add_argument("--env", choices=[*ENV_KINDS, "file"], help="environment kind (file: load --mdp)")
    g.add_argument("--mdp", metavar="PATH", help="MDP JSON file, used with --env file")
    g.add_argument("--A", type=int, help="number of actions")
    g.add_argument("--ell", type=int, help="lookahead range")
    g.add_argument("--H", type=int, help="horizon")
    g.add_argument("--S", type=int, help="number of states (random / delayed base)")
    g.add_argument("--density", type=int, help="transition support size (random)")
    g.add_argument("--env-seed", type=int, help="environment generator seed (random / delayed)")
    g.add_argument("--case", choices=["auto", "VB_gt", "VD_gt", "equal"], help="claim2 case selector")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="experiment config JSON (flags override its fields)")
    p.add_argument("--exact-cap", type=int, help="max joint outcomes for exact enumeration")
    p.add_argument("--mc-samples", type=int, help="Monte-Carlo lookahead samples per batch start")
    _add_env_flags(p)


def _add_seeds(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--seeds", type=int, metavar="N", help="use seeds 0..N-1")
    g.add_argument("--seed-list", metavar="a,b,c", help="comma-separated explicit seeds")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lookahead-lab", description="Adaptive batching with multi-step lookahead.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("plan", help="plan an optimal or fixed-schedule batching policy")
    _add_common(p)
    p.add_argument("--agent", choices=["optimal_abp", "fixed_batching"], help="planner (default optimal_abp)")
    p.add_argument("--schedule", metavar="B|b1,b2,...", help="fixed batching: constant length or explicit lengths")
    p.add_argument("--save-mdp", metavar="PATH", help="also write the environment as MDP JSON")
    p.add_argument("--out", required=True, metavar="PATH", help="output JSON with V, B and label")

    p = sub.add_parser("learn", help="run the optimistic learner and record regret")
    _add_common(p)
    _add_seeds(p)
    p.add_argument("--K", type=int, help="episodes per seed")
    p.add_argument("--delta", type=float, help="confidence parameter in (0, 1)")
    p.add_argument("--eval-interval", type=int, help="exact evaluation every N episodes (0: realized only)")
    p.add_argument("--workers", type=int, help="parallel seed workers (overridden by $LOOKAHEAD_LAB_WORKERS)")
    p.add_argument("--out", required=True, metavar="PATH",
                   help="regret CSV; PATH.summary.json and PATH.timing.json are written alongside")

    p = sub.add_parser("eval", help="evaluate baseline agents by exact enumeration or Monte Carlo")
    _add_common(p)
    _add_seeds(p)
    p.add_argument("--agent", choices=list(AGENTS[1:]), action="append",
                   help="agent to evaluate (repeatable; default all)")
    p.add_argument("--schedule", metavar="B|b1,b2,...", help="fixed batching schedule")
    p.add_argument("--episodes", type=int, help="Monte-Carlo episodes")
    p.add_argument("--out", required=True, metavar="PATH", help="output JSON list of rows")

    p = sub.add_parser("claims", help="reproduce the counterexample claims table")
    p.add_argument("--A", type=int, default=2, help="number of actions")
    p.add_argument("--ell", type=int, default=4, help="lookahead range (2 or 4)")
    p.add_argument("--H", type=int, help="horizon (default ell + 1)")
    p.add_argument("--episodes", type=int, default=100_000, help="Monte-Carlo episodes for agent values")
    p.add_argument("--exact-cap", type=int, default=1 << 17, help="max joint outcomes for exact enumeration")
    p.add_argument("--seed", type=int, default=0, help="Monte-Carlo seed")
    p.add_argument("--out", metavar="PATH", help="claims CSV (printed to stdout either way)")

    p = sub.add_parser("plot", help="render a regret CSV as SVG")
    p.add_argument("--in", dest="inp", required=True, metavar="PATH", help="regret CSV from learn")
    p.add_argument("--out", required=True, metavar="PATH", help="output SVG")
    p.add_argument("--sqrt-ref", action="store_true", help="overlay a c*sqrt(k) reference curve")
    return parser


def _parse_schedule(text: str):
    try:
        parts = [int(x) for x in text.split(",")]
    except ValueError:
        raise UserError(f"invalid schedule {text!r}") from None
    return parts[0] if len(parts) == 1 else parts


def config_from_args(args) -> ExperimentConfig:
    doc = ExperimentConfig.load(args.config).to_dict() if args.config else ExperimentConfig().to_dict()
    env = dict(doc["env"])
    if args.env == "file":
        if not args.mdp:
            raise UserError("--env file requires --mdp PATH")
        doc["mdp_path"] = args.mdp
    elif args.env is not None:
        env = {"kind": ENV_KINDS[args.env]}
        doc["mdp_path"] = None
    elif args.mdp:
        doc["mdp_path"] = args.mdp
    for flag, key in (("A", "A"), ("ell", "ell"), ("H", "H"), ("S", "S"), ("density", "density"),
                      ("env_seed", "seed"), ("case", "case")):
        v = getattr(args, flag, None)
        if v is not None:
            env[key] = v
    doc["env"] = env
    for flag in ("exact_cap", "mc_samples", "K", "delta", "eval_interval", "workers", "episodes"):
        v = getattr(args, flag, None)
        if v is not None:
            doc[flag] = v
    if getattr(args, "seeds", None) is not None:
        if args.seeds < 1:
            raise UserError("--seeds must be at least 1")
        doc["seeds"] = list(range(args.seeds))
    elif getattr(args, "seed_list", None):
        try:
            doc["seeds"] = [int(x) for x in args.seed_list.split(",")]
        except ValueError:
            raise UserError(f"invalid --seed-list {args.seed_list!r}") from None
    if getattr(args, "schedule", None):
        doc["schedule"] = _parse_schedule(args.schedule)
    agent = getattr(args, "agent", None)
    if isinstance(agent, str):
        doc["agent"] = agent
    return ExperimentConfig.from_dict(doc)


def _write_json(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def _dispatch(args) -> int:
    if args.command == "plan":
        cfg = config_from_args(args)
        if cfg.agent not in ("optimal_abp", "fixed_batching"):
            cfg.agent = "optimal_abp"
        if args.save_mdp:
            save_mdp(cfg.build_mdp(), args.save_mdp)
        _write_json(args.out, plan_document(cfg))
    elif args.command == "learn":
        cfg = config_from_args(args)
        summary = run_experiment(cfg, args.out)
        print(json.dumps(summary["final_regret_realized"] | {"seeds": summary["seeds"]}, sort_keys=True))
    elif args.command == "eval":
        cfg = config_from_args(args)
        rows = evaluate_rows(cfg, args.agent)
        for r in rows:
            print(json.dumps(r, sort_keys=True))
        _write_json(args.out, rows)
    elif args.command == "claims":
        rows = reproduce_claims(args.A, args.ell, args.H, args.episodes, args.seed, args.exact_cap)
        text = claims_csv(rows)
        if args.out:
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            Path(args.out).write_text(text)
        sys.stdout.write(text)
    elif args.command == "plot":
        emit_plot(args.inp, args.out, sqrt_ref=args.sqrt_ref)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _dispatch(args)
    except (UserError, ValueError, OSError) as e:
        print(f"lookahead-lab: error: {e}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
