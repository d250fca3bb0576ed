"""Command-line interface.

Subcommands: `search` (full run), `baseline` (budget-matched random search),
`eval` (score one genome string), `resume` (continue from a checkpoint), and
`gen-sbm` (emit synthetic dataset files).

Exit codes: 0 success, 2 config error, 3 data ingestion error, 4 budget
exhausted with a partial result written.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import SearchConfig, build_dataset, load_config
from .engine import evaluate_fitness
from .errors import CheckpointError, ConfigError, IngestionError, SplitError
from .genome import parse
from .graphdata import generate_sbm, write_dataset
from .search import (
    SearchDriver,
    run_random_baseline,
    write_outputs,
)
from .tuning import HyperparamConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGESTION = 3
EXIT_BUDGET = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="TOML config file")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--workers", type=int, help="parallel evaluation workers")
    parser.add_argument("--out", metavar="DIR", help="output directory")


def _add_ablation(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--no-bgtm", action="store_true",
        help="disable hyperparameter tuning; pin the space midpoint",
    )
    parser.add_argument(
        "--no-adaptive", action="store_true",
        help="disable stage switching; pin the exploitation triple",
    )
    parser.add_argument(
        "--restricted-space", action="store_true",
        help="shrink the gene alphabet to P1/T1",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evognas",
        description="Evolutionary architecture search for micro-scale GNNs",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_search = sub.add_parser("search", help="run the full architecture search")
    _add_common(p_search)
    _add_ablation(p_search)
    p_search.add_argument("--budget", type=int, help="evaluation budget cap")
    p_search.add_argument(
        "--checkpoint-every", type=int, default=0, metavar="N",
        help="write a checkpoint every N generations (0 = final only)",
    )

    p_base = sub.add_parser("baseline", help="budget-matched random search")
    _add_common(p_base)
    _add_ablation(p_base)
    p_base.add_argument(
        "--budget", type=int,
        help="evaluation count (default: the nominal uncached search budget)",
    )

    p_eval = sub.add_parser("eval", help="score one genome string")
    p_eval.add_argument("genome", metavar="GENOME", help="e.g. P1-T1-P1-T1")
    _add_common(p_eval)

    p_resume = sub.add_parser("resume", help="continue a checkpointed search")
    p_resume.add_argument("--checkpoint", required=True, metavar="PATH")
    p_resume.add_argument("--config", metavar="PATH",
                          help="config to verify against the checkpoint")
    p_resume.add_argument("--out", metavar="DIR")
    p_resume.add_argument("--checkpoint-every", type=int, default=0, metavar="N")

    p_gen = sub.add_parser("gen-sbm", help="emit synthetic dataset files")
    p_gen.add_argument("--out", required=True, metavar="DIR")
    p_gen.add_argument("--blocks", default="75,75,75,75",
                       help="comma-separated block sizes")
    p_gen.add_argument("--p-in", type=float, default=0.08)
    p_gen.add_argument("--p-out", type=float, default=0.005)
    p_gen.add_argument("--features", type=int, default=16)
    p_gen.add_argument("--noise", type=float, default=0.5)
    p_gen.add_argument("--mean-scale", type=float, default=1.0)
    p_gen.add_argument("--seed", type=int, default=0)
    return parser


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        out["workers"] = args.workers
    if getattr(args, "no_bgtm", False):
        out["disable_bgtm"] = True
    if getattr(args, "no_adaptive", False):
        out["disable_adaptive"] = True
    if getattr(args, "restricted_space", False):
        out["restricted_space"] = True
    if getattr(args, "budget", None) is not None:
        out["evaluation_budget"] = args.budget
    return out


def nominal_budget(cfg: SearchConfig) -> int:
    """Worst-case (cache-free) evaluation count of a full search run."""
    tunings = 1 + cfg.generations // cfg.tuning_interval
    trials = 0 if cfg.disable_bgtm else tunings * cfg.tuning_trials
    return cfg.population_size * (1 + cfg.generations) + trials


def _emit_result(result, cfg, out_dir) -> int:
    if out_dir:
        write_outputs(result, out_dir, cfg.space.names)
    payload = result.summary()
    payload["seconds"] = result.seconds
    del payload["generation_log"]
    del payload["trial_log"]
    print(json.dumps(payload, indent=2))
    return EXIT_BUDGET if result.budget_exhausted else EXIT_OK


def _cmd_search(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    checkpoint_path = None
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        checkpoint_path = os.path.join(args.out, "checkpoint.json")
    driver = SearchDriver(cfg, checkpoint_path=checkpoint_path,
                          checkpoint_every=args.checkpoint_every)
    result = driver.run()
    if checkpoint_path:
        driver.save_checkpoint(checkpoint_path)
    return _emit_result(result, cfg, args.out)


def _cmd_baseline(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    budget = args.budget
    if budget is None:
        budget = cfg.evaluation_budget or nominal_budget(cfg)
    result = run_random_baseline(cfg, budget)
    return _emit_result(result, cfg, args.out)


def _cmd_eval(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    try:
        genome = parse(args.genome)
    except ValueError as exc:
        raise ConfigError(str(exc))
    ds = build_dataset(cfg)
    point = cfg.space.midpoint()
    hp = HyperparamConfig.from_point(point)
    fitness = evaluate_fitness(
        genome, hp, ds, seed=cfg.seed,
        max_epochs=cfg.max_epochs, patience=cfg.patience,
    )
    print(
        json.dumps(
            {
                "genome": args.genome,
                "validation_macro_f1": fitness.macro_f1,
                "hyperparams": point,
                "seed": cfg.seed,
            },
            indent=2,
        )
    )
    return EXIT_OK


def _cmd_resume(args) -> int:
    expected = load_config(args.config) if args.config else None
    checkpoint_path = args.checkpoint
    driver = SearchDriver.from_checkpoint(
        checkpoint_path, expected=expected,
        checkpoint_path=checkpoint_path, checkpoint_every=args.checkpoint_every,
    )
    result = driver.run()
    driver.save_checkpoint(checkpoint_path)
    return _emit_result(result, driver.cfg, args.out)


def _cmd_gen_sbm(args) -> int:
    try:
        blocks = [int(b) for b in args.blocks.split(",") if b.strip()]
    except ValueError:
        raise ConfigError(f"malformed --blocks value {args.blocks!r}")
    ds = generate_sbm(
        blocks, args.p_in, args.p_out, args.features, args.noise,
        seed=args.seed, mean_scale=args.mean_scale,
    )
    paths = write_dataset(ds, args.out)
    print(json.dumps({"n_nodes": ds.n_nodes, "n_edges": len(ds.edges), **paths},
                     indent=2))
    return EXIT_OK


_COMMANDS = {
    "search": _cmd_search,
    "baseline": _cmd_baseline,
    "eval": _cmd_eval,
    "resume": _cmd_resume,
    "gen-sbm": _cmd_gen_sbm,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, CheckpointError, SplitError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGESTION


if __name__ == "__main__":
    sys.exit(main())
