"""``micromacro`` command line.

Exit codes: 0 success, 1 usage error, 2 data / configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .evaluation import DEFAULT_K, evaluate, ideal_split_score
from .graphs import (GraphFormatError, generate_grid, generate_lobster, generate_triangle_grid,
                     load_dataset, save_dataset, save_dot, split_dataset)
from .model import sample_graphs
from .tensor import CheckpointError
from .trainer import ConfigError, TrainingDiverged, configs_from_dict, load_checkpoint, read_config, train, write_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRID_SIDE = (10, 19)  # rows, cols uniform in this range: 100 <= |V| < 400

log = logging.getLogger("micromacro")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# commands


def generate_graphs(kind: str, count: int, seed: int, backbone: int = 40, p1: float = 0.5, p2: float = 0.5,
                    min_nodes: int = 10, max_nodes: int = 100):
    rng = np.random.default_rng(seed)
    if kind == "lobster":
        return [generate_lobster(backbone, p1, p2, rng, min_nodes, max_nodes) for _ in range(count)]
    make = generate_grid if kind == "grid" else generate_triangle_grid
    lo, hi = GRID_SIDE
    return [make(*(int(v) for v in rng.integers(lo, hi + 1, size=2))) for _ in range(count)]


def cmd_generate_data(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    graphs = generate_graphs(args.kind, args.count, args.seed, args.backbone, args.p1, args.p2,
                             args.min_nodes, args.max_nodes)
    try:
        save_dataset(graphs, args.out)
        with open(Path(args.out) / "generate.cfg", "w") as fh:
            for key in ("kind", "count", "seed", "backbone", "p1", "p2", "min_nodes", "max_nodes"):
                fh.write(f"{key} = {getattr(args, key)}\n")
    except OSError as exc:
        raise DataError(f"cannot write dataset to {args.out}: {exc}") from exc
    print(f"wrote {len(graphs)} {args.kind} graphs to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = read_config(args.config)
    if args.epochs is not None:
        cfg["epochs"] = args.epochs
    graphs = load_dataset(cfg["dataset"])
    if not graphs:
        raise DataError(f"dataset {cfg['dataset']} is empty")
    model_cfg, train_cfg = configs_from_dict(cfg, graphs)
    cfg["n_max"] = model_cfg.n_max
    split = split_dataset(graphs, seed=int(cfg["split_seed"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.txt")
    for part in ("train", "validation", "test"):
        if getattr(split, part):
            save_dataset(getattr(split, part), out / part)
    result = train(split, model_cfg, train_cfg, out_dir=out)
    last = result.log.records[-1] if result.log.records else {}
    print(f"trained {train_cfg.label} for {train_cfg.epochs} epochs; final loss {last.get('loss', float('nan')):.4f}")
    return EXIT_OK


def cmd_sample(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    count = args.count
    if count is None:
        test_dir = Path(args.test) if args.test else Path(args.checkpoint).parent / "test"
        if not (test_dir / "manifest.txt").exists():
            raise UsageError("--count not given and no test split found next to the checkpoint (use --test)")
        count = len(load_dataset(test_dir))
    if count < 1:
        raise UsageError("--count must be >= 1")
    graphs = sample_graphs(params, count, np.random.default_rng(args.seed), args.mode)
    names = save_dataset(graphs, args.out)
    for g, name in zip(graphs, names):
        save_dot(g, Path(args.out) / name.replace(".txt", ".dot"))
    with open(Path(args.out) / "sample.cfg", "w") as fh:
        fh.write(f"checkpoint = {Path(args.checkpoint).resolve()}\ncount = {count}\n"
                 f"mode = {args.mode}\nseed = {args.seed}\n")
    print(f"wrote {count} sampled graphs to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.generated is None and not args.ideal:
        raise UsageError("evaluate needs GENERATED unless --ideal is given")
    test = load_dataset(args.test)
    try:
        if args.ideal:
            report = ideal_split_score(test, rng=args.seed, gnn_seed=args.seed, k=args.k)
            report.config["split_seed"] = args.seed
        else:
            generated = load_dataset(args.generated)
            if not generated or not test:
                raise DataError("both datasets must be non-empty")
            report = evaluate(generated, test, gnn_seed=args.seed, k=args.k)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    text = report.to_json(args.out)
    if args.out is None:
        print(text)
    else:
        print(f"wrote metric report to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="micromacro", description="GraphVAE with micro-macro training objectives.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("generate-data", help="write a synthetic dataset as edge lists")
    p.add_argument("--kind", required=True, choices=["grid", "tri-grid", "lobster"])
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backbone", type=int, default=40, help="lobster backbone length")
    p.add_argument("--p1", type=float, default=0.5, help="lobster first-level leaf probability")
    p.add_argument("--p2", type=float, default=0.5, help="lobster second-level leaf probability")
    p.add_argument("--min-nodes", type=int, default=10, help="lobster minimum size")
    p.add_argument("--max-nodes", type=int, default=100, help="lobster maximum size")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train from a key = value config file")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample graphs from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--count", type=int, help="number of graphs (default: size of the run's test split)")
    p.add_argument("--test", help="test dataset whose size sets the default count")
    p.add_argument("--mode", choices=["bernoulli", "threshold"], default="bernoulli")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="compare generated graphs with a test set")
    p.add_argument("generated", nargs="?")
    p.add_argument("test")
    p.add_argument("--ideal", action="store_true", help="score a random 50/50 split of TEST instead")
    p.add_argument("--seed", type=int, default=0, help="reference GNN and split seed")
    p.add_argument("--k", type=int, default=DEFAULT_K, help="neighbours for precision/recall")
    p.add_argument("--out", help="JSON report path (default: stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required (see --help)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigError, GraphFormatError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
