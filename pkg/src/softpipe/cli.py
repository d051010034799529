"""Command-line entry points."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .dataset import load_csv
from .evaluator import PipelineEvaluator
from .operators import spec

DATA_DIR_ENV = "SOFTPIPE_DATA_DIR"


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, Path.home() / ".cache" / "softpipe"))


def _pipeline_names(p) -> list[str]:
    return [spec(a).name for a in p]


def cmd_run(args) -> int:
    from .bench import load_config, run_benchmark, rank_table

    overrides = {"output_dir": args.output_dir}
    if args.seeds:
        overrides["seeds"] = args.seeds
    if args.modes:
        overrides["modes"] = args.modes
    cfg = load_config(args.config, **overrides)
    if args.episodes:
        cfg.search = replace(cfg.search, episodes=args.episodes)
    rows, _ = run_benchmark(cfg)
    for r in rows:
        status = f"FAILED ({r.error})" if r.failed else f"{r.best_accuracy:.4f}"
        print(f"{r.dataset:>16} {r.mode:>24} seed={r.seed} best={status}")
    for mode, rank in rank_table([r for r in rows if not r.failed]).items():
        print(f"rank {mode}: {rank:.2f}")
    return 1 if any(r.failed for r in rows) else 0


def cmd_search(args) -> int:
    from .dataset import SplitSpec
    from .ltr import LTRModel
    from .policy import FusionWeights
    from .prior import Planner, PlannerConfig
    from .qvalue import make_q
    from .search import Components, SearchConfig, run_search

    raw = load_csv(args.data, args.target)
    cfg = SearchConfig(T=args.T, episodes=args.episodes, mode=args.mode, seed=args.seed,
                       epsilon=args.epsilon, eta=args.eta,
                       weights=FusionWeights(args.alpha, args.beta, args.gamma))
    planner = Planner(PlannerConfig(mode=args.planner, cache_dir=args.cache_dir,
                                    **({"endpoint": args.endpoint} if args.endpoint else {})))
    comp = Components(evaluator=PipelineEvaluator(raw, SplitSpec(seed=args.split_seed)),
                      planner=planner, q=make_q(args.q_backend),
                      ltr=LTRModel.load(args.ltr_model) if args.ltr_model else None)
    res = run_search(cfg, comp)
    print(json.dumps({"best_pipeline": res.best_pipeline,
                      "operators": _pipeline_names(res.best_pipeline),
                      "validation_accuracy": res.best_reward,
                      "test_accuracy": res.best_test_reward}, indent=2))
    return 0


def cmd_verify_theory(args) -> int:
    from .bench import verify_theory

    report = verify_theory(args.instances, args.seed)
    print(json.dumps(report, indent=2))
    ok = all(v["passes"] == v["instances"] for v in report.values())
    return 0 if ok else 1


def cmd_train_ltr(args) -> int:
    from .bench import load_bundled, oracle_experiences
    from .ltr import read_experiences, train_ranker

    if args.experiences:
        exps = list(read_experiences(args.experiences))
    else:
        ev = PipelineEvaluator(load_bundled(args.oracle))
        exps = oracle_experiences(ev, args.prefixes, tag=args.oracle)
    model = train_ranker(exps, n_trees=args.trees)
    model.save(args.out)
    print(f"trained {len(model.trees)} trees on {len(exps)} experiences; "
          f"loss {model.loss_history[0]:.4f} -> {model.loss_history[-1]:.4f}; saved to {args.out}")
    return 0


def cmd_fetch(args) -> int:
    from .bench import OPENML, fetch_openml

    out = Path(args.out_dir) if args.out_dir else data_dir()
    names = args.names or list(OPENML)
    status = 0
    for name in names:
        try:
            print(f"{name}: {fetch_openml(name, out)}")
        except Exception as exc:  # noqa: BLE001 - report and continue
            print(f"{name}: download failed ({exc})", file=sys.stderr)
            status = 1
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="softpipe", description="Pipeline search with fused value, ranker and prior.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a benchmark from a TOML config")
    r.add_argument("--config", help="TOML file (defaults to the bundled configuration)")
    r.add_argument("--output-dir")
    r.add_argument("--episodes", type=int)
    r.add_argument("--seeds", type=int, nargs="+")
    r.add_argument("--modes", nargs="+")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("search", help="search pipelines for one CSV dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--mode", default="softpipe")
    s.add_argument("--episodes", type=int, default=100)
    s.add_argument("--T", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--epsilon", type=float, default=0.1)
    s.add_argument("--eta", type=float, default=0.1)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--beta", type=float, default=2.0)
    s.add_argument("--gamma", type=float, default=2.0)
    s.add_argument("--q-backend", choices=("tabular", "network"), default="tabular")
    s.add_argument("--ltr-model")
    s.add_argument("--planner", choices=("heuristic", "remote", "replay"), default="heuristic")
    s.add_argument("--endpoint")
    s.add_argument("--cache-dir")
    s.set_defaults(func=cmd_search)

    v = sub.add_parser("verify-theory", help="numerically check the policy optimality and gap bound")
    v.add_argument("--instances", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify_theory)

    t = sub.add_parser("train-ltr", help="train the ranker from logged or oracle experiences")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--experiences", help="experience CSV")
    src.add_argument("--oracle", choices=("wine", "breast_cancer", "anes96"),
                     help="label one-step look-ahead pipelines on a bundled dataset")
    t.add_argument("--prefixes", type=int, default=6)
    t.add_argument("--trees", type=int, default=200)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_ltr)

    f = sub.add_parser("fetch-datasets", help="download optional OpenML datasets")
    f.add_argument("--out-dir", help=f"defaults to ${DATA_DIR_ENV} or ~/.cache/softpipe")
    f.add_argument("--names", nargs="+")
    f.set_defaults(func=cmd_fetch)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)
