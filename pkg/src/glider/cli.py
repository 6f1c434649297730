"""Command-line entry point.

Typical offline pipeline::

    glider train-expert --task 0 --n-experts 4 --out e0.json      # repeat per task
    glider describe e0.json e1.json e2.json e3.json --mock-llm --n-experts 4
    glider build-pool e0.json e1.json e2.json e3.json --out pool.json
    glider eval --pool pool.json --mock-llm --n-experts 4 --out report.csv
    glider route --pool pool.json --task task-00 --mock-llm --n-experts 4 --out trace.csv
    glider heatmap --trace trace.csv --oracle task-00 --out heat

Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import GliderError
from .expert import ToyBaseModel
from .harness import (
    ALL_MODES,
    ALPHA_GRID,
    TOPK_GRID,
    TOPP_GRID,
    SuiteConfig,
    default_suite,
    describe_expert,
    evaluate,
    make_queries,
    run_routed,
    sweep_alpha,
    sweep_topk,
    train_expert,
    write_csv,
)
from .heatmap import emit_heatmap
from .pool import ExpertPool, load_pool, save_pool
from .router import RoutingConfig, RoutingTrace
from .semantic import MockEmbedder, MockLLMClient, clients_from_env
from .training import TrainConfig, write_metrics_csv

logger = logging.getLogger("glider")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", help="key=value file whose keys mirror these flags")
    g.add_argument("--pool", help="pool file")
    g.add_argument("--out", help="output path")
    g.add_argument("--seed", type=int, default=0, help="suite / training seed (default 0)")
    g.add_argument("--n-experts", type=int, default=8, help="held-in tasks in the suite (default 8)")
    g.add_argument("--n-held-out", type=int, default=4, help="held-out mixture tasks (default 4)")
    g.add_argument("--mode", choices=ALL_MODES, default="glider")
    g.add_argument("--k", type=int, default=2)
    g.add_argument("--top-p", type=float, default=None)
    g.add_argument("--gamma", type=float, default=100.0)
    g.add_argument("--beta", type=float, default=3.0)
    g.add_argument("--threshold", type=float, default=0.8, help="global-score threshold p")
    g.add_argument("--mock-llm", action="store_true", help="offline mock description model and embedder")
    g.add_argument("--d-g", type=int, default=64, help="mock embedding dimension")
    g.add_argument("--llm-model", help="remote description model (or GLIDER_LLM_MODEL)")
    g.add_argument("--embed-model", help="remote embedding model (or GLIDER_EMBED_MODEL)")
    g.add_argument("--queries", type=int, default=8, help="queries per task")
    g.add_argument("--tokens", type=int, default=16, help="tokens per query")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="glider", description="Global + local expert routing over LoRA expert pools.")
    parser.add_argument("--version", action="version", version=f"glider {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("train-expert", parents=[common], help="train one expert (LoRA + gate) on a suite task")
    p.add_argument("--task", required=True, help="held-in task index or name")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--lora-steps", type=int, default=TrainConfig.lora_steps)
    p.add_argument("--gate-steps", type=int, default=TrainConfig.gate_steps)
    p.add_argument("--metrics", help="per-step loss CSV (default: <out>.metrics.csv)")

    p = sub.add_parser("describe", parents=[common], help="attach global routing vectors to expert files")
    p.add_argument("files", nargs="+")

    p = sub.add_parser("build-pool", parents=[common], help="merge expert files into one pool")
    p.add_argument("files", nargs="+")

    p = sub.add_parser("route", parents=[common], help="route queries of one task and write the trace CSV")
    p.add_argument("--task", required=True, help="task name (held-in or held-out)")

    p = sub.add_parser("eval", parents=[common], help="evaluate every mode on the synthetic suite")
    p.add_argument("--modes", default=",".join(ALL_MODES), help="comma-separated modes")

    p = sub.add_parser("sweep-alpha", parents=[common], help="fixed global scale ablation")
    p.add_argument("--alphas", type=_floats, default=list(ALPHA_GRID))

    p = sub.add_parser("sweep-topk", parents=[common], help="top-k / top-p routing ablation")
    p.add_argument("--ks", type=_ints, default=list(TOPK_GRID))
    p.add_argument("--ps", type=_floats, default=list(TOPP_GRID))

    p = sub.add_parser("heatmap", parents=[common], help="selection-frequency CSV + SVG from a trace CSV")
    p.add_argument("--trace", required=True)
    p.add_argument("--oracle", help="expert name to outline")
    p.add_argument("--title")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = {}
    for n, line in enumerate(Path(args.config).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{args.config}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        dest = key.lstrip("-").replace("-", "_")
        if not hasattr(args, dest):
            raise UsageError(f"{args.config}:{n}: unknown option {key!r}")
        values[dest] = value
    # command-line flags win over the file
    flat = []
    for dest, value in values.items():
        flag = "--" + dest.replace("_", "-")
        if dest == "mock_llm":
            if value.lower() in ("1", "true", "yes"):
                flat.append(flag)
        else:
            flat += [flag, value]
    return parser.parse_args([argv[0]] + flat + argv[1:])


def _routing_cfg(args) -> RoutingConfig:
    return RoutingConfig(p=args.threshold, gamma=args.gamma, beta=args.beta, k=args.k, top_p=args.top_p, mode=args.mode)


def _clients(args):
    if args.mock_llm:
        return MockLLMClient(), MockEmbedder(args.d_g)
    return clients_from_env(args.llm_model, args.embed_model)


def _suite(args, pool: ExpertPool | None = None):
    d = pool.base.d if pool is not None else getattr(args, "d", 16)
    suite = default_suite(args.seed, SuiteConfig(args.n_experts, args.n_held_out, d, 4, args.seed))
    if pool is not None:
        missing = [n for n in pool.names if n not in {t.name for t in suite.held_in}]
        if missing:
            raise GliderError(f"pool experts {missing} are not tasks of the suite (seed={args.seed}, n_experts={args.n_experts})")
        suite.held_in = [t for t in suite.held_in if t.name in pool.names]
    return suite


def _need(args, name: str):
    value = getattr(args, name)
    if not value:
        raise UsageError(f"--{name.replace('_', '-')} is required for {args.command}")
    return value


def cmd_train_expert(args) -> None:
    out = Path(_need(args, "out"))
    suite = default_suite(args.seed, SuiteConfig(args.n_experts, args.n_held_out, args.d, args.m, args.seed))
    names = [t.name for t in suite.held_in]
    if args.task.isdigit():
        idx = int(args.task)
        if idx >= len(names):
            raise UsageError(f"--task {idx} out of range (suite has {len(names)} held-in tasks)")
    elif args.task in names:
        idx = names.index(args.task)
    else:
        raise UsageError(f"unknown task {args.task!r}; choose from {names}")
    base = ToyBaseModel.build(args.d, args.m, args.seed)
    cfg = TrainConfig(lora_steps=args.lora_steps, gate_steps=args.gate_steps, rank=args.rank, seed=args.seed * 1000 + idx)
    history: list = []
    expert = train_expert(base, suite.held_in[idx], cfg, history)
    pool = ExpertPool(base=base)
    pool.add_expert(expert)
    save_pool(pool, out)
    write_metrics_csv(history, args.metrics or out.with_suffix(".metrics.csv"))
    logger.info("trained %s -> %s", expert.name, out)


def cmd_describe(args) -> None:
    if args.out and len(args.files) != 1:
        raise UsageError("--out is only allowed with a single input file")
    llm, embedder = _clients(args)
    for f in args.files:
        pool = load_pool(f)
        suite = _suite(args, pool)
        for expert in pool.experts:
            task = suite.task(expert.name)
            describe_expert(expert, task, llm, embedder, seed=args.seed * 1000 + pool.names.index(expert.name))
        pool.d_g = embedder.d_g
        pool._cache.clear()
        save_pool(pool, args.out or f)


def cmd_build_pool(args) -> None:
    out = _need(args, "out")
    pool = None
    for f in args.files:
        part = load_pool(f)
        if pool is None:
            pool = ExpertPool(base=part.base)
        elif (part.base.d, part.base.m, part.base.seed) != (pool.base.d, pool.base.m, pool.base.seed):
            raise GliderError(f"{f} was trained on a different base model")
        for e in part.experts:
            pool.add_expert(e)
    save_pool(pool, out)


def cmd_route(args) -> None:
    pool = load_pool(_need(args, "pool"))
    out = _need(args, "out")
    suite = _suite(args, pool)
    if args.task not in {t.name for t in suite.tasks}:
        raise UsageError(f"unknown task {args.task!r}")
    suite.held_in = [t for t in suite.held_in if t.name == args.task]
    suite.held_out = [t for t in suite.held_out if t.name == args.task]
    llm, embedder = _clients(args)
    (tq,) = make_queries(suite, llm, embedder, args.queries, args.tokens, seed=args.seed)
    mode = args.mode if args.mode in ("glider", "phatgoose", "arrow") else None
    if mode is None:
        raise UsageError("route supports --mode glider, phatgoose or arrow")
    _, trace = run_routed(pool, mode, tq, _routing_cfg(args))
    trace.to_csv(out)


def cmd_eval(args) -> None:
    pool = load_pool(_need(args, "pool"))
    out = _need(args, "out")
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    bad = [m for m in modes if m not in ALL_MODES]
    if bad:
        raise UsageError(f"unknown modes {bad}")
    suite = _suite(args, pool)
    llm, embedder = _clients(args)
    queries = make_queries(suite, llm, embedder, args.queries, args.tokens, seed=args.seed)
    report = evaluate(pool, suite, _routing_cfg(args), modes, queries, seed=args.seed)
    write_csv(report.rows(), out)


def cmd_sweep_alpha(args) -> None:
    pool = load_pool(_need(args, "pool"))
    suite = _suite(args, pool)
    llm, embedder = _clients(args)
    queries = make_queries(suite, llm, embedder, args.queries, args.tokens, seed=args.seed)
    if not args.alphas:
        raise UsageError("--alphas must list at least one value")
    write_csv(sweep_alpha(pool, suite, args.alphas, queries, _routing_cfg(args)), _need(args, "out"))


def cmd_sweep_topk(args) -> None:
    pool = load_pool(_need(args, "pool"))
    suite = _suite(args, pool)
    llm, embedder = _clients(args)
    queries = make_queries(suite, llm, embedder, args.queries, args.tokens, seed=args.seed)
    cfg = replace(_routing_cfg(args), top_p=None)
    write_csv(sweep_topk(pool, suite, args.ks, args.ps, queries, cfg), _need(args, "out"))


def cmd_heatmap(args) -> None:
    out = _need(args, "out")
    names = load_pool(args.pool).names if args.pool else None
    trace = RoutingTrace.from_csv(args.trace, names)
    emit_heatmap(trace, out, oracle=args.oracle, title=args.title)


COMMANDS = {
    "train-expert": cmd_train_expert,
    "describe": cmd_describe,
    "build-pool": cmd_build_pool,
    "route": cmd_route,
    "eval": cmd_eval,
    "sweep-alpha": cmd_sweep_alpha,
    "sweep-topk": cmd_sweep_topk,
    "heatmap": cmd_heatmap,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"glider {args.command}: {exc}", file=sys.stderr)
        return 1
    except (GliderError, OSError, ValueError, KeyError) as exc:
        print(f"glider {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
