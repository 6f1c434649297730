"""Synthetic held-in / held-out benchmark, evaluation across modes, and ablation sweeps.

Held-in tasks each get a trained expert. Held-out tasks use a convex mixture
of two held-in target maps on a fresh input region, so no single expert
covers them. Every task renders its samples as prompted text whose first
line is the task's own template sentence; that is what the description
model sees when it is asked to summarise three examples.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import baselines
from .errors import TooFewTasks
from .expert import ExpertModel, ToyBaseModel
from .pool import ExpertPool
from .router import (
    RoutingConfig,
    RoutingTrace,
    alpha_scale,
    arrow_forward,
    glider_forward,
    global_scores,
    phatgoose_forward,
)
from .semantic import Embedder, LLMClient, MockEmbedder, MockLLMClient, make_global_vector
from .training import SyntheticTask, TrainConfig, sample_batch, train_gate, train_lora

logger = logging.getLogger(__name__)

ROUTED_MODES = ("glider", "phatgoose", "arrow")
ALL_MODES = ("glider", "phatgoose", "arrow", "merge", "lorahub", "oracle")
ALPHA_GRID = (1, 3, 10, 100, 1000, 3000)
TOPK_GRID = (1, 2, 3)
TOPP_GRID = (0.25, 0.5, 0.75)

CENTER_SCALE = 3.0
INPUT_SPREAD = 1.0

_SKILLS = (
    "rotation-like mixing of coordinates",
    "axis-aligned rescaling",
    "shearing between feature pairs",
    "sign flips of selected features",
    "projection onto a low-dimensional subspace",
    "cyclic permutation of features",
    "reflection across a hyperplane",
    "contraction toward the origin",
    "expansion along principal directions",
    "cross-feature interaction weighting",
)


@dataclass(frozen=True)
class SuiteConfig:
    n_experts: int = 8
    n_held_out: int = 4
    d: int = 16
    m: int = 4
    seed: int = 0


@dataclass
class BenchmarkSuite:
    held_in: list[SyntheticTask]
    held_out: list[SyntheticTask]
    seed: int
    parents: dict[str, tuple[str, str, float]] = field(default_factory=dict)

    @property
    def tasks(self) -> list[SyntheticTask]:
        return self.held_in + self.held_out

    def task(self, name: str) -> SyntheticTask:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(name)


def make_held_in_tasks(n: int, d: int = 16, seed: int = 0) -> list[SyntheticTask]:
    rng = np.random.default_rng([seed, 101])
    tasks = []
    for j in range(n):
        name = f"task-{j:02d}"
        skill = _SKILLS[j % len(_SKILLS)]
        text = f"Apply the {name} linear transformation to a vector of {d} numbers, which requires {skill}."
        tasks.append(
            SyntheticTask(
                name=name,
                target_map=rng.standard_normal((d, d)),
                input_center=CENTER_SCALE * rng.standard_normal(d),
                input_spread=INPUT_SPREAD,
                description_text=text,
                seed=seed,
            )
        )
    return tasks


def build_suite(pool_tasks: list[SyntheticTask], n_held_out: int, seed: int) -> BenchmarkSuite:
    """Held-out tasks mix two distinct held-in maps with weight in (0, 1) on a new input region."""
    if len(pool_tasks) < 2:
        raise TooFewTasks("need at least two held-in tasks to form mixtures")
    rng = np.random.default_rng([seed, 202])
    d = pool_tasks[0].input_center.size
    suite = BenchmarkSuite(held_in=list(pool_tasks), held_out=[], seed=seed)
    for h in range(n_held_out):
        i, j = sorted(rng.choice(len(pool_tasks), size=2, replace=False))
        lam = float(rng.uniform(0.2, 0.8))
        a, b = pool_tasks[i], pool_tasks[j]
        name = f"mix-{h:02d}"
        text = (
            f"Blend {lam:.2f} of {a.name} with {1 - lam:.2f} of {b.name} on inputs from a new region "
            f"({name}, suite {seed}), combining both skills."
        )
        suite.held_out.append(
            SyntheticTask(
                name=name,
                target_map=lam * a.target_map + (1.0 - lam) * b.target_map,
                input_center=CENTER_SCALE * rng.standard_normal(d),
                input_spread=INPUT_SPREAD,
                description_text=text,
                seed=seed,
            )
        )
        suite.parents[name] = (a.name, b.name, lam)
    return suite


def default_suite(seed: int = 0, cfg: SuiteConfig | None = None) -> BenchmarkSuite:
    cfg = cfg or SuiteConfig(seed=seed)
    return build_suite(make_held_in_tasks(cfg.n_experts, cfg.d, seed), cfg.n_held_out, seed)


def _fmt_vec(v: np.ndarray) -> str:
    return "[" + ", ".join(f"{x:.3f}" for x in v) + "]"


def render_examples(task: SyntheticTask, rng, n: int = 3) -> list[tuple[str, str]]:
    """Text (input, output) pairs; inputs carry the task's template line first."""
    X, Y = sample_batch(task, n, rng)
    return [(f"{task.description_text}\nx = {_fmt_vec(x)}", f"y = {_fmt_vec(y)}") for x, y in zip(X, Y)]


# -- contributor side --------------------------------------------------------


def train_expert(base: ToyBaseModel, task: SyntheticTask, cfg: TrainConfig, history: list | None = None) -> ExpertModel:
    """LoRA, then gate: the first two contributor steps."""
    expert = train_lora(base, task, cfg, history)
    return train_gate(expert, base, task, cfg, history)


def describe_expert(expert: ExpertModel, task: SyntheticTask, llm: LLMClient, embedder: Embedder, seed: int = 0) -> ExpertModel:
    rng = np.random.default_rng([seed, 303])
    g, text = make_global_vector(render_examples(task, rng), llm, embedder, origin="expert")
    expert.global_vector = g
    expert.task_description = text
    return expert


def build_pool(
    suite: BenchmarkSuite,
    base: ToyBaseModel,
    train_cfg: TrainConfig | None = None,
    llm: LLMClient | None = None,
    embedder: Embedder | None = None,
) -> ExpertPool:
    """Train and describe one expert per held-in task (mock LLM/embedder by default)."""
    train_cfg = train_cfg or TrainConfig()
    llm = llm or MockLLMClient()
    embedder = embedder or MockEmbedder()
    pool = ExpertPool(base=base)
    for j, task in enumerate(suite.held_in):
        cfg = replace(train_cfg, seed=train_cfg.seed * 1000 + j)
        expert = train_expert(base, task, cfg)
        describe_expert(expert, task, llm, embedder, seed=cfg.seed)
        pool.add_expert(expert)
    return pool


def default_pool(seed: int = 0, cfg: SuiteConfig | None = None, train_cfg: TrainConfig | None = None) -> tuple[ExpertPool, BenchmarkSuite]:
    cfg = cfg or SuiteConfig(seed=seed)
    suite = default_suite(seed, cfg)
    base = ToyBaseModel.build(cfg.d, cfg.m, seed)
    train_cfg = train_cfg or TrainConfig(seed=seed)
    return build_pool(suite, base, train_cfg), suite


# -- queries and evaluation --------------------------------------------------


@dataclass
class Query:
    tokens: np.ndarray
    targets: np.ndarray
    q_u: np.ndarray
    description: str


@dataclass
class TaskQueries:
    task: SyntheticTask
    split: str
    queries: list[Query]
    fewshot: tuple[np.ndarray, np.ndarray]

    @property
    def X(self) -> np.ndarray:
        return np.vstack([q.tokens for q in self.queries])

    @property
    def Y(self) -> np.ndarray:
        return np.vstack([q.targets for q in self.queries])


def make_queries(
    suite: BenchmarkSuite,
    llm: LLMClient | None = None,
    embedder: Embedder | None = None,
    n_queries: int = 8,
    tokens_per_query: int = 16,
    n_fewshot: int = 5,
    seed: int = 0,
) -> list[TaskQueries]:
    """Fresh evaluation queries; each query's embedding is computed exactly once here."""
    llm = llm or MockLLMClient()
    embedder = embedder or MockEmbedder()
    out = []
    for t_idx, task in enumerate(suite.tasks):
        split = "held_in" if t_idx < len(suite.held_in) else "held_out"
        rng = np.random.default_rng([seed, 404, t_idx])
        queries = []
        for _ in range(n_queries):
            X, Y = sample_batch(task, tokens_per_query, rng)
            q_u, text = make_global_vector(render_examples(task, rng), llm, embedder, origin="query")
            queries.append(Query(X, Y, q_u, text))
        fewshot = sample_batch(task, n_fewshot, rng)
        out.append(TaskQueries(task, split, queries, fewshot))
    return out


def _mse(pred, Y) -> float:
    return float(np.mean((pred - Y) ** 2))


def _routing_entropy(trace: RoutingTrace) -> float:
    ents = []
    for rec in trace.records:
        if rec.scores is None:
            continue
        z = np.exp(rec.scores - rec.scores.max())
        p = z / z.sum()
        nz = p[p > 0]
        ents.append(float(-(nz * np.log(nz)).sum()))
    return float(np.mean(ents)) if ents else float("nan")


def run_routed(pool: ExpertPool, mode: str, tq: TaskQueries, cfg: RoutingConfig) -> tuple[np.ndarray, RoutingTrace]:
    trace = RoutingTrace(pool.names, pool.base.m)
    outs = []
    for qid, q in enumerate(tq.queries):
        if mode == "glider":
            out, _ = glider_forward(pool, q.tokens, q.q_u, cfg, trace, qid)
        elif mode == "phatgoose":
            out, _ = phatgoose_forward(pool, q.tokens, cfg, trace, qid)
        elif mode == "arrow":
            out, _ = arrow_forward(pool, q.tokens, cfg, trace, qid)
        else:
            raise ValueError(f"{mode!r} is not a routed mode")
        outs.append(out)
    return np.vstack(outs), trace


@dataclass
class TaskResult:
    task: str
    split: str
    losses: dict[str, float]
    oracle_expert: str
    global_top1_rate: float
    routed_top1_rate: float
    s_glob_max: float
    alpha: float
    routing_entropy: float
    lorahub_weights: np.ndarray | None = None


@dataclass
class EvalReport:
    results: list[TaskResult]
    modes: tuple[str, ...]

    def split(self, name: str) -> list[TaskResult]:
        return [r for r in self.results if r.split == name]

    def mean_loss(self, split: str, mode: str) -> float:
        return float(np.mean([r.losses[mode] for r in self.split(split)]))

    def rows(self) -> list[dict]:
        rows = []
        for r in self.results:
            row = {"task": r.task, "split": r.split}
            row.update({f"loss_{m}": r.losses[m] for m in self.modes})
            row.update(
                oracle_expert=r.oracle_expert,
                global_top1_rate=r.global_top1_rate,
                routed_top1_rate=r.routed_top1_rate,
                s_glob_max=r.s_glob_max,
                alpha=r.alpha,
                routing_entropy=r.routing_entropy,
            )
            rows.append(row)
        return rows


def evaluate(
    pool: ExpertPool,
    suite: BenchmarkSuite,
    cfg: RoutingConfig | None = None,
    modes=ALL_MODES,
    queries: list[TaskQueries] | None = None,
    lorahub_budget: int = 100,
    seed: int = 0,
) -> EvalReport:
    """Per task and mode, MSE over the task's queries plus retrieval metrics.

    Retrieval is measured against the oracle expert of each task (best single
    expert on the same tokens): ``global_top1_rate`` is the share of queries
    whose highest global score is that expert, ``routed_top1_rate`` the share
    of (token, module) decisions whose first choice is that expert.
    """
    cfg = cfg or RoutingConfig()
    modes = tuple(modes)
    if queries is None:
        queries = make_queries(suite, seed=seed)
    glob = pool.routers()[1] if "glider" in modes else None
    results = []
    for t_idx, tq in enumerate(queries):
        X, Y = tq.X, tq.Y
        per_expert = baselines.expert_losses(pool, X, Y)
        oracle = int(np.argmin(per_expert))
        losses = {}
        traces = {}
        lh_w = None
        for mode in modes:
            if mode in ROUTED_MODES:
                pred, traces[mode] = run_routed(pool, mode, tq, cfg)
                losses[mode] = _mse(pred, Y)
            elif mode == "merge":
                losses[mode] = _mse(baselines.merge_forward(pool, X), Y)
            elif mode == "lorahub":
                lh_w, _ = baselines.lorahub_fit(pool, tq.fewshot, lorahub_budget, np.random.default_rng([seed, 505, t_idx]))
                losses[mode] = _mse(baselines.lorahub_forward(pool, lh_w, X), Y)
            elif mode == "oracle":
                losses[mode] = float(per_expert[oracle])
            else:
                raise ValueError(f"unknown mode {mode!r}")
        if glob is not None:
            s_globs = [global_scores(glob, q.q_u) for q in tq.queries]
            g_rate = float(np.mean([int(np.argmax(s)) == oracle for s in s_globs]))
            s_max = float(np.mean([np.max(s) for s in s_globs]))
            alpha = float(np.mean([alpha_scale(s, cfg) for s in s_globs]))
        else:
            g_rate = s_max = alpha = float("nan")
        tr = traces.get("glider")
        r_rate = float(np.mean([i == oracle for i in tr.top1()])) if tr else float("nan")
        results.append(
            TaskResult(
                task=tq.task.name,
                split=tq.split,
                losses=losses,
                oracle_expert=pool.names[oracle],
                global_top1_rate=g_rate,
                routed_top1_rate=r_rate,
                s_glob_max=s_max,
                alpha=alpha,
                routing_entropy=_routing_entropy(tr) if tr else float("nan"),
                lorahub_weights=lh_w,
            )
        )
    return EvalReport(results, modes)


def sweep_alpha(
    pool: ExpertPool,
    suite: BenchmarkSuite,
    alphas=ALPHA_GRID,
    queries: list[TaskQueries] | None = None,
    base_cfg: RoutingConfig | None = None,
    seed: int = 0,
) -> list[dict]:
    """GLIDER with the global scale pinned to each value in ``alphas``."""
    alphas = list(alphas)
    if not alphas:
        raise ValueError("alphas must be non-empty")
    base_cfg = base_cfg or RoutingConfig()
    if queries is None:
        queries = make_queries(suite, seed=seed)
    oracle = {tq.task.name: int(np.argmin(baselines.expert_losses(pool, tq.X, tq.Y))) for tq in queries}
    rows = []
    for a in alphas:
        cfg = replace(base_cfg, alpha_override=float(a))
        held = {"held_in": [], "held_out": []}
        rates = []
        for tq in queries:
            pred, trace = run_routed(pool, "glider", tq, cfg)
            held[tq.split].append(_mse(pred, tq.Y))
            if tq.split == "held_in":
                rates.append(np.mean([i == oracle[tq.task.name] for i in trace.top1()]))
        rows.append(
            {
                "alpha": float(a),
                "held_in_loss": float(np.mean(held["held_in"])),
                "held_out_loss": float(np.mean(held["held_out"])) if held["held_out"] else float("nan"),
                "held_in_retrieval": float(np.mean(rates)),
            }
        )
    return rows


def _strategy_label(k=None, p=None) -> str:
    return f"Top-{k}" if p is None else f"Top-{round(p * 100)}%"


def sweep_topk(
    pool: ExpertPool,
    suite: BenchmarkSuite,
    ks=TOPK_GRID,
    ps=TOPP_GRID,
    queries: list[TaskQueries] | None = None,
    base_cfg: RoutingConfig | None = None,
    seed: int = 0,
) -> list[dict]:
    """GLIDER under each top-k and top-p strategy (one row per strategy)."""
    base_cfg = base_cfg or RoutingConfig()
    if queries is None:
        queries = make_queries(suite, seed=seed)
    strategies = [(k, None) for k in ks] + [(base_cfg.k, p) for p in ps]
    rows = []
    for k, p in strategies:
        cfg = replace(base_cfg, k=int(k), top_p=p)
        held = {"held_in": [], "held_out": []}
        n_sel = []
        for tq in queries:
            pred, trace = run_routed(pool, "glider", tq, cfg)
            held[tq.split].append(_mse(pred, tq.Y))
            n_sel.extend(len(rec.indices) for rec in trace.records)
        rows.append(
            {
                "strategy": _strategy_label(k, p),
                "k": "" if p is not None else int(k),
                "top_p": "" if p is None else float(p),
                "held_in_loss": float(np.mean(held["held_in"])),
                "held_out_loss": float(np.mean(held["held_out"])) if held["held_out"] else float("nan"),
                "mean_experts": float(np.mean(n_sel)),
            }
        )
    return rows


def write_csv(rows: list[dict], path) -> None:
    """Deterministic CSV: columns in first-row order, floats via repr."""
    if not rows:
        raise ValueError("no rows to write")
    cols = list(rows[0])
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) and math.isfinite(v) else ("nan" if isinstance(v, float) else v) for v in (row[c] for c in cols)])
