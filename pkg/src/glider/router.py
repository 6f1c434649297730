"""Aggregator-side routing over an expert pool.

GLIDER scores every (token, module) pair with

    s = alpha * s_glob + s_loc / sqrt(N)

where ``s_glob`` is the cosine between the query's description embedding and
each expert's global vector (computed once per query), ``s_loc`` the cosine
between the standardized token activation and each expert's standardized gate
vector, and ``alpha = gamma * [max(s_glob) > p] + beta``. The top-k experts
of ``softmax(s)`` are mixed into the module output with their raw softmax
weights. Phatgoose is the same router with the global term removed; Arrow
scores tokens by ``|<u, v1>|`` with ``v1`` the leading right singular vector
of each expert's ``BA``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linalg
from .errors import DimMismatch, MissingGate, MissingGlobal, ZeroVariance
from .expert import LoraModule, run_layers

MODES = ("glider", "phatgoose", "arrow", "merge", "lorahub", "oracle")


@dataclass(frozen=True)
class RoutingConfig:
    p: float = 0.8
    gamma: float = 100.0
    beta: float = 3.0
    k: int = 2
    top_p: float | None = None
    mode: str = "glider"
    alpha_override: float | None = None
    # ablation only: renormalise softmax over the selected experts
    softmax_after_topk: bool = False

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"threshold p must lie in (0, 1), got {self.p}")
        if self.gamma < 0 or self.beta < 0:
            raise ValueError("gamma and beta must be non-negative")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.top_p is not None and not 0.0 < self.top_p < 1.0:
            raise ValueError(f"top_p must lie in (0, 1), got {self.top_p}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.alpha_override is not None and self.alpha_override < 0:
            raise ValueError("alpha_override must be non-negative")


@dataclass(frozen=True)
class LocalRouter:
    """Per module, an N×d matrix of standardized gate vectors in pool order."""

    mats: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class GlobalRouter:
    """N×d_g matrix of unit-norm expert description embeddings."""

    G: np.ndarray


@dataclass(frozen=True)
class ArrowRouter:
    """Per module, an N×d matrix of leading right singular vectors of each expert's BA."""

    mats: tuple[np.ndarray, ...]


def build_local_router(pool) -> LocalRouter:
    if not pool.experts:
        raise ValueError("cannot build routers for an empty pool")
    mats = []
    for m in range(pool.base.m):
        rows = []
        for e in pool.experts:
            gate = e.modules[m].gate
            if gate is None:
                raise MissingGate(f"expert {e.name!r} has no gate at module {m}")
            try:
                rows.append(linalg.standardize(gate))
            except ZeroVariance as exc:
                raise ZeroVariance(f"expert {e.name!r} module {m}: {exc}") from exc
        mats.append(np.vstack(rows))
    return LocalRouter(tuple(mats))


def build_global_router(pool) -> GlobalRouter:
    if not pool.experts:
        raise ValueError("cannot build routers for an empty pool")
    rows = []
    for e in pool.experts:
        if e.global_vector is None:
            raise MissingGlobal(f"expert {e.name!r} has no global routing vector")
        rows.append(np.asarray(e.global_vector, dtype=np.float64))
    return GlobalRouter(np.vstack(rows))


def build_routers(pool) -> tuple[LocalRouter, GlobalRouter]:
    return build_local_router(pool), build_global_router(pool)


def build_arrow_router(pool, tol: float = 1e-10, max_iter: int = 10_000) -> ArrowRouter:
    mats = []
    for m in range(pool.base.m):
        rows = [linalg.svd_top_right(e.modules[m].B @ e.modules[m].A, tol, max_iter)[1] for e in pool.experts]
        mats.append(np.vstack(rows))
    return ArrowRouter(tuple(mats))


# -- scores ----------------------------------------------------------------


def global_scores(G, q_u) -> np.ndarray:
    G = G.G if isinstance(G, GlobalRouter) else G
    return linalg.rowwise_cosine(G, q_u)


def alpha_scale(s_glob, cfg: RoutingConfig) -> float:
    if cfg.alpha_override is not None:
        return float(cfg.alpha_override)
    hit = float(np.max(s_glob)) - cfg.p > 0
    return cfg.gamma * hit + cfg.beta


def combined_scores(s_glob, s_loc, cfg: RoutingConfig, N: int, alpha: float | None = None) -> np.ndarray:
    s_glob = np.asarray(s_glob, dtype=np.float64)
    s_loc = np.asarray(s_loc, dtype=np.float64)
    if s_glob.shape != (N,) or s_loc.shape != (N,):
        raise DimMismatch(f"score vectors must have shape ({N},), got {s_glob.shape} and {s_loc.shape}")
    if alpha is None:
        alpha = alpha_scale(s_glob, cfg)
    return alpha * s_glob + s_loc / math.sqrt(N)


def local_scores(L_m: np.ndarray, u) -> np.ndarray:
    """Cosine between the standardized token and each row; zeros for a constant token."""
    try:
        u_bar = linalg.standardize(u)
    except ZeroVariance:
        return np.zeros(L_m.shape[0])
    return linalg.rowwise_cosine(L_m, u_bar)


@dataclass(frozen=True)
class QueryContext:
    """Per-query routing state: global scores and the resulting scale."""

    s_glob: np.ndarray | None
    alpha: float

    @classmethod
    def for_query(cls, global_router: GlobalRouter | None, q_u, cfg: RoutingConfig) -> "QueryContext":
        if global_router is None or q_u is None:
            return cls(None, 0.0)
        s_glob = global_scores(global_router, q_u)
        return cls(s_glob, alpha_scale(s_glob, cfg))


def select_experts(s, cfg: RoutingConfig) -> tuple[np.ndarray, np.ndarray]:
    """Top-k (or top-p) selection over ``softmax(s)``; returns (indices, weights).

    Indices are ranked best first. Ranking uses ``s`` itself, which orders
    identically to its softmax but cannot collapse near-ties by rounding.
    """
    s = np.asarray(s, dtype=np.float64)
    probs = linalg.softmax(s)
    if cfg.top_p is not None:
        idx = linalg.top_p_indices(probs, cfg.top_p)
    else:
        idx = linalg.top_k_indices(s, min(cfg.k, s.size))
    weights = linalg.softmax(s[idx]) if cfg.softmax_after_topk else probs[idx]
    return idx, weights


def route_token(m: int, u, local_router: LocalRouter | None, ctx: QueryContext, cfg: RoutingConfig):
    """(E_top, weights, scores) for one token at module ``m``.

    Phatgoose routing is this call with a context carrying no global scores.
    """
    if local_router is None:
        raise MissingGate("local routing needs gate vectors")
    L_m = local_router.mats[m]
    N = L_m.shape[0]
    s_loc = local_scores(L_m, u)
    if ctx.s_glob is None:
        s = s_loc / math.sqrt(N)
    else:
        s = combined_scores(ctx.s_glob, s_loc, cfg, N, ctx.alpha)
    idx, weights = select_experts(s, cfg)
    return idx, weights, s


def arrow_route_token(m: int, u, arrow_router: ArrowRouter, cfg: RoutingConfig):
    s = np.abs(arrow_router.mats[m] @ np.asarray(u, dtype=np.float64))
    idx, weights = select_experts(s, cfg)
    return idx, weights, s


def moe_module_forward(W: np.ndarray, modules: list[LoraModule], E_top, weights, u) -> np.ndarray:
    """W u + sum of w_k (α_L/r) B_k A_k u over the selected experts, in index order."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != W.shape[1]:
        raise DimMismatch(f"input dim {u.shape[-1]} does not match module width {W.shape[1]}")
    out = u @ W.T
    for c, w in sorted(zip((int(i) for i in E_top), weights)):
        out = out + w * modules[c].delta(u)
    return out


# -- traces ----------------------------------------------------------------


@dataclass
class TraceRecord:
    query_id: int
    token_id: int
    module_id: int
    indices: tuple[int, ...]
    weights: tuple[float, ...]
    scores: np.ndarray | None = None


@dataclass
class RoutingTrace:
    expert_names: list[str]
    n_modules: int
    records: list[TraceRecord] = field(default_factory=list)
    s_glob: dict[int, np.ndarray | None] = field(default_factory=dict)
    alpha: dict[int, float | None] = field(default_factory=dict)

    def selection_counts(self) -> np.ndarray:
        """N × m matrix of how often each expert was selected at each module."""
        counts = np.zeros((len(self.expert_names), self.n_modules))
        for rec in self.records:
            for i in rec.indices:
                counts[i, rec.module_id] += 1
        return counts

    def tokens_per_module(self) -> np.ndarray:
        n = np.zeros(self.n_modules)
        for rec in self.records:
            n[rec.module_id] += 1
        return n

    def top1(self) -> list[int]:
        return [rec.indices[0] for rec in self.records]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["query_id", "token_id", "module_id", "expert_name", "weight", "s_glob_max", "alpha"])
            for rec in self.records:
                sg = self.s_glob.get(rec.query_id)
                sg_max = "" if sg is None else repr(float(np.max(sg)))
                alpha = self.alpha.get(rec.query_id)
                alpha_s = "" if alpha is None else repr(float(alpha))
                for i, w in zip(rec.indices, rec.weights):
                    writer.writerow([rec.query_id, rec.token_id, rec.module_id, self.expert_names[i], repr(float(w)), sg_max, alpha_s])

    @classmethod
    def from_csv(cls, path, expert_names: list[str] | None = None) -> "RoutingTrace":
        """Rebuild a trace (without scores) from its CSV export."""
        rows = list(csv.DictReader(Path(path).open(newline="")))
        if not rows:
            raise ValueError(f"trace file {path} has no rows")
        if expert_names is None:
            expert_names = sorted({r["expert_name"] for r in rows})
        pos = {n: i for i, n in enumerate(expert_names)}
        n_modules = 1 + max(int(r["module_id"]) for r in rows)
        trace = cls(list(expert_names), n_modules)
        grouped: dict[tuple[int, int, int], TraceRecord] = {}
        for r in rows:
            key = (int(r["query_id"]), int(r["token_id"]), int(r["module_id"]))
            rec = grouped.get(key)
            if rec is None:
                rec = grouped[key] = TraceRecord(*key, (), ())
                trace.records.append(rec)
            rec.indices += (pos[r["expert_name"]],)
            rec.weights += (float(r["weight"]),)
            trace.alpha[key[0]] = float(r["alpha"]) if r["alpha"] else None
        return trace


def _new_trace(pool) -> RoutingTrace:
    return RoutingTrace(pool.names, pool.base.m)


def _routed(pool, tokens, route_fn, trace: RoutingTrace, query_id: int) -> np.ndarray:
    """Run the base stack with per-token routed expert mixing at every module."""
    X = np.atleast_2d(np.asarray(tokens, dtype=np.float64))
    experts = pool.experts

    def module_fn(m, W, H):
        T = H.shape[0]
        dense = np.zeros((T, len(experts)))
        for t in range(T):
            idx, w, s = route_fn(m, H[t])
            dense[t, idx] = w
            trace.records.append(TraceRecord(query_id, t, m, tuple(int(i) for i in idx), tuple(float(x) for x in w), s))
        out = H @ W.T
        for c in range(len(experts)):
            col = dense[:, c]
            if np.any(col != 0.0):
                out = out + col[:, None] * experts[c].modules[m].delta(H)
        return out

    out, _ = run_layers(pool.base, X, module_fn)
    return out


def glider_forward(pool, query_tokens, q_u, cfg: RoutingConfig = RoutingConfig(), trace: RoutingTrace | None = None, query_id: int = 0):
    """Route one query (T×d tokens) with global + local scores; returns (outputs, trace)."""
    if trace is None:
        trace = _new_trace(pool)
    local, glob = pool.routers()
    ctx = QueryContext.for_query(glob, q_u, cfg)
    trace.s_glob[query_id] = ctx.s_glob
    trace.alpha[query_id] = ctx.alpha
    out = _routed(pool, query_tokens, lambda m, u: route_token(m, u, local, ctx, cfg), trace, query_id)
    return out, trace


def phatgoose_forward(pool, query_tokens, cfg: RoutingConfig = RoutingConfig(), trace: RoutingTrace | None = None, query_id: int = 0):
    if trace is None:
        trace = _new_trace(pool)
    local = pool.cached("local", build_local_router)
    ctx = QueryContext(None, 0.0)
    trace.s_glob[query_id] = None
    trace.alpha[query_id] = 0.0
    out = _routed(pool, query_tokens, lambda m, u: route_token(m, u, local, ctx, cfg), trace, query_id)
    return out, trace


def arrow_forward(pool, query_tokens, cfg: RoutingConfig = RoutingConfig(), trace: RoutingTrace | None = None, query_id: int = 0):
    if trace is None:
        trace = _new_trace(pool)
    arrow = pool.cached("arrow", build_arrow_router)
    trace.s_glob[query_id] = None
    trace.alpha[query_id] = None
    out = _routed(pool, query_tokens, lambda m, u: arrow_route_token(m, u, arrow, cfg), trace, query_id)
    return out, trace
