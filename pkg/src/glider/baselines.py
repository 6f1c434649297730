"""Non-routed comparison modes: uniform merging, LoRA Hub, and the oracle expert."""

from __future__ import annotations

import logging

import numpy as np

from .errors import ShapeMismatch
from .expert import expert_forward, run_layers

logger = logging.getLogger(__name__)


def _expert_deltas(pool) -> list[np.ndarray]:
    """Array of shape (N, d_out, d_in) per module with each expert's (α_L/r)·BA."""
    if not pool.experts:
        raise ValueError("pool is empty")
    per_module = []
    for m in range(pool.base.m):
        shapes = {(e.modules[m].B.shape[0], e.modules[m].A.shape[1]) for e in pool.experts}
        if len(shapes) != 1:
            raise ShapeMismatch(f"module {m} has heterogeneous expert shapes {sorted(shapes)}")
        per_module.append(np.stack([e.modules[m].delta_weight() for e in pool.experts]))
    return per_module


def merged_forward(base, deltas: list[np.ndarray], tokens) -> np.ndarray:
    """Base stack with a fixed additive weight update per module."""
    return run_layers(base, tokens, lambda m, W, h: h @ W.T + h @ deltas[m].T)[0]


def merge_forward(pool, query_tokens) -> np.ndarray:
    """Unweighted average of every expert's ΔW, applied to all tokens."""
    deltas = pool.cached("merge", lambda p: [d.sum(axis=0) / len(p) for d in _expert_deltas(p)])
    return merged_forward(pool.base, deltas, query_tokens)


def lorahub_deltas(pool, w) -> list[np.ndarray]:
    w = np.asarray(w, dtype=np.float64)
    stacks = pool.cached("expert_deltas", _expert_deltas)
    if w.shape != (len(pool),):
        raise ShapeMismatch(f"need {len(pool)} mixing coefficients, got shape {w.shape}")
    return [np.tensordot(w, stack, axes=1) for stack in stacks]


def lorahub_forward(pool, w, query_tokens) -> np.ndarray:
    return merged_forward(pool.base, lorahub_deltas(pool, w), query_tokens)


def lorahub_fit(
    pool,
    fewshot: tuple[np.ndarray, np.ndarray],
    budget: int,
    rng=None,
    sigma0: float = 0.5,
    bound: float = 1.5,
) -> tuple[np.ndarray, float]:
    """Gradient-free search for mixing coefficients on a few-shot batch.

    (1+1) evolution strategy with the one-fifth success rule, restarted from
    a random point in ``[-bound, bound]^N`` whenever the step size collapses.
    ``budget`` counts loss evaluations, the uniform starting point included.
    Returns the best coefficients found and their few-shot loss.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    X, Y = fewshot
    N = len(pool)

    def loss(w):
        return float(np.mean((lorahub_forward(pool, w, X) - Y) ** 2))

    x = np.full(N, 1.0 / N)
    fx = loss(x)
    best_w, best_f = x.copy(), fx
    evals = 1
    sigma = sigma0
    while evals < budget:
        y = np.clip(x + sigma * rng.standard_normal(N), -bound, bound)
        fy = loss(y)
        evals += 1
        if fy <= fx:
            x, fx = y, fy
            sigma *= 1.5
            if fy < best_f:
                best_w, best_f = y.copy(), fy
        else:
            sigma *= 1.5 ** -0.25
        if sigma < 1e-3 and evals < budget:
            x = rng.uniform(-bound, bound, N)
            fx = loss(x)
            evals += 1
            sigma = sigma0
            if fx < best_f:
                best_w, best_f = x.copy(), fx
    logger.debug("lorahub: best few-shot loss %.6g after %d evaluations", best_f, evals)
    return best_w, best_f


def expert_losses(pool, X, Y) -> np.ndarray:
    return np.array([np.mean((expert_forward(pool.base, e, X) - Y) ** 2) for e in pool.experts])


def oracle_select(pool, X, Y) -> int:
    """Index of the single expert with the lowest loss on (X, Y); ties go to the lower index."""
    return int(np.argmin(expert_losses(pool, X, Y)))
