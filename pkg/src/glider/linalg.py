"""Small dense kernels used by the routers and the Arrow baseline.

Everything here is a pure function over numpy arrays. Inputs are validated
for finiteness; degenerate inputs (constant vectors, zero norms) raise
instead of silently producing NaNs.
"""

from __future__ import annotations

import numpy as np

from .errors import BadK, BadP, DimMismatch, DimTooSmall, NoConvergence, NonFinite, ZeroNorm, ZeroVariance

EPS = 1e-12


def _vec(x, name="x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimMismatch(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} contains non-finite entries")
    return arr


def _mat(m, name="M") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} contains non-finite entries")
    return arr


def standardize(x) -> np.ndarray:
    """Shift to zero mean and scale to unit (population) standard deviation."""
    x = _vec(x)
    if x.size < 2:
        raise DimTooSmall(f"standardize needs dim >= 2, got {x.size}")
    mu = x.mean()
    sd = np.sqrt(np.mean((x - mu) ** 2))
    if sd <= EPS:
        raise ZeroVariance("cannot standardize a constant vector")
    return (x - mu) / sd


def standardize_rows(X) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise standardize; returns (standardized, ok_mask).

    Rows with zero variance come back as zeros with ok_mask False, so callers
    can decide how to treat them without a per-row exception.
    """
    X = _mat(X, "X")
    if X.shape[1] < 2:
        raise DimTooSmall(f"standardize needs dim >= 2, got {X.shape[1]}")
    mu = X.mean(axis=1, keepdims=True)
    centered = X - mu
    sd = np.sqrt(np.mean(centered**2, axis=1))
    ok = sd > EPS
    out = np.zeros_like(X)
    out[ok] = centered[ok] / sd[ok, None]
    return out, ok


def cosine_sim(a, b) -> float:
    a = _vec(a, "a")
    b = _vec(b, "b")
    if a.shape != b.shape:
        raise DimMismatch(f"cosine_sim dims differ: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na <= EPS or nb <= EPS:
        raise ZeroNorm("cosine_sim of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def rowwise_cosine(M, x) -> np.ndarray:
    """Cosine similarity between every row of ``M`` and ``x``."""
    M = _mat(M)
    x = _vec(x)
    if M.shape[1] != x.size:
        raise DimMismatch(f"matrix has {M.shape[1]} columns but vector has dim {x.size}")
    row_norms = np.linalg.norm(M, axis=1)
    bad = np.flatnonzero(row_norms <= EPS)
    if bad.size:
        raise ZeroNorm(f"row {int(bad[0])} has zero norm", row=int(bad[0]))
    nx = np.linalg.norm(x)
    if nx <= EPS:
        raise ZeroNorm("query vector has zero norm")
    return np.clip((M @ x) / (row_norms * nx), -1.0, 1.0)


def softmax(s) -> np.ndarray:
    s = _vec(s, "s")
    z = np.exp(s - s.max())
    return z / z.sum()


def softmax_rows(S: np.ndarray) -> np.ndarray:
    z = np.exp(S - S.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def top_k_indices(s, k: int) -> np.ndarray:
    """Indices of the k largest entries, best first; ties go to the lower index."""
    s = _vec(s, "s")
    if not 1 <= k <= s.size:
        raise BadK(f"k must lie in [1, {s.size}], got {k}")
    return np.argsort(-s, kind="stable")[:k]


def top_p_indices(w, p: float) -> np.ndarray:
    """Shortest descending-probability prefix whose mass strictly exceeds ``p``."""
    w = _vec(w, "w")
    if not 0.0 < p < 1.0:
        raise BadP(f"top-p threshold must lie in (0, 1), got {p}")
    order = np.argsort(-w, kind="stable")
    mass = np.cumsum(w[order])
    above = np.flatnonzero(mass > p)
    n = int(above[0]) + 1 if above.size else w.size
    return order[:n]


def svd_top_right(M, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0) -> tuple[float, np.ndarray]:
    """Leading singular value and right singular vector by power iteration on MᵀM.

    The sign of the returned vector is arbitrary.
    """
    M = _mat(M)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if np.linalg.norm(M) <= EPS:
        raise ZeroNorm("svd_top_right of a zero matrix")
    gram = M.T @ M
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw <= EPS:
            # start vector landed in the null space
            v = rng.standard_normal(M.shape[1])
            v /= np.linalg.norm(v)
            continue
        w /= nw
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    else:
        raise NoConvergence(f"power iteration did not converge in {max_iter} steps")
    return float(np.linalg.norm(M @ v)), v
