"""Contributor-side training: LoRA experts first, then their gate vectors.

Gradients are hand-derived for the toy tanh stack and checked against central
finite differences by :func:`grad_check`.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import Diverged, MissingGate
from .expert import ExpertModel, LoraModule, ToyBaseModel, init_expert, sigmoid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticTask:
    name: str
    target_map: np.ndarray
    input_center: np.ndarray
    input_spread: float
    description_text: str
    seed: int = 0

    def __post_init__(self):
        if not self.input_spread > 0:
            raise ValueError("input_spread must be positive")


@dataclass(frozen=True)
class TrainConfig:
    lora_steps: int = 1000
    gate_steps: int = 200  # 100 leaves gates unsaturated at d=16; see README
    learning_rate: float = 5e-3
    warmup_ratio: float = 0.06
    batch_size: int = 32
    weight_decay: float = 0.01
    rank: int = 4
    lora_scaling: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lora_steps < 0 or self.gate_steps < 0:
            raise ValueError("step counts must be non-negative")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValueError("warmup_ratio must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def sample_batch(task: SyntheticTask, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` inputs around the task center and their linear targets, as (n, d) arrays."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _as_rng(rng)
    d = task.input_center.size
    X = task.input_center + task.input_spread * rng.standard_normal((n, d))
    return X, X @ task.target_map.T


# -- analytic forward / backward ---------------------------------------------


def _forward(base: ToyBaseModel, modules: list[LoraModule], X: np.ndarray, gated: bool):
    H = X
    cache = []
    for i, (W, b, mod) in enumerate(zip(base.weights, base.biases, modules)):
        P = H @ mod.A.T
        Q = P @ mod.B.T
        g = sigmoid(H @ mod.gate) if gated else np.ones(H.shape[0])
        Z = H @ W.T + mod.scale * (g[:, None] * Q) + b
        cache.append((H, P, Q, g))
        H = np.tanh(Z) if i < base.m - 1 else Z
    return H, cache


def loss_and_grads(
    base: ToyBaseModel,
    modules: list[LoraModule],
    X: np.ndarray,
    Y: np.ndarray,
    gated: bool = False,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean-squared error over batch and features plus gradients.

    Gradient keys are ``A{i}``, ``B{i}`` and, when ``gated``, ``v{i}``.
    """
    if gated and any(mod.gate is None for mod in modules):
        raise MissingGate("gated loss requires a gate on every module")
    out, cache = _forward(base, modules, X, gated)
    diff = out - Y
    loss = float(np.mean(diff**2))
    dZ = 2.0 * diff / diff.size
    grads = {}
    for i in reversed(range(base.m)):
        H, P, Q, g = cache[i]
        mod = modules[i]
        s = mod.scale
        gdZ = g[:, None] * dZ
        dP = s * (gdZ @ mod.B)
        grads[f"B{i}"] = s * (gdZ.T @ P)
        grads[f"A{i}"] = dP.T @ H
        dH = dZ @ base.weights[i] + dP @ mod.A
        if gated:
            da = s * np.sum(dZ * Q, axis=1) * g * (1.0 - g)
            grads[f"v{i}"] = H.T @ da
            dH = dH + np.outer(da, mod.gate)
        if i > 0:
            dZ = dH * (1.0 - H**2)
    return loss, grads


def mse(base: ToyBaseModel, expert: ExpertModel, X, Y, gated: bool = False) -> float:
    out, _ = _forward(base, expert.modules, np.asarray(X, dtype=np.float64), gated)
    return float(np.mean((out - Y) ** 2))


def grad_check(loss_fn, params: dict[str, np.ndarray], h: float = 1e-5, floor: float = 1e-8) -> float:
    """Max elementwise relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must return ``(loss, grads)`` with ``grads`` keyed like
    ``params``. Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"h must lie in [1e-6, 1e-3], got {h}")
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, analytic = loss_fn(work)
    worst = 0.0
    for key, arr in work.items():
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up, _ = loss_fn(work)
            arr[idx] = orig - h
            down, _ = loss_fn(work)
            arr[idx] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic[key][idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# -- optimisation ----------------------------------------------------------


class AdamW:
    """AdamW with decoupled weight decay; parameters are updated in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= lr * self.weight_decay * p
            p -= lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def warmup_lr(step: int, total: int, base_lr: float, warmup_ratio: float) -> float:
    """Linear warmup over ``ceil(warmup_ratio * total)`` steps, constant afterwards."""
    warm = math.ceil(warmup_ratio * total)
    if warm == 0 or step >= warm:
        return base_lr
    return base_lr * (step + 1) / warm


def _run(base, modules, task, cfg, steps, keys, gated, rng, history, phase):
    params = {}
    for i, mod in enumerate(modules):
        if "A" in keys:
            params[f"A{i}"] = mod.A
            params[f"B{i}"] = mod.B
        if "v" in keys:
            params[f"v{i}"] = mod.gate
    opt = AdamW(params, cfg.learning_rate, weight_decay=cfg.weight_decay)
    for step in range(steps):
        X, Y = sample_batch(task, cfg.batch_size, rng)
        loss, grads = loss_and_grads(base, modules, X, Y, gated=gated)
        if not np.isfinite(loss):
            raise Diverged(f"{phase} loss became non-finite at step {step} for task {task.name!r}")
        opt.step(grads, warmup_lr(step, steps, cfg.learning_rate, cfg.warmup_ratio))
        if history is not None:
            history.append((phase, step, loss))
    if not all(np.all(np.isfinite(p)) for p in params.values()):
        raise Diverged(f"{phase} parameters became non-finite for task {task.name!r}")


def train_lora(base: ToyBaseModel, task: SyntheticTask, cfg: TrainConfig, history: list | None = None) -> ExpertModel:
    """Fit one expert's LoRA modules to ``task`` with the base model frozen.

    ``history``, when given, receives ``("lora", step, loss)`` tuples.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    expert = init_expert(base, task.name, cfg.rank, rng, cfg.lora_scaling)
    _run(base, expert.modules, task, cfg, cfg.lora_steps, ("A",), False, rng, history, "lora")
    logger.debug("trained LoRA for %s (%d steps)", task.name, cfg.lora_steps)
    return expert


def train_gate(expert: ExpertModel, base: ToyBaseModel, task: SyntheticTask, cfg: TrainConfig, history: list | None = None) -> ExpertModel:
    """Train a zero-initialised gate vector per module through the gated forward.

    Returns a new expert; A and B are copied and never updated.
    """
    trained = expert.copy()
    for mod in trained.modules:
        mod.gate = np.zeros(mod.A.shape[1])
    rng = np.random.default_rng([cfg.seed, 1])
    _run(base, trained.modules, task, cfg, cfg.gate_steps, ("v",), True, rng, history, "gate")
    return trained


def write_metrics_csv(history: list, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["phase", "step", "loss"])
        for phase, step, loss in history:
            writer.writerow([phase, step, repr(float(loss))])
