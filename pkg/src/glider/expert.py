"""Toy frozen base model and LoRA expert modules.

The base model is a stack of ``m`` dense d×d linear modules with tanh between
them (none after the last). Every linear module is a site where an expert can
attach a low-rank update. All forward helpers accept a single vector of shape
``(d,)`` or a batch of row vectors ``(n, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimMismatch, MissingGate

NONLINEARITY = "tanh"


@dataclass(frozen=True)
class ToyBaseModel:
    d: int
    m: int
    seed: int
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    nonlinearity: str = NONLINEARITY

    @classmethod
    def build(cls, d: int = 16, m: int = 4, seed: int = 0) -> "ToyBaseModel":
        if m < 1 or d < 2:
            raise ValueError(f"need m >= 1 and d >= 2, got m={m}, d={d}")
        rng = np.random.default_rng(seed)
        scale = np.sqrt(3.0 / d)  # unit variance per output coordinate
        weights, biases = [], []
        for _ in range(m):
            weights.append(rng.uniform(-1.0, 1.0, size=(d, d)) * scale)
            biases.append(rng.uniform(-1.0, 1.0, size=d) / np.sqrt(d))
        for arr in weights + biases:
            arr.setflags(write=False)
        return cls(d=d, m=m, seed=seed, weights=tuple(weights), biases=tuple(biases))

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in self.weights + self.biases:
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass
class LoraModule:
    A: np.ndarray  # r × d
    B: np.ndarray  # d × r
    lora_scaling: float = 1.0
    gate: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        if self.A.ndim != 2 or self.B.ndim != 2:
            raise DimMismatch("A and B must be matrices")
        r, d_in = self.A.shape
        d_out, r_b = self.B.shape
        if r != r_b:
            raise DimMismatch(f"rank mismatch: A has {r} rows, B has {r_b} columns")
        if r < 1 or r > min(d_in, d_out):
            raise DimMismatch(f"rank {r} outside [1, {min(d_in, d_out)}]")
        if self.gate is not None:
            self.gate = np.asarray(self.gate, dtype=np.float64)
            if self.gate.shape != (d_in,):
                raise DimMismatch(f"gate must have shape ({d_in},), got {self.gate.shape}")

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def scale(self) -> float:
        return self.lora_scaling / self.rank

    def delta(self, u: np.ndarray) -> np.ndarray:
        """(α_L/r)·B A u, row-vector convention."""
        return self.scale * ((u @ self.A.T) @ self.B.T)

    def delta_weight(self) -> np.ndarray:
        return self.scale * (self.B @ self.A)

    def copy(self) -> "LoraModule":
        return LoraModule(
            self.A.copy(), self.B.copy(), self.lora_scaling, None if self.gate is None else self.gate.copy()
        )


@dataclass
class ExpertModel:
    name: str
    modules: list[LoraModule]
    global_vector: np.ndarray | None = None
    task_description: str = ""
    metadata: dict = field(default_factory=dict)

    def copy(self) -> "ExpertModel":
        return ExpertModel(
            self.name,
            [mod.copy() for mod in self.modules],
            None if self.global_vector is None else self.global_vector.copy(),
            self.task_description,
            dict(self.metadata),
        )

    def checksum(self, include_gates: bool = True) -> str:
        import hashlib

        h = hashlib.sha256()
        for mod in self.modules:
            parts = [mod.A, mod.B]
            if include_gates and mod.gate is not None:
                parts.append(mod.gate)
            for arr in parts:
                h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def init_expert(base: ToyBaseModel, name: str, rank: int, rng: np.random.Generator, lora_scaling: float = 1.0) -> ExpertModel:
    """Standard LoRA init: A random, B zero, so the adapter starts as a no-op."""
    modules = []
    for W in base.weights:
        d_out, d_in = W.shape
        A = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(rank, d_in))
        B = np.zeros((d_out, rank))
        modules.append(LoraModule(A, B, lora_scaling))
    return ExpertModel(name=name, modules=modules)


def _check_input(W: np.ndarray, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != W.shape[1]:
        raise DimMismatch(f"input dim {u.shape[-1]} does not match module width {W.shape[1]}")
    return u


def lora_forward(W: np.ndarray, mod: LoraModule, u) -> np.ndarray:
    """W u + (α_L/r)·B A u."""
    u = _check_input(W, u)
    if mod.A.shape[1] != W.shape[1] or mod.B.shape[0] != W.shape[0]:
        raise DimMismatch("LoRA shapes do not match host layer")
    return u @ W.T + mod.delta(u)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def gated_forward(W: np.ndarray, mod: LoraModule, u) -> np.ndarray:
    """W u + σ(vᵀu)·(α_L/r)·B A u."""
    if mod.gate is None:
        raise MissingGate("module has no gate vector")
    u = _check_input(W, u)
    g = sigmoid(u @ mod.gate)
    return u @ W.T + np.expand_dims(g, -1) * mod.delta(u)


ModuleFn = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


def run_layers(base: ToyBaseModel, u, module_fn: ModuleFn) -> tuple[np.ndarray, list[np.ndarray]]:
    """Push ``u`` through the base stack, delegating each linear module to ``module_fn``.

    ``module_fn(layer, W, h)`` returns the module output without bias.
    Returns the final output and the list of inputs seen by each module.
    """
    h = np.asarray(u, dtype=np.float64)
    if h.shape[-1] != base.d:
        raise DimMismatch(f"input dim {h.shape[-1]} != model width {base.d}")
    activations = []
    for i, (W, b) in enumerate(zip(base.weights, base.biases)):
        activations.append(h)
        z = module_fn(i, W, h) + b
        h = np.tanh(z) if i < base.m - 1 else z
    return h, activations


def base_forward(model: ToyBaseModel, u) -> tuple[np.ndarray, list[np.ndarray]]:
    return run_layers(model, u, lambda i, W, h: h @ W.T)


def expert_forward(base: ToyBaseModel, expert: ExpertModel, u, gated: bool = False) -> np.ndarray:
    """Base model with one expert's adapter attached at every module."""
    if len(expert.modules) != base.m:
        raise DimMismatch(f"expert {expert.name!r} has {len(expert.modules)} modules, base has {base.m}")
    fwd = gated_forward if gated else lora_forward
    out, _ = run_layers(base, u, lambda i, W, h: fwd(W, expert.modules[i], h))
    return out
