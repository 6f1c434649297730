"""Builders for small random experts and pools shared by tests and fixture generation."""

from __future__ import annotations

import numpy as np

from glider.expert import ExpertModel, LoraModule, ToyBaseModel
from glider.pool import ExpertPool


def random_expert(rng, name, d, m, r=2, d_g=8, lora_scaling=1.0, with_global=True) -> ExpertModel:
    mods = [
        LoraModule(
            A=rng.standard_normal((r, d)),
            B=rng.standard_normal((d, r)),
            lora_scaling=lora_scaling,
            gate=rng.standard_normal(d),
        )
        for _ in range(m)
    ]
    g = None
    if with_global:
        g = rng.standard_normal(d_g)
        g /= np.linalg.norm(g)
    return ExpertModel(name=name, modules=mods, global_vector=g, task_description=f"description of {name}")


def random_pool(rng, N=3, d=4, m=2, r=2, d_g=8, seed=0) -> ExpertPool:
    pool = ExpertPool(base=ToyBaseModel.build(d, m, seed))
    for j in range(N):
        pool.add_expert(random_expert(rng, f"e{j}", d, m, r, d_g))
    return pool
