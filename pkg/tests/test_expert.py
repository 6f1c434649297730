import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from glider.errors import DimMismatch, MissingGate
from glider.expert import (
    ExpertModel,
    LoraModule,
    ToyBaseModel,
    base_forward,
    expert_forward,
    gated_forward,
    init_expert,
    lora_forward,
)

I2 = np.eye(2)
B1 = np.array([[1.0], [0.0]])
A1 = np.array([[0.0, 1.0]])


def test_base_is_seeded_and_read_only():
    a, b = ToyBaseModel.build(8, 3, 11), ToyBaseModel.build(8, 3, 11)
    assert a.checksum() == b.checksum()
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert ToyBaseModel.build(8, 3, 12).checksum() != a.checksum()
    with pytest.raises(ValueError):
        a.weights[0][0, 0] = 1.0


def test_base_forward_zero_and_identity():
    zero = ToyBaseModel(2, 2, 0, (np.zeros((2, 2)),) * 2, (np.zeros(2),) * 2)
    out, acts = base_forward(zero, [3.0, -1.0])
    assert np.all(out == 0) and len(acts) == 2
    ident = ToyBaseModel(2, 1, 0, (I2,), (np.zeros(2),))
    out, _ = base_forward(ident, [1.0, 2.0])
    assert out.tolist() == [1.0, 2.0]


def test_base_forward_golden_seed7(goldens):
    base = ToyBaseModel.build(4, 2, 7)
    out, _ = base_forward(base, [1.0, 0, 0, 0])
    assert np.allclose(out, goldens["base_forward_seed7_d4_m2_e1"], atol=1e-14)
    # recomputed live by the loop-level oracle
    assert np.allclose(out, oracles.base_forward(base.weights, base.biases, [1.0, 0, 0, 0]), atol=1e-14)


def test_lora_forward_examples():
    assert lora_forward(I2, LoraModule(A1, B1), [1.0, 1.0]).tolist() == [2.0, 1.0]
    u = np.array([0.3, -0.7])
    assert np.array_equal(lora_forward(I2, LoraModule(A1, np.zeros((2, 1))), u), u @ I2.T)
    assert np.array_equal(lora_forward(I2, LoraModule(A1, B1, lora_scaling=0.0), u), u @ I2.T)


def test_gated_forward_examples():
    h = math.log(3) / 2
    out = gated_forward(I2, LoraModule(A1, B1, gate=np.array([h, h])), [1.0, 1.0])
    assert np.allclose(out, [1.75, 1.0], atol=1e-15)
    out = gated_forward(I2, LoraModule(A1, B1, gate=np.zeros(2)), [1.0, 1.0])
    assert np.allclose(out, [1.5, 1.0])
    big = gated_forward(I2, LoraModule(A1, B1, gate=np.array([50.0, 50.0])), [1.0, 1.0])
    assert np.allclose(big, lora_forward(I2, LoraModule(A1, B1), [1.0, 1.0]), atol=1e-12)
    with pytest.raises(MissingGate):
        gated_forward(I2, LoraModule(A1, B1), [1.0, 1.0])


def test_gate_saturated_equals_lora_bitwise():
    rng = np.random.default_rng(0)
    mod = LoraModule(rng.standard_normal((2, 5)), rng.standard_normal((5, 2)), gate=np.full(5, 1e3))
    u = np.abs(rng.standard_normal(5)) + 0.1  # v·u large, σ == 1.0 exactly
    W = rng.standard_normal((5, 5))
    assert np.array_equal(gated_forward(W, mod, u), lora_forward(W, mod, u))


@settings(max_examples=50)
@given(st.integers(0, 10_000), st.floats(-5, 5), st.floats(-5, 5))
def test_lora_forward_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((4, 4))
    mod = LoraModule(rng.standard_normal((2, 4)), rng.standard_normal((4, 2)), lora_scaling=0.7)
    u, w = rng.standard_normal(4), rng.standard_normal(4)
    lhs = lora_forward(W, mod, a * u + b * w)
    rhs = a * lora_forward(W, mod, u) + b * lora_forward(W, mod, w)
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_lora_module_validation():
    with pytest.raises(DimMismatch):
        LoraModule(np.zeros((2, 4)), np.zeros((4, 3)))
    with pytest.raises(DimMismatch):
        lora_forward(I2, LoraModule(A1, B1), [1.0, 2.0, 3.0])


def test_init_expert_shapes_and_zero_update():
    base = ToyBaseModel.build(6, 3, 0)
    e = init_expert(base, "x", 2, np.random.default_rng(0))
    assert len(e.modules) == 3
    assert all(m.A.shape == (2, 6) and np.all(m.B == 0) for m in e.modules)
    u = np.random.default_rng(1).standard_normal((5, 6))
    assert np.array_equal(expert_forward(base, e, u), base_forward(base, u)[0])


def test_expert_forward_batch_matches_rows():
    base = ToyBaseModel.build(5, 2, 3)
    rng = np.random.default_rng(4)
    e = ExpertModel("e", [LoraModule(rng.standard_normal((2, 5)), rng.standard_normal((5, 2))) for _ in range(2)])
    X = rng.standard_normal((3, 5))
    batch = expert_forward(base, e, X)
    for i in range(3):
        assert np.allclose(batch[i], expert_forward(base, e, X[i]), atol=1e-14)


def test_checksum_tracks_gate_only_when_asked():
    rng = np.random.default_rng(0)
    e = ExpertModel("e", [LoraModule(rng.standard_normal((1, 3)), rng.standard_normal((3, 1)), gate=np.zeros(3))])
    c_full, c_ab = e.checksum(), e.checksum(include_gates=False)
    e.modules[0].gate[0] = 1.0
    assert e.checksum() != c_full
    assert e.checksum(include_gates=False) == c_ab
