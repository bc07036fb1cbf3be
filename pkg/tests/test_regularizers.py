import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stablegrad import autodiff as ad
from stablegrad.autodiff import Tensor
from stablegrad.errors import DomainError, ShapeError
from stablegrad.laplacian import WeightedGraph, discrete_intrinsic_norm
from stablegrad.regularizers import (
    HammingAccumulator,
    RegWeights,
    ambient_loss,
    hamming_reg_loss,
    intrinsic_loss,
    sample_pair,
    soft_hamming,
)
from stablegrad.relu_net import ForwardTrace, NetworkParams, forward


def test_reg_weights_validation():
    RegWeights(0.0, 0.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        RegWeights(-1.0, 0.0, 0.0)
    with pytest.raises(DomainError):
        RegWeights(0.0, 0.0, 0.0, alpha=0.0)


def test_sample_pair_examples():
    x = np.array([0.5, 0.5])
    p = sample_pair(x, 0.0, seed=1)
    assert np.array_equal(p.x_plus, x) and np.array_equal(p.x_minus, x)
    p = sample_pair(x, 0.1, seed=0)
    p = type(p)(x, np.array([0.1, -0.1]), 0.1)
    assert np.allclose(p.x_plus, [0.6, 0.4]) and np.allclose(p.x_minus, [0.4, 0.6])


def test_sample_pair_invariants_and_sign_audit():
    x = np.random.default_rng(0).normal(size=(10_000, 8))
    p = sample_pair(x, 0.3, seed=5)
    assert np.array_equal(p.x_minus, 2 * x - p.x_plus)
    assert np.all(np.abs(p.rho) == 0.3)
    freq = np.mean(p.rho > 0, axis=0)
    assert np.all(np.abs(freq - 0.5) < 0.02)
    with pytest.raises(DomainError):
        sample_pair(x, -0.1)


def test_intrinsic_loss_examples():
    a = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    assert intrinsic_loss(a, a).item() == 0.0
    assert intrinsic_loss(Tensor([1.0, 0.0]), Tensor([0.0, 0.0])).item() == 1.0
    with pytest.raises(ShapeError):
        intrinsic_loss(Tensor([1.0, 0.0]), Tensor([0.0]))


def test_intrinsic_loss_equals_pair_graph_norm():
    # B pairs -> 2B nodes, unit weight between each pair's two nodes
    rng = np.random.default_rng(1)
    B = 6
    fp, fm = rng.normal(size=(2, B, 3))
    W = np.zeros((2 * B, 2 * B))
    for i in range(B):
        W[i, B + i] = W[B + i, i] = 1.0
    norm = discrete_intrinsic_norm(np.concatenate([fp, fm]), WeightedGraph(W))
    # norm = (1/(2B)^2) * 2 * sum_i |fp_i - fm_i|^2 ; loss = (1/B) * sum_i ...
    assert intrinsic_loss(Tensor(fp), Tensor(fm)).item() == pytest.approx(norm * (2 * B) ** 2 / (2 * B), rel=1e-12)


def test_soft_hamming_examples():
    z = Tensor([0.3, -2.0])
    assert np.all(soft_hamming(z, z, 8.0).data == 0)
    v = soft_hamming(Tensor(1.0), Tensor(-1.0), 8.0).item()
    assert v == pytest.approx(2 * np.tanh(8.0), rel=1e-15)
    with pytest.raises(ShapeError):
        soft_hamming(Tensor([1.0]), Tensor([1.0, 2.0]), 8.0)
    with pytest.raises(DomainError):
        soft_hamming(z, z, 0.0)


def test_soft_hamming_recovers_hard_bits():
    rng = np.random.default_rng(0)
    z, y = rng.choice([-1.0, 1.0], size=(2, 10_000))
    soft = soft_hamming(Tensor(z), Tensor(y), 1000.0).data / 2
    assert np.max(np.abs(soft - ((z > 0) != (y > 0)))) < 1e-6


def test_soft_hamming_bounded_and_monotone_on_line():
    zs = np.linspace(0, 3, 50)
    u = np.array([1.0, -0.7, 0.2])
    vals = [np.sum(soft_hamming(Tensor(t * u), Tensor(-t * u), 4.0).data) for t in zs]
    assert np.all(np.diff(vals) >= 0)
    big = soft_hamming(Tensor(np.full(5, 1e3)), Tensor(np.full(5, -1e3)), 8.0).data
    assert np.all(big <= 2)


def test_hamming_loss_example():
    zp, zm = Tensor([[1.0, -1.0]]), Tensor([[-1.0, 1.0]])
    tp = ForwardTrace(Tensor([[0.0]]), [zp, Tensor([[0.0]])])
    tm = ForwardTrace(Tensor([[0.0]]), [zm, Tensor([[0.0]])])
    v = hamming_reg_loss(tp, tm, 8.0).item()
    assert v == pytest.approx(2 * np.tanh(8.0) * np.sqrt(2) / 4, rel=1e-14)
    assert f"{v:.5f}" == "0.70711"


def test_hamming_loss_zero_on_identical_traces():
    p = NetworkParams.init_he([3, 5, 5, 2], seed=0)
    tr = forward(p, Tensor(np.random.default_rng(0).normal(size=(4, 3))))
    assert hamming_reg_loss(tr, tr, 8.0).item() == 0.0


def retention_oracle(W, b, Xp, Xm, alpha):
    # straight-line version that keeps every pre-activation, plain numpy
    pre_p, pre_m = [], []
    zp, zm = Xp, Xm
    for A, c in zip(W[:-1], b[:-1]):
        hp, hm = zp @ A.T + c, zm @ A.T + c
        pre_p.append(hp)
        pre_m.append(hm)
        zp, zm = np.maximum(hp, 0), np.maximum(hm, 0)
    total = 0.0
    for hp, hm in zip(pre_p, pre_m):
        h = np.abs(np.tanh(alpha * hp) - np.tanh(alpha * hm))
        total += np.mean(np.sqrt(np.sum(h * h, axis=1)) / (2 * h.shape[1]))
    return total / len(pre_p)


def test_streaming_matches_retention_oracle():
    p = NetworkParams.init_he([4, 16, 12, 8, 3], seed=2)
    rng = np.random.default_rng(2)
    X = rng.normal(size=(32, 4))
    pair = sample_pair(X, 0.2, seed=3)
    acc = HammingAccumulator(8.0, 3)
    B = len(X)
    stacked = Tensor(np.concatenate([pair.x_plus, pair.x_minus]))
    forward(p, stacked, on_hidden=lambda i, z: acc.add(ad.take(z, 0, B), ad.take(z, B, 2 * B)), keep=False)
    oracle = retention_oracle([A.data for A in p.weights], [c.data for c in p.biases], pair.x_plus, pair.x_minus, 8.0)
    assert abs(acc.value().item() - oracle) < 1e-12
    kept = hamming_reg_loss(forward(p, Tensor(pair.x_plus)), forward(p, Tensor(pair.x_minus)), 8.0).item()
    assert abs(kept - oracle) < 1e-12


def test_accumulator_checks_layer_count():
    acc = HammingAccumulator(8.0, 2)
    acc.add(Tensor([[1.0]]), Tensor([[1.0]]))
    with pytest.raises(ShapeError):
        acc.value()


def test_hamming_loss_structure_mismatch():
    a = forward(NetworkParams.init_he([2, 3, 2], seed=0), Tensor(np.zeros((1, 2))))
    b = forward(NetworkParams.init_he([2, 4, 2], seed=0), Tensor(np.zeros((1, 2))))
    with pytest.raises(ShapeError):
        hamming_reg_loss(a, b, 8.0)


def test_hamming_loss_unit_permutation_invariant():
    rng = np.random.default_rng(4)
    zp, zm = rng.normal(size=(2, 5, 7))
    perm = rng.permutation(7)

    def trace(z):
        return ForwardTrace(Tensor(z[:, :2]), [Tensor(z), Tensor(np.zeros((5, 1)))])

    a = hamming_reg_loss(trace(zp), trace(zm), 8.0).item()
    b = hamming_reg_loss(trace(zp[:, perm]), trace(zm[:, perm]), 8.0).item()
    assert a == pytest.approx(b, rel=1e-13)


def test_both_terms_vanish_at_zero_eps():
    p = NetworkParams.init_he([2, 8, 8, 2], seed=1)
    X = np.random.default_rng(1).normal(size=(6, 2))
    pair = sample_pair(X, 0.0, seed=2)
    tp, tm = forward(p, Tensor(pair.x_plus)), forward(p, Tensor(pair.x_minus))
    assert intrinsic_loss(tp.output, tm.output).item() == 0.0
    assert hamming_reg_loss(tp, tm, 8.0).item() == 0.0


def test_hamming_loss_gradient_zero_at_identical_inputs():
    p = NetworkParams.init_he([2, 4, 2], seed=0)
    x = Tensor(np.ones((1, 2)))
    loss = hamming_reg_loss(forward(p, x), forward(p, x), 8.0)
    grads = ad.grad(loss, p.tensors())
    assert all(np.all(g == 0) for g in grads)


def test_ambient_loss_examples():
    assert ambient_loss(NetworkParams.zeros([3, 4, 2])).item() == 0.0
    p = NetworkParams.from_arrays([[[3.0, 4.0]]], [[0.0]])
    assert ambient_loss(p).item() == 25.0


def test_ambient_gradient_is_two_theta():
    p = NetworkParams.init_he([3, 5, 2], seed=9)
    for t in p.biases:
        t.data = np.random.default_rng(1).normal(size=t.shape)
    grads = ad.grad(ambient_loss(p), p.tensors())
    for g, t in zip(grads, p.tensors()):
        assert np.max(np.abs(g - 2 * t.data)) < 1e-9


def test_unit_sign_kept_along_segment():
    # a pre-activation affine on [x+, x-] with equal endpoint signs keeps the sign at every point
    p = NetworkParams.init_he([2, 16, 2], seed=5)
    A, b = p.weights[0].data, p.biases[0].data
    rng = np.random.default_rng(5)
    for x in rng.normal(size=(50, 2)):
        pair = sample_pair(x, 0.2, rng)
        hp, hm = A @ pair.x_plus + b, A @ pair.x_minus + b
        agree = (hp > 0) == (hm > 0)
        for lam in np.linspace(0, 1, 11):
            mid = A @ (lam * pair.x_plus + (1 - lam) * pair.x_minus) + b
            assert np.array_equal((mid > 0)[agree], (hp > 0)[agree])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.floats(0.1, 50))
def test_soft_hamming_symmetric_and_in_range(vals, alpha):
    z = np.array(vals)
    y = z[::-1].copy()
    a = soft_hamming(Tensor(z), Tensor(y), alpha).data
    b = soft_hamming(Tensor(y), Tensor(z), alpha).data
    assert np.array_equal(a, b)
    assert np.all((a >= 0) & (a <= 2))
