import numpy as np
import pytest

import coact.autodiff as ad
from coact.autodiff import Adam, Tensor


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat_x, flat_g = x.ravel(), g.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        up = f()
        flat_x[i] = orig - h
        dn = f()
        flat_x[i] = orig
        flat_g[i] = (up - dn) / (2 * h)
    return g


def check(build, *shapes, seed=0):
    """Compare backward() against central differences for a scalar graph."""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(rng.normal(size=s)) for s in shapes]
    out = build(*tensors)
    out.backward()
    for t in tensors:
        got = t.grad if t.grad is not None else np.zeros_like(t.data)
        want = fd_grad(lambda t=t: build(*tensors).data.item(), t.data)
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-7)


def test_add_mul_broadcast():
    check(lambda a, b: ((a + b) * a).sum(), (3, 4), (4,))


def test_sub_div():
    check(lambda a, b: (a / (b * b + 3.0) - b).sum(), (5,), (5,))


def test_matmul_chain():
    check(lambda a, b, c: ((a @ b) @ c).sum(), (3, 4), (4, 2), (2, 3))


def test_exp_log_tanh_cos():
    check(lambda a: (a.tanh().exp() + (a * a + 1.0).log() + a.cos()).sum(), (4, 3))


def test_pow_and_transpose():
    check(lambda a: ((a ** 3).T @ a).sum(), (4, 2))


def test_sum_axis_keepdims():
    check(lambda a: (a - a.sum(axis=1, keepdims=True) * 0.1).sum(), (3, 5))


def test_logsumexp_grad():
    check(lambda a: ad.logsumexp(a, axis=1).sum(), (4, 6))


def test_logsumexp_matches_value():
    from scipy.special import logsumexp
    x = np.random.default_rng(0).normal(size=(3, 5))
    np.testing.assert_allclose(ad.logsumexp(Tensor(x), axis=1).data,
                               logsumexp(x, axis=1), rtol=1e-12)


def test_softmax_rows_normalize():
    x = np.random.default_rng(1).normal(size=(4, 7))
    p = ad.softmax(Tensor(x), axis=1).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_concat_grad():
    check(lambda a, b: (ad.concat([a, b], axis=1) ** 2).sum(), (3, 2), (3, 4))


def test_take_rows_repeated_indices():
    rng = np.random.default_rng(2)
    t = Tensor(rng.normal(size=(4, 3)))
    idx = np.array([0, 2, 0, 3])
    out = (ad.take_rows(t, idx) ** 2).sum()
    out.backward()
    want = fd_grad(lambda: float((t.data[idx] ** 2).sum()), t.data)
    np.testing.assert_allclose(t.grad, want, rtol=1e-5, atol=1e-8)


def test_pick_grad():
    rng = np.random.default_rng(3)
    t = Tensor(rng.normal(size=(5, 4)))
    rows = np.arange(5)
    cols = np.array([0, 3, 1, 1, 2])
    ad.pick(t, rows, cols).sum().backward()
    want = np.zeros((5, 4))
    want[rows, cols] = 1.0
    np.testing.assert_allclose(t.grad, want)


def test_grad_accumulates_across_backward_calls():
    t = Tensor(np.array([2.0]))
    (t * 3.0).sum().backward()
    (t * 5.0).sum().backward()
    np.testing.assert_allclose(t.grad, [8.0])


def test_diamond_graph_grad():
    # the same node feeds two consumers; grads must sum
    t = Tensor(np.array([1.5]))
    y = t * t + t * 3.0
    y.sum().backward()
    np.testing.assert_allclose(t.grad, [2 * 1.5 + 3.0])


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        Tensor(np.zeros((2, 2))).backward()


def test_adam_decreases_quadratic():
    t = Tensor(np.array([5.0, -3.0]))
    opt = Adam({"t": t}, lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        (t * t).sum().backward()
        opt.step()
    assert np.all(np.abs(t.data) < 0.05)


def test_adam_weight_decay_shrinks_unused_param():
    t = Tensor(np.array([1.0]))
    u = Tensor(np.array([4.0]))  # never in the loss
    opt = Adam({"t": t, "u": u}, lr=0.01, weight_decay=0.1)
    for _ in range(50):
        opt.zero_grad()
        (t * t).sum().backward()
        u.grad = np.zeros_like(u.data)  # decay applies on top of a zero grad
        opt.step()
    assert abs(u.data[0]) < 4.0
