"""Reverse-mode autodiff core: every op against central finite differences."""
import numpy as np
import pytest

from provsight.nn import (
    Adam,
    Tensor,
    concat,
    dropout,
    finite_difference_check,
    glorot,
    log_softmax,
    masked_softmax,
    parameter,
)


def fd_grad(fn, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar-valued fn at x."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn(x)
        flat[i] = orig - step
        down = fn(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def check_op(build, shapes, seed=0, tol=1e-7):
    """Compare backward() of build(*tensors) with finite differences."""
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=s) for s in shapes]
    tensors = [parameter(a.copy()) for a in arrays]
    build(*tensors).backward()
    for k, (a, t) in enumerate(zip(arrays, tensors)):
        def fn(x, k=k):
            probe = [Tensor(arr) for arr in arrays]
            probe[k] = Tensor(x)
            return build(*probe).item()
        numeric = fd_grad(fn, a.copy())
        assert np.allclose(t.grad, numeric, atol=tol, rtol=1e-5), f"input {k}"


def test_add_mul_broadcasting():
    check_op(lambda a, b: ((a + b) * a).sum(), [(3, 4), (4,)])
    check_op(lambda a, b: (a * b).sum(), [(2, 1, 3), (4, 3)])


def test_sub_div_pow_neg():
    check_op(lambda a, b: (a - b / 2.0).sum(), [(3,), (3,)])
    check_op(lambda a: (1.0 / (a * a + 3.0)).sum(), [(4,)])
    check_op(lambda a: ((a * a + 1.0) ** 1.5).sum(), [(5,)])
    check_op(lambda a: (-a).sum(), [(3,)])


def test_matmul_batched_and_2d():
    check_op(lambda a, b: (a @ b).sum(), [(3, 4), (4, 2)])
    check_op(lambda a, b: ((a @ b) * (a @ b)).sum(), [(2, 3, 4), (4, 5)])
    check_op(lambda a, b: (a @ b).sum(), [(2, 2, 3, 4), (2, 2, 4, 2)])


def test_shape_ops():
    check_op(lambda a: a.reshape(6).sum(), [(2, 3)])
    check_op(lambda a: (a.swapaxes(0, 1) * 2.0).sum(), [(2, 3)])
    check_op(lambda a: a.broadcast_to((4, 3)).sum(), [(1, 3)])
    check_op(lambda a: a[1:, :2].sum(), [(3, 4)])


def test_reductions():
    check_op(lambda a: a.sum(), [(3, 4)])
    check_op(lambda a: a.sum(axis=1).mean(), [(3, 4)])
    check_op(lambda a: a.mean(axis=0, keepdims=True).sum(), [(3, 4)])


def test_activations():
    check_op(lambda a: a.tanh().sum(), [(3, 4)])
    check_op(lambda a: a.gelu().sum(), [(3, 4)], tol=1e-6)


def test_concat():
    check_op(lambda a, b: concat([a, b], axis=1).tanh().sum(), [(2, 3), (2, 2)])


def test_log_softmax_backward():
    check_op(lambda a: (log_softmax(a) * log_softmax(a)).sum(), [(3, 5)])


def test_log_softmax_shift_invariance():
    x = np.array([[1.0, 2.0, 3.0]])
    a = log_softmax(Tensor(x)).data
    b = log_softmax(Tensor(x + 1000.0)).data
    assert np.allclose(a, b, atol=1e-9)
    assert np.allclose(np.exp(a).sum(), 1.0)


def test_masked_softmax_forward_and_backward():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 4, 4))
    valid = np.array([True, True, False, True])
    out = masked_softmax(Tensor(x), valid).data
    assert (out[..., 2] == 0.0).all()
    assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def build(a):
        return (masked_softmax(a, valid) * masked_softmax(a, valid)).sum()
    check_op(build, [(2, 4, 4)])


def test_masked_softmax_grad_zero_on_invalid():
    x = parameter(np.random.default_rng(2).normal(size=(3, 4)))
    valid = np.array([True, False, True, True])
    masked_softmax(x, valid).sum().backward()
    assert np.allclose(x.grad[:, 1], 0.0)


def test_gradient_accumulates_on_reuse():
    a = parameter(np.array([2.0]))
    ((a * a) + (a * 3.0)).backward()  # d/da (a^2 + 3a) = 2a + 3
    assert np.allclose(a.grad, [7.0])


def test_zero_grad_and_detach():
    a = parameter(np.array([1.0, 2.0]))
    (a * a).sum().backward()
    assert a.grad is not None
    a.zero_grad()
    assert a.grad is None
    d = a.detach()
    assert not d.requires_grad and np.shares_memory(d.data, a.data)


def test_backward_requires_scalar():
    a = parameter(np.ones((2, 2)))
    with pytest.raises(ValueError):
        (a * a).backward()


def test_dropout_identity_and_scaling():
    x = Tensor(np.ones((400, 10)))
    assert dropout(x, 0.0, np.random.default_rng(0)) is x
    assert dropout(x, 0.5, None) is x
    out = dropout(x, 0.25, np.random.default_rng(0)).data
    kept = out != 0.0
    assert np.allclose(out[kept], 1.0 / 0.75)
    assert abs(kept.mean() - 0.75) < 0.02


def test_glorot_limit():
    w = glorot(np.random.default_rng(0), 30, 50, np.float64)
    limit = np.sqrt(6.0 / 80)
    assert w.shape == (30, 50)
    assert (np.abs(w) <= limit).all()


def test_adam_first_step_magnitude():
    # with fresh moments the bias-corrected step is lr * g / (|g| + eps)
    p = parameter(np.array([1.0, -2.0]))
    p.grad = np.array([0.5, -0.25])
    opt = Adam([p], lr=0.01)
    opt.step()
    assert np.allclose(p.data, [1.0 - 0.01, -2.0 + 0.01], atol=1e-6)


def test_adam_converges_on_quadratic():
    p = parameter(np.array([5.0, -3.0]))
    opt = Adam([p], lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        ((p * p).sum()).backward()
        opt.step()
    assert np.abs(p.data).max() < 1e-3


def test_adam_skips_gradless_params():
    a = parameter(np.array([1.0]))
    b = parameter(np.array([2.0]))
    a.grad = np.array([1.0])
    Adam([a, b], lr=0.1).step()
    assert b.data[0] == 2.0 and a.data[0] != 1.0


def test_finite_difference_check_harness_catches_bad_gradient():
    # the harness itself must flag a deliberately corrupted backward rule
    a = parameter(np.array([0.3, -0.7]))

    def good():
        return (a.tanh() * a.tanh()).sum()

    assert finite_difference_check(good, [a]) < 1e-7

    def bad():
        out = a.tanh()
        wrong = Tensor(out.data * out.data, parents=(a,))

        def backward(g):
            a._accumulate(g * 2.0, fresh=True)  # drops the tanh jacobian
        wrong._backward = backward
        return wrong.sum()

    assert finite_difference_check(bad, [a]) > 1e-2
