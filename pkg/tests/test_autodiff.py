import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ppan import autodiff as ad
from ppan.autodiff import AdamState, ContractError, DimensionError, DomainError, Tensor, adam_step
from ppan.nets import MLP


def numeric_grad(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        up = fn(x)
        x.flat[i] = old - h
        down = fn(x)
        x.flat[i] = old
        grad.flat[i] = (up - down) / (2 * h)
    return grad


def rel_err(a, b) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b))))


def check_unary(op, x: np.ndarray, tol: float = 1e-4):
    weights = np.random.default_rng(1).normal(size=op(Tensor(x)).shape)
    t = Tensor(x.copy(), requires_grad=True)
    (op(t) * weights).sum().backward()
    fd = numeric_grad(lambda v: float((op(Tensor(v)).data * weights).sum()), x.copy())
    assert rel_err(t.grad, fd) < tol


UNARY_OPS = [
    ("relu", ad.relu, lambda r: r.normal(size=(3, 4)) + 0.05),
    ("max_with_zero", ad.max_with_zero, lambda r: r.normal(size=(4,)) + 0.05),
    ("tanh", ad.tanh, lambda r: r.normal(size=(3, 4))),
    ("sigmoid", ad.sigmoid, lambda r: r.normal(size=(3, 4))),
    ("exp", ad.exp, lambda r: r.normal(size=(3, 4))),
    ("log", ad.log, lambda r: r.uniform(0.5, 2.0, size=(3, 4))),
    ("square", ad.square, lambda r: r.normal(size=(3, 4))),
    ("softmax", ad.softmax, lambda r: r.normal(size=(3, 4))),
    ("log_softmax", ad.log_softmax, lambda r: r.normal(size=(3, 4))),
    ("sum_axis", lambda t: ad.sum(t, axis=1), lambda r: r.normal(size=(3, 4))),
    ("mean", lambda t: ad.mean(t).reshape(1), lambda r: r.normal(size=(3, 4))),
    ("transpose", ad.transpose, lambda r: r.normal(size=(3, 4))),
    ("scalar_mul", lambda t: ad.scalar_mul(t, -2.5), lambda r: r.normal(size=(3, 4))),
    ("neg", ad.neg, lambda r: r.normal(size=(2, 2))),
    ("clip", lambda t: ad.clip(t, -0.5, 0.5), lambda r: r.choice([-1.0, 0.1, 0.2, 1.0], size=(3, 4))),
    ("index", lambda t: t[np.array([0, 2, 2])], lambda r: r.normal(size=(3, 4))),
]

BINARY_OPS = [
    ("add", ad.add), ("sub", ad.sub), ("mul", ad.mul), ("div", ad.div), ("matmul", ad.matmul),
    ("concat", lambda a, b: ad.concat([a, b], axis=1)),
]


def check_binary(op, rng: np.random.Generator, tol: float = 1e-4):
    a = rng.normal(size=(3, 3))
    b = rng.uniform(0.5, 1.5, size=(3, 3))
    ta, tb = Tensor(a.copy(), requires_grad=True), Tensor(b.copy(), requires_grad=True)
    weights = rng.normal(size=op(Tensor(a), Tensor(b)).shape)
    (op(ta, tb) * weights).sum().backward()
    fa = numeric_grad(lambda v: float((op(Tensor(v), Tensor(b)).data * weights).sum()), a.copy())
    fb = numeric_grad(lambda v: float((op(Tensor(a), Tensor(v)).data * weights).sum()), b.copy())
    assert rel_err(ta.grad, fa) < tol
    assert rel_err(tb.grad, fb) < tol


@pytest.mark.parametrize("name,op,sample", UNARY_OPS)
def test_unary_gradients_match_finite_differences(name, op, sample):
    check_unary(op, sample(np.random.default_rng(0)))


@pytest.mark.parametrize("name,op", BINARY_OPS)
def test_binary_gradients_match_finite_differences(name, op):
    check_binary(op, np.random.default_rng(0))


@given(arrays(np.float64, (3, 2), elements=st.floats(-3, 3)),
       arrays(np.float64, (2,), elements=st.floats(-3, 3)))
@settings(max_examples=40, deadline=None)
def test_broadcast_add_mul_gradients(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    (ta * tb + tb).sum().backward()
    np.testing.assert_allclose(ta.grad, np.broadcast_to(b, a.shape))
    np.testing.assert_allclose(tb.grad, a.sum(axis=0) + 3.0)


def test_three_layer_mlp_gradients():
    net = MLP([4, 6, 5, 1], activation="tanh", rng=np.random.default_rng(3))
    x = np.random.default_rng(4).normal(size=(7, 4))
    out = net(x).sum()
    out.backward()
    for p in net.parameters():
        def f(v, p=p):
            saved = p.data.copy()
            p.data[...] = v
            value = net(x).sum().item()
            p.data[...] = saved
            return value
        fd = numeric_grad(f, p.data.copy())
        assert rel_err(p.grad, fd) < 1e-4


def test_relu_mlp_gradients():
    net = MLP([3, 5, 5, 2], activation="relu", rng=np.random.default_rng(5))
    x = np.random.default_rng(6).normal(size=(4, 3))
    weights = np.array([[1.0, -2.0]])
    (net(x) * weights).sum().backward()
    for p in net.parameters():
        def f(v, p=p):
            saved = p.data.copy()
            p.data[...] = v
            value = float((net(x).data * weights).sum())
            p.data[...] = saved
            return value
        assert rel_err(p.grad, numeric_grad(f, p.data.copy())) < 1e-4


def test_forward_examples():
    eye = Tensor(np.eye(2))
    np.testing.assert_array_equal(ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), eye).data, [[1, 2], [3, 4]])
    np.testing.assert_allclose(ad.softmax(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3])
    assert ad.tanh(Tensor(0.0)).item() == 0.0
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5


def test_backward_examples():
    w = Tensor([1.0, 2.0], requires_grad=True)
    ad.square(w).sum().backward()
    np.testing.assert_array_equal(w.grad, [2.0, 4.0])
    x = Tensor(0.0, requires_grad=True)
    ad.sigmoid(x).backward()
    assert x.grad == pytest.approx(0.25)


def test_backward_accumulates_without_zeroing():
    w = Tensor([1.0, -1.0], requires_grad=True)
    for _ in range(2):
        ad.square(w).sum().backward()
    np.testing.assert_array_equal(w.grad, [4.0, -4.0])


def test_shared_subexpression_counted_once_per_path():
    x = Tensor(3.0, requires_grad=True)
    y = x * x
    (y + y).backward()
    assert x.grad == pytest.approx(12.0)


def test_errors():
    with pytest.raises(ContractError):
        Tensor(np.ones(3), requires_grad=True).backward()
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(DimensionError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(DomainError):
        ad.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        ad.log(Tensor([-1.0]))


@given(arrays(np.float64, (4, 5), elements=st.floats(-50, 50)))
@settings(max_examples=50, deadline=None)
def test_softmax_rows_are_distributions(x):
    p = ad.softmax(Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.clip(p, ad.PROB_EPS, 1.0) > 0)


def test_no_grad_disables_tape():
    w = Tensor([1.0], requires_grad=True)
    with ad.no_grad():
        out = ad.square(w)
    assert not out.requires_grad
    assert ad.is_grad_enabled()


def test_replay_determinism():
    def run():
        net = MLP([2, 4, 1], rng=np.random.default_rng(9))
        net(np.ones((3, 2))).sum().backward()
        return [p.grad.copy() for p in net.parameters()]
    for a, b in zip(run(), run()):
        assert np.array_equal(a, b)


def test_adam_first_step_magnitude():
    p = Tensor([0.0], requires_grad=True)
    p.grad = np.array([1.0])
    state = AdamState()
    adam_step([p], state)
    # m_hat = v_hat = 1 after bias correction
    assert p.data[0] == pytest.approx(-0.001 / (1.0 + 1e-8), rel=1e-12)
    assert state.step_count == 1


def test_adam_ascent_flips_sign():
    p = Tensor([0.0], requires_grad=True)
    p.grad = np.array([3.0])
    adam_step([p], AdamState(), maximize=True)
    assert p.data[0] == pytest.approx(0.001, rel=1e-6)


def test_adam_zero_gradient_leaves_parameters():
    p = Tensor([1.5, -2.0], requires_grad=True)
    p.grad = np.zeros(2)
    state = AdamState()
    adam_step([p], state)
    np.testing.assert_array_equal(p.data, [1.5, -2.0])
    assert state.step_count == 1
    assert all(np.all(v >= 0) for v in state.second_moment)


def test_adam_defaults_and_missing_grad():
    state = AdamState()
    assert (state.alpha, state.beta1, state.beta2, state.epsilon) == (0.001, 0.9, 0.999, 1e-8)
    with pytest.raises(ContractError):
        adam_step([Tensor([1.0], requires_grad=True)], state)


def test_adam_bit_identical_runs():
    def run():
        net = MLP([2, 3, 1], rng=np.random.default_rng(2))
        state = AdamState()
        x = np.random.default_rng(3).normal(size=(5, 2))
        for _ in range(20):
            ad.zero_grad(net.parameters())
            ad.square(net(x)).mean().backward()
            adam_step(net.parameters(), state)
        return np.concatenate([p.data.ravel() for p in net.parameters()])
    assert np.array_equal(run(), run())
