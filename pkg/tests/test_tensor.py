import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hrkd import tensor as T
from hrkd.exceptions import ContractError, DimensionError, DomainError
from hrkd.tensor import Tensor, backward, grad_check, no_grad


def loop_matmul(a, b):
    p, q = a.shape
    r = b.shape[1]
    c = np.zeros((p, r))
    for i in range(p):
        for j in range(r):
            s = 0.0
            for k in range(q):
                s += a[i, k] * b[k, j]
            c[i, j] = s
    return c


def fd_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


# -- matmul ----------------------------------------------------------------------

def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((a @ b).data, [[1, 2], [3, 4]])


def test_matmul_dot():
    assert (Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


@pytest.mark.parametrize("shape", [(3, 4, 2), (1, 1, 1), (64, 64, 64), (7, 33, 5)])
def test_matmul_matches_loop(shape):
    rng = np.random.default_rng(sum(shape))
    p, q, r = shape
    a, b = rng.normal(size=(p, q)), rng.normal(size=(q, r))
    got = (Tensor(a) @ Tensor(b)).data
    ref = loop_matmul(a, b)
    assert np.max(np.abs(got - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))


def test_matmul_gradients():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    backward(T.tsum(a @ b))
    np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ np.ones((3, 2)))


# -- softmax -----------------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)


def test_softmax_analytic():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, math.log(2.0)])).data, [1 / 3, 2 / 3], atol=1e-15)


def test_softmax_matches_formula():
    x = np.random.default_rng(3).normal(size=5)
    e = np.exp(x - x.max())
    np.testing.assert_allclose(T.softmax(Tensor(x)).data, e / e.sum(), rtol=0, atol=1e-12)


def test_softmax_errors():
    with pytest.raises(DomainError):
        T.softmax(Tensor(np.zeros(3)), axis=2)
    with pytest.raises(DomainError):
        T.softmax(Tensor(1.0))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
              elements=st.floats(-700, 700, allow_nan=False)))
def test_softmax_rows_sum_to_one(x):
    out = T.softmax(Tensor(x), axis=1).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


# -- activations ------------------------------------------------------------------------

@pytest.mark.parametrize("x,expected", [(0.0, 0.0), (-1.0, -0.2), (3.5, 3.5)])
def test_leaky_relu(x, expected):
    assert T.leaky_relu(Tensor(x)).item() == pytest.approx(expected, abs=1e-15)


def test_leaky_relu_slope_domain():
    with pytest.raises(DomainError):
        T.leaky_relu(Tensor(1.0), slope=1.5)


@pytest.mark.parametrize("x,expected", [(0.0, 0.0), (2.0, 2.0), (-1.0, math.exp(-1) - 1)])
def test_elu(x, expected):
    assert T.elu(Tensor(x)).item() == pytest.approx(expected, abs=1e-15)


def test_log_domain():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))


# -- backward ----------------------------------------------------------------------------

@pytest.mark.parametrize("shape", [(), (3,), (2, 3, 4)])
def test_backward_sum_gives_ones(shape):
    x = Tensor(np.random.default_rng(0).normal(size=shape), requires_grad=True)
    backward(T.tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones(shape))


def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    backward(x * x)
    assert x.grad == 6.0


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_backward_accumulates_over_reuse():
    x = Tensor(2.0, requires_grad=True)
    y = x * x + x * 3.0 + x
    backward(y)
    assert x.grad == pytest.approx(2 * 2.0 + 3.0 + 1.0)


def test_tape_is_topological():
    x = Tensor(np.ones(2), requires_grad=True)
    y = T.exp(x) * x
    loss = T.tsum(y + y)
    tape = T.Tape.record(loss)
    seen = set()
    for entry in tape.entries:
        for parent in entry.inputs:
            assert parent in seen or parent not in {e.output for e in tape.entries}
        seen.add(entry.output)
    assert len({e.output for e in tape.entries}) == len(tape)


def test_graph_freed_after_backward():
    x = Tensor(np.ones(2), requires_grad=True)
    y = T.tsum(T.exp(x))
    backward(y)
    assert y._vjp is None and y._parents == ()
    assert backward(T.tsum(T.exp(x))) is not None
    np.testing.assert_allclose(x.grad, 2 * np.exp(1.0))


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = T.tsum(x * 2.0)
    assert not y.requires_grad


# -- finite differences per primitive -------------------------------------------

UNARY = {
    "exp": T.exp,
    "tanh": T.tanh,
    "leaky_relu": T.leaky_relu,
    "elu": T.elu,
    "gelu": T.gelu,
    "neg": T.neg,
    "square": lambda x: T.power(x, 2.0),
    "softmax": lambda x: T.softmax(x, axis=-1),
    "log_softmax": lambda x: T.log_softmax(x, axis=0),
    "mean": lambda x: T.mean(x, axis=1, keepdims=True),
    "transpose": lambda x: T.transpose(x),
    "reshape": lambda x: T.reshape(x, (-1,)),
    "index": lambda x: x[1:, ::2],
    "select": lambda x: T.index_select(x, np.array([2, 0, 2])),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_primitive_against_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    base = rng.normal(size=(3, 4))
    base[np.abs(base) < 0.05] = 0.3  # keep away from kinks
    weights = rng.normal(size=UNARY[name](Tensor(base)).shape)

    def scalar(values):
        with no_grad():
            return float(np.sum(UNARY[name](Tensor(values)).data * weights))

    x = Tensor(base.copy(), requires_grad=True)
    backward(T.tsum(UNARY[name](x) * Tensor(weights)))
    fd = fd_gradient(scalar, base.copy())
    scale = max(np.max(np.abs(fd)), 1e-7)
    assert np.max(np.abs(x.grad - fd)) / scale < 1e-4


BINARY = {
    "add": T.add,
    "sub": T.sub,
    "mul": T.mul,
    "div": lambda a, b: T.div(a, b * b + 1.0),
    "matmul": lambda a, b: a @ T.transpose(b),
    "broadcast_add": lambda a, b: a + b[0],
    "concat": lambda a, b: T.concat([a, b], axis=0),
    "stack": lambda a, b: T.stack([a, b], axis=1),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_primitive_against_finite_differences(name):
    rng = np.random.default_rng(7)
    a0, b0 = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    op = BINARY[name]
    weights = rng.normal(size=op(Tensor(a0), Tensor(b0)).shape)
    a, b = Tensor(a0.copy(), requires_grad=True), Tensor(b0.copy(), requires_grad=True)
    backward(T.tsum(op(a, b) * Tensor(weights)))
    for which, tensor in (("a", a), ("b", b)):
        def scalar(values):
            args = (values, b0) if which == "a" else (a0, values)
            with no_grad():
                return float(np.sum(op(Tensor(args[0]), Tensor(args[1])).data * weights))

        fd = fd_gradient(scalar, (a0 if which == "a" else b0).copy())
        assert np.max(np.abs(tensor.grad - fd)) / max(np.max(np.abs(fd)), 1e-7) < 1e-4


def test_embedding_and_layer_norm_gradients():
    rng = np.random.default_rng(1)
    table = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    g = Tensor(rng.normal(size=4) + 1.0, requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)
    ids = np.array([[0, 2, 2], [5, 1, 0]])
    w = Tensor(rng.normal(size=(2, 3, 4)))
    report = grad_check(lambda: T.tsum(T.layer_norm(T.embedding(table, ids), g, b) * w),
                        {"table": table, "g": g, "b": b})
    assert report.passed, report.format()


# -- grad_check --------------------------------------------------------------------------

def test_grad_check_quadratic():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    x = Tensor(rng.normal(size=(4, 1)), requires_grad=True)
    report = grad_check(lambda: T.tsum(T.transpose(x) @ Tensor(A) @ x), [x])
    assert report.max_deviation < 1e-8


def test_grad_check_softmax_cross_entropy():
    rng = np.random.default_rng(1)
    logits = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    labels = rng.integers(0, 3, size=5)
    report = grad_check(lambda: -T.mean(T.log_softmax(logits, axis=1)[np.arange(5), labels]), {"z": logits})
    assert report.max_deviation < 1e-5


def test_grad_check_detects_nondeterminism():
    x = Tensor(np.ones(3), requires_grad=True)
    rng = np.random.default_rng(0)
    with pytest.raises(ContractError):
        grad_check(lambda: T.tsum(x * float(rng.normal())), [x])


def test_grad_check_flags_wrong_gradient():
    x = Tensor(np.array([0.3, -0.7]), requires_grad=True)

    def broken():
        # square with a deliberately wrong derivative (x instead of 2x)
        return T.tsum(T._node(x.data**2, (x,), lambda g: (g * x.data,), "bad_square"))

    assert not grad_check(broken, [x]).passed


def test_grad_check_subsampling_is_seeded():
    x = Tensor(np.random.default_rng(0).normal(size=(10, 10)), requires_grad=True)
    a = grad_check(lambda: T.tsum(T.tanh(x)), {"x": x}, max_entries=5, seed=3)
    b = grad_check(lambda: T.tsum(T.tanh(x)), {"x": x}, max_entries=5, seed=3)
    assert a.deviations == b.deviations and a.passed


def test_operations_are_deterministic():
    x = np.random.default_rng(0).normal(size=(8, 8))

    def run():
        t = Tensor(x)
        return T.softmax(T.gelu(t @ t) * 0.1, axis=1).data

    assert np.array_equal(run(), run())
