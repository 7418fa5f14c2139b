import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrkd.encoder import EncoderOutput
from hrkd.exceptions import DomainError
from hrkd.prototypes import compute_prototypes, masked_mean
from hrkd.tensor import Tensor, backward


def fake_output(emb, hidden):
    return EncoderOutput(Tensor(emb, requires_grad=True), [], [Tensor(h, requires_grad=True) for h in hidden], None)


def loop_masked_mean(states, mask):
    acc = np.zeros(states.shape[-1])
    count = 0
    for b in range(states.shape[0]):
        for l in range(states.shape[1]):
            if mask[b, l]:
                acc += states[b, l]
                count += 1
    return acc / count


def test_constant_vector():
    v = np.array([0.5, -1.0, 2.0])
    states = np.broadcast_to(v, (2, 4, 3)).copy()
    mask = np.array([[1, 1, 0, 0], [1, 1, 1, 1]], dtype=bool)
    out = compute_prototypes([fake_output(states, [states, states])], [mask])
    assert out.shape == (3, 1, 3)
    np.testing.assert_allclose(out.data[:, 0], np.tile(v, (3, 1)), atol=1e-15)


def test_two_single_token_samples():
    states = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    out = masked_mean(Tensor(states), np.ones((2, 1), dtype=bool))
    np.testing.assert_array_equal(out.data, [0.5, 0.5])


def test_loop_oracle_with_padding():
    rng = np.random.default_rng(0)
    outputs, masks, refs = [], [], []
    for d in range(3):
        emb = rng.normal(size=(4, 6, 5))
        hidden = [rng.normal(size=(4, 6, 5)) for _ in range(2)]
        mask = rng.random((4, 6)) < 0.6
        mask[:, 0] = True
        outputs.append(fake_output(emb, hidden))
        masks.append(mask)
        refs.append([loop_masked_mean(x, mask) for x in [emb] + hidden])
    out = compute_prototypes(outputs, masks).data
    assert out.shape == (3, 3, 5)
    for d in range(3):
        for m in range(3):
            np.testing.assert_allclose(out[m, d], refs[d][m], rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_permutation_invariance_and_scaling(seed, scale):
    rng = np.random.default_rng(seed)
    states = rng.normal(size=(3, 5, 4))
    mask = rng.random((3, 5)) < 0.7
    mask[0, 0] = True
    base = masked_mean(Tensor(states), mask).data
    perm_b, perm_l = rng.permutation(3), rng.permutation(5)
    shuffled = masked_mean(Tensor(states[perm_b][:, perm_l]), mask[perm_b][:, perm_l]).data
    np.testing.assert_allclose(shuffled, base, atol=1e-12)
    np.testing.assert_allclose(masked_mean(Tensor(states * scale), mask).data, base * scale, rtol=1e-12, atol=1e-12)


def test_gradient_is_inverse_count():
    mask = np.array([[1, 1, 0], [1, 0, 0]], dtype=bool)
    states = Tensor(np.random.default_rng(1).normal(size=(2, 3, 4)), requires_grad=True)
    backward(masked_mean(states, mask).sum())
    expected = np.where(mask[:, :, None], 1.0 / 3, 0.0) * np.ones(4)
    np.testing.assert_allclose(states.grad, expected, atol=1e-15)


def test_detach_stops_gradient():
    emb = np.ones((1, 2, 3))
    out = fake_output(emb, [emb])
    protos = compute_prototypes([out], [np.ones((1, 2), dtype=bool)], detach=True)
    assert not protos.requires_grad


def test_empty_domain_is_named():
    ok = fake_output(np.ones((1, 2, 3)), [np.ones((1, 2, 3))])
    with pytest.raises(DomainError, match="domain 1"):
        compute_prototypes([ok, ok], [np.ones((1, 2), dtype=bool), np.zeros((1, 2), dtype=bool)])
