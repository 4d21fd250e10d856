import math

import numpy as np
import pytest

from xlnlu import autodiff as ad
from xlnlu import layers
from xlnlu.autodiff import Tensor


def _zero_lstm(input_dim, hidden_dim):
    p = layers.init_lstm(np.random.default_rng(0), input_dim, hidden_dim)
    p.w_x.data[:] = 0.0
    p.w_h.data[:] = 0.0
    p.b.data[:] = 0.0
    return p


def test_lstm_step_all_zero_weights():
    p = _zero_lstm(2, 3)
    h, c = layers.lstm_step(Tensor(np.ones(2)), Tensor(np.zeros(3)), Tensor(np.zeros(3)), p)
    # gates sit at sigma(0)=0.5 and the candidate at tanh(0)=0
    np.testing.assert_allclose(c.data, np.zeros(3), atol=0)
    np.testing.assert_allclose(h.data, np.zeros(3), atol=0)


def test_lstm_step_zero_weights_carried_cell():
    p = _zero_lstm(1, 1)
    h, c = layers.lstm_step(Tensor([3.0]), Tensor([0.0]), Tensor([2.0]), p)
    # c' = f*c = 0.5*2 = 1; h' = o*tanh(c') = 0.5*tanh(1)
    np.testing.assert_allclose(c.data, [1.0], atol=1e-15)
    np.testing.assert_allclose(h.data, [0.5 * math.tanh(1.0)], atol=1e-15)


def test_lstm_step_dim_mismatch():
    p = layers.init_lstm(np.random.default_rng(0), 2, 3)
    with pytest.raises(ValueError):
        layers.lstm_step(Tensor(np.zeros(5)), Tensor(np.zeros(3)), Tensor(np.zeros(3)), p)


def test_lstm_step_gradients():
    rng = np.random.default_rng(1)
    p = layers.init_lstm(rng, 3, 2)
    x = Tensor(rng.normal(size=3), requires_grad=True)
    h0 = Tensor(rng.normal(size=2), requires_grad=True)
    c0 = Tensor(rng.normal(size=2), requires_grad=True)

    def f():
        h, c = layers.lstm_step(x, h0, c0, p)
        return ad.tsum(ad.mul(h, h)) + ad.tsum(c)

    assert ad.grad_check(f, p.parameters() + [x, h0, c0]) < 1e-4


def test_bilstm_single_token_shape():
    rng = np.random.default_rng(2)
    stack = layers.init_bilstm_stack(rng, 4, 3, num_layers=2)
    out = layers.bilstm_encode(Tensor(rng.normal(size=(1, 4))), stack)
    assert out.data.shape == (1, 6)


def test_bilstm_empty_sequence_rejected():
    rng = np.random.default_rng(2)
    stack = layers.init_bilstm_stack(rng, 4, 3, num_layers=1)
    with pytest.raises(ValueError):
        layers.bilstm_encode(Tensor(np.zeros((0, 4))), stack)


def test_bilstm_reversal_swaps_directions():
    rng = np.random.default_rng(3)
    stack = layers.init_bilstm_stack(rng, 3, 2, num_layers=1)
    # make forward and backward cells identical so reversal is an exact symmetry
    fwd, bwd = stack.layers[0]
    bwd.w_x.data[:] = fwd.w_x.data
    bwd.w_h.data[:] = fwd.w_h.data
    bwd.b.data[:] = fwd.b.data
    x = rng.normal(size=(5, 3))
    h = layers.bilstm_encode(Tensor(x), stack).data
    h_rev = layers.bilstm_encode(Tensor(x[::-1].copy()), stack).data
    d = 2
    for t in range(5):
        np.testing.assert_allclose(h_rev[t, :d], h[4 - t, d:], atol=1e-12)
        np.testing.assert_allclose(h_rev[t, d:], h[4 - t, :d], atol=1e-12)


def test_bilstm_default_encoder_width_is_1024():
    rng = np.random.default_rng(4)
    stack = layers.init_bilstm_stack(rng, 8, 512, num_layers=2)
    out = layers.bilstm_encode(Tensor(rng.normal(size=(2, 8))), stack)
    assert out.data.shape == (2, 1024)


def test_bilstm_gradients():
    rng = np.random.default_rng(5)
    stack = layers.init_bilstm_stack(rng, 2, 2, num_layers=2)
    x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)

    def f():
        h = layers.bilstm_encode(Tensor(x.data) if False else x, stack)
        return ad.tsum(ad.tanh(h))

    assert ad.grad_check(f, stack.parameters() + [x]) < 1e-4


def test_bilstm_deterministic_without_dropout():
    rng = np.random.default_rng(6)
    stack = layers.init_bilstm_stack(rng, 3, 2, num_layers=2, dropout=0.3)
    x = Tensor(rng.normal(size=(4, 3)))
    a = layers.bilstm_encode(x, stack, train_mode=False).data
    b = layers.bilstm_encode(x, stack, train_mode=False).data
    np.testing.assert_array_equal(a, b)


def test_bilstm_dropout_expectation():
    # inverted dropout: averaging over many masks approaches the no-dropout output
    rng = np.random.default_rng(7)
    stack = layers.init_bilstm_stack(rng, 2, 2, num_layers=1, dropout=0.3)
    x = Tensor(rng.normal(size=(3, 2)))
    base = layers.bilstm_encode(x, stack, train_mode=False).data
    acc = np.zeros_like(base)
    n = 400
    drop_rng = np.random.default_rng(100)
    with ad.no_grad():
        for _ in range(n):
            acc += layers.bilstm_encode(x, stack, train_mode=True, rng=drop_rng).data
    # only the input is dropped here, and the net is nonlinear; allow loose agreement
    assert np.max(np.abs(acc / n - base)) < 0.15


def test_batched_encode_matches_unbatched_with_padding():
    rng = np.random.default_rng(8)
    stack = layers.init_bilstm_stack(rng, 3, 2, num_layers=2)
    xs = [rng.normal(size=(4, 3)), rng.normal(size=(2, 3))]
    maxlen = 4
    batch = np.zeros((2, maxlen, 3))
    mask = np.zeros((2, maxlen))
    for i, x in enumerate(xs):
        batch[i, : len(x)] = x
        mask[i, : len(x)] = 1.0
    out = layers.bilstm_run_batch(Tensor(batch), mask, stack).data
    for i, x in enumerate(xs):
        single = layers.bilstm_encode(Tensor(x), stack).data
        np.testing.assert_allclose(out[i, : len(x)], single, atol=1e-12)


def test_self_attention_single_token():
    rng = np.random.default_rng(9)
    p = layers.init_self_attention(rng, 4, 3)
    h = Tensor(rng.normal(size=(1, 4)))
    sent, alpha = layers.self_attention(h, p)
    np.testing.assert_allclose(alpha.data, [1.0], atol=0)
    np.testing.assert_allclose(sent.data, h.data[0], atol=1e-15)


def test_self_attention_zero_w1_is_mean_pool():
    rng = np.random.default_rng(10)
    p = layers.init_self_attention(rng, 4, 3)
    p.w1.data[:] = 0.0
    h = rng.normal(size=(5, 4))
    sent, alpha = layers.self_attention(Tensor(h), p)
    np.testing.assert_allclose(alpha.data, np.full(5, 0.2), atol=1e-12)
    np.testing.assert_allclose(sent.data, h.mean(axis=0), atol=1e-12)


def test_self_attention_gradients():
    rng = np.random.default_rng(11)
    p = layers.init_self_attention(rng, 4, 3)
    h = Tensor(rng.normal(size=(3, 4)), requires_grad=True)

    def f():
        sent, _ = layers.self_attention(h, p)
        return ad.tsum(ad.mul(sent, sent))

    assert ad.grad_check(f, p.parameters() + [h]) < 1e-4


def test_dot_attention_peaked_example():
    query = Tensor([10.0, 0.0])
    keys = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    context, alpha = layers.dot_attention(query, keys)
    np.testing.assert_allclose(alpha.data, [0.9999546, 4.5398e-5], rtol=1e-4)
    np.testing.assert_allclose(context.data, alpha.data, rtol=1e-10)


def test_dot_attention_identical_keys():
    key = np.array([0.3, -0.7, 0.1])
    keys = Tensor(np.tile(key, (4, 1)))
    context, alpha = layers.dot_attention(Tensor(np.array([1.0, 2.0, 3.0])), keys)
    np.testing.assert_allclose(alpha.data, np.full(4, 0.25), atol=1e-12)
    np.testing.assert_allclose(context.data, key, atol=1e-12)


def test_dot_attention_single_key():
    context, alpha = layers.dot_attention(Tensor([1.0, 1.0]), Tensor([[5.0, -2.0]]))
    np.testing.assert_allclose(alpha.data, [1.0], atol=0)
    np.testing.assert_allclose(context.data, [5.0, -2.0], atol=0)


def test_dot_attention_dim_mismatch():
    with pytest.raises(ValueError):
        layers.dot_attention(Tensor([1.0, 2.0, 3.0]), Tensor(np.zeros((2, 2))))


def test_dot_attention_batch_matches_unbatched():
    rng = np.random.default_rng(12)
    q = rng.normal(size=(3, 4))
    keys = rng.normal(size=(3, 5, 4))
    ctx_b, alpha_b = layers.dot_attention_batch(Tensor(q), Tensor(keys))
    for i in range(3):
        ctx, alpha = layers.dot_attention(Tensor(q[i]), Tensor(keys[i]))
        np.testing.assert_allclose(ctx_b.data[i], ctx.data, atol=1e-12)
        np.testing.assert_allclose(alpha_b.data[i], alpha.data, atol=1e-12)


def test_dot_attention_batch_masking():
    rng = np.random.default_rng(13)
    q = rng.normal(size=(1, 3))
    keys = rng.normal(size=(1, 4, 3))
    mask = np.array([[1.0, 1.0, 0.0, 0.0]])
    _, alpha = layers.dot_attention_batch(Tensor(q), Tensor(keys), mask)
    assert alpha.data[0, 2] == pytest.approx(0.0, abs=1e-12)
    assert alpha.data[0, 3] == pytest.approx(0.0, abs=1e-12)
    assert alpha.data[0, :2].sum() == pytest.approx(1.0, abs=1e-9)


def test_attention_weights_normalized():
    rng = np.random.default_rng(14)
    p = layers.init_self_attention(rng, 6, 4)
    for _ in range(20):
        h = Tensor(rng.normal(size=(rng.integers(1, 8), 6)))
        _, alpha = layers.self_attention(h, p)
        assert alpha.data.min() >= 0
        assert abs(alpha.data.sum() - 1.0) < 1e-9
