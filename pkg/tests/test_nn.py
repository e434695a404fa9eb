import math
from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roep import nn


# ---------------------------------------------------------------------------
# affine and recurrent cell

def test_affine_identity_and_constant():
    x = np.array([0.4, -1.2, 3.0])
    assert np.array_equal(nn.affine_forward(np.eye(3), np.zeros(3), x), x)
    c = np.array([5.0, -2.0])
    y = nn.affine_forward(np.zeros((2, 3)), c, x)
    assert np.array_equal(y, c)


def test_affine_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        nn.affine_forward(np.eye(3), np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError, match="shape mismatch"):
        nn.affine_forward(np.eye(3), np.zeros(2), np.zeros(3))


def test_affine_gradients_match_finite_differences(rng):
    W = rng.normal(size=(5, 4))
    b = rng.normal(size=5)
    x = rng.normal(size=4)
    dy = rng.normal(size=5)
    dW, db, dx = nn.affine_backward(dy, W, x)
    loss = lambda: float(dy @ nn.affine_forward(W, b, x))
    assert nn.max_rel_error(nn.finite_difference(loss, W), dW) < 1e-6
    assert nn.max_rel_error(nn.finite_difference(loss, b), db) < 1e-6
    assert nn.max_rel_error(nn.finite_difference(loss, x), dx) < 1e-6


def test_recurrent_cell_zero_params_and_nonnegativity(rng):
    m_prev = rng.normal(size=6)
    c = rng.normal(size=9)
    m, _ = nn.recurrent_cell_forward(
        np.zeros((6, 6)), np.zeros((6, 9)), np.zeros(6), m_prev, c
    )
    assert np.array_equal(m, np.zeros(6))
    m, _ = nn.recurrent_cell_forward(
        rng.normal(size=(6, 6)), rng.normal(size=(6, 9)), rng.normal(size=6), m_prev, c
    )
    assert np.all(m >= 0)


def test_recurrent_cell_shape_mismatch(rng):
    with pytest.raises(ValueError):
        nn.recurrent_cell_forward(
            np.zeros((6, 6)), np.zeros((6, 9)), np.zeros(6), np.zeros(5), np.zeros(9)
        )


def test_recurrent_cell_gradients(rng):
    Wm = rng.normal(size=(5, 5))
    Wc = rng.normal(size=(5, 7))
    b = rng.normal(size=5) + 0.4  # keep pre-activations off the kink
    m_prev = rng.normal(size=5)
    c = rng.normal(size=7)
    dy = rng.normal(size=5)
    _, pre = nn.recurrent_cell_forward(Wm, Wc, b, m_prev, c)
    assert np.abs(pre).min() > 1e-4
    grads = nn.recurrent_cell_backward(dy, pre, Wm, Wc, m_prev, c)
    loss = lambda: float(dy @ nn.recurrent_cell_forward(Wm, Wc, b, m_prev, c)[0])
    for arr, g in zip((Wm, Wc, b, m_prev, c), grads):
        assert nn.max_rel_error(nn.finite_difference(loss, arr), g) < 1e-6


# ---------------------------------------------------------------------------
# softmax and sampling

def test_softmax_uniform_sampling_frequencies():
    rng = np.random.default_rng(5)
    counts = np.zeros(3)
    n = 100_000
    for _ in range(n):
        idx, logp, p = nn.softmax_categorical(np.zeros(3), rng)
        counts[idx] += 1
    assert np.all(np.abs(counts / n - 1 / 3) < 0.01)


def test_softmax_extreme_logits_stable():
    idx, logp, p = nn.softmax_categorical(np.array([1000.0, 0.0, 0.0]), np.random.default_rng(0))
    assert idx == 0
    assert p[0] == pytest.approx(1.0)
    assert np.isfinite(logp)


def test_softmax_analytic_two_way():
    p = nn.softmax(np.array([math.log(2.0), 0.0]))
    assert np.allclose(p, [2 / 3, 1 / 3])


def test_softmax_rejects_non_finite():
    with pytest.raises(ValueError, match="non-finite"):
        nn.softmax(np.array([np.nan, 0.0]))
    with pytest.raises(ValueError, match="non-finite"):
        nn.softmax_categorical(np.array([np.inf, 0.0]), np.random.default_rng(0))


@given(
    st.lists(st.floats(-30, 30), min_size=2, max_size=6),
    st.floats(-50, 50),
)
@settings(max_examples=80, deadline=None)
def test_softmax_normalized_and_shift_invariant(logits, shift):
    z = np.array(logits)
    p = nn.softmax(z)
    assert abs(p.sum() - 1.0) < 1e-12
    q = nn.softmax(z + shift)
    assert np.all(np.abs(p - q) < 1e-12)


# ---------------------------------------------------------------------------
# losses

def test_bce_values():
    assert nn.bce_loss(1, 1.0) == pytest.approx(0.0, abs=1e-9)
    assert nn.bce_loss(1, 0.5) == pytest.approx(math.log(2.0))
    assert nn.bce_loss(0, 0.5) == pytest.approx(math.log(2.0))
    assert np.isfinite(nn.bce_loss(1, 0.0))  # clamped


def test_prediction_loss_gradient(rng):
    for y in (0, 1):
        logits = rng.normal(size=2)
        _, dlogits, y_hat = nn.prediction_loss(logits, y)
        loss = lambda: nn.prediction_loss(logits, y)[0]
        assert nn.max_rel_error(nn.finite_difference(loss, logits), dlogits) < 1e-6
        assert 0.0 < y_hat < 1.0


def test_reinforce_zero_when_baseline_matches_return():
    lps = [-0.1, -0.2, -0.3]
    returns = [1.5, 1.5, 1.5]
    assert nn.reinforce_loss(lps, returns, returns) == 0.0
    p = nn.softmax(np.array([0.3, -0.2, 0.1]))
    assert np.array_equal(nn.reinforce_dlogits(p.copy(), 1, 0.0), np.zeros(3))


def test_reinforce_single_step_analytic(rng):
    logits = rng.normal(size=3)
    p = nn.softmax(logits)
    action, advantage = 2, 0.7
    expected = -advantage * (np.eye(3)[action] - p)
    assert np.allclose(nn.reinforce_dlogits(p.copy(), action, advantage), expected)
    loss = lambda: -math.log(nn.softmax(logits)[action]) * advantage
    assert nn.max_rel_error(
        nn.finite_difference(loss, logits), nn.reinforce_dlogits(nn.softmax(logits), action, advantage)
    ) < 1e-6


def test_reinforce_length_mismatch():
    with pytest.raises(ValueError, match="lengths"):
        nn.reinforce_loss([-0.1], [1.0, 2.0], [0.0, 0.0])
    with pytest.raises(ValueError, match="lengths"):
        nn.baseline_loss([1.0, 2.0], [0.0])


def test_baseline_loss_values_and_gradient(rng):
    assert nn.baseline_loss([1.5, 0.3], [1.5, 0.3])[0] == 0.0
    assert nn.baseline_loss([1.5], [0.0])[0] == pytest.approx(2.25)
    returns = rng.normal(size=6)
    baselines = rng.normal(size=6)
    _, db = nn.baseline_loss(returns, baselines)
    loss = lambda: nn.baseline_loss(returns, baselines)[0]
    assert nn.max_rel_error(nn.finite_difference(loss, baselines), db) < 1e-6


# ---------------------------------------------------------------------------
# parameters and Adam

def build_params(rng, n=40):
    p = nn.Parameters()
    p.add("w", rng.normal(size=(5, 4)))
    p.add("b", rng.normal(size=5))
    p.add("t", rng.normal(size=(3, 2, 1)))
    return p.build()


def test_parameters_views_share_flat_buffer(rng):
    p = build_params(rng)
    p.value("w")[0, 0] = 123.0
    assert p.values[0] == 123.0
    with pytest.raises(ValueError, match="duplicate"):
        q = nn.Parameters()
        q.add("x", np.zeros(2))
        q.add("x", np.zeros(2))


def test_adam_fresh_zero_gradient_is_identity(rng):
    p = build_params(rng)
    before = p.copy_values()
    nn.adam_step(p, lr=1e-3)
    assert np.array_equal(p.values, before)


def test_adam_moments_decay_on_zero_gradient(rng):
    p = build_params(rng)
    p.grads[:] = 1.0
    nn.adam_step(p, lr=1e-3)
    m1 = p.adam_m.copy()
    v1 = p.adam_v.copy()
    nn.adam_step(p, lr=1e-3)  # zero gradient now
    assert np.allclose(p.adam_m, nn.ADAM_BETA1 * m1)
    assert np.allclose(p.adam_v, nn.ADAM_BETA2 * v1)


def test_adam_first_step_closed_form(rng):
    p = build_params(rng)
    g = rng.normal(size=p.values.shape)
    p.grads[:] = g
    before = p.copy_values()
    nn.adam_step(p, lr=1e-3)
    expected = before - 1e-3 * g / (np.abs(g) + nn.ADAM_EPS)
    assert np.allclose(p.values, expected, rtol=0, atol=1e-15)
    assert np.all(p.grads == 0.0)


def test_adam_constant_gradient_step_magnitude_approaches_lr(rng):
    p = build_params(rng)
    g = np.full(p.values.shape, 0.37)
    for _ in range(300):
        p.grads[:] = g
        prev = p.copy_values()
        nn.adam_step(p, lr=1e-3)
    delta = np.abs(p.values - prev)
    assert np.all(np.abs(delta - 1e-3) < 1e-5)


# ---------------------------------------------------------------------------
# checkpoint container

def test_checkpoint_round_trip_bit_exact(rng, tmp_path):
    p = build_params(rng)
    p.grads[:] = rng.normal(size=p.values.shape)
    nn.adam_step(p, lr=1e-3)
    path = tmp_path / "model.ckpt"
    nn.save_checkpoint(p, path)
    q = build_params(np.random.default_rng(999))
    nn.load_checkpoint(q, path)
    assert np.array_equal(p.values, q.values)
    assert np.array_equal(p.adam_m, q.adam_m)
    assert np.array_equal(p.adam_v, q.adam_v)
    assert p.adam_t == q.adam_t
    # second round trip produces identical bytes
    path2 = tmp_path / "model2.ckpt"
    nn.save_checkpoint(q, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_format_header(tmp_path, rng):
    p = build_params(rng)
    path = tmp_path / "model.ckpt"
    nn.save_checkpoint(p, path)
    raw = path.read_bytes()
    assert raw[:4] == b"ROEP"
    assert int.from_bytes(raw[4:8], "little") == 1

    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        nn.load_tensors(bad)
    worse = tmp_path / "worse.ckpt"
    worse.write_bytes(b"ROEP" + (99).to_bytes(4, "little") + raw[8:])
    with pytest.raises(ValueError, match="version"):
        nn.load_tensors(worse)


def test_save_tensors_preserves_order_and_shapes(tmp_path, rng):
    tensors = OrderedDict()
    tensors["alpha"] = rng.normal(size=(2, 3))
    tensors["beta.m"] = rng.normal(size=4)
    path = tmp_path / "t.ckpt"
    nn.save_tensors(path, tensors)
    loaded = nn.load_tensors(path)
    assert list(loaded) == ["alpha", "beta.m"]
    for k in tensors:
        assert loaded[k].shape == tensors[k].shape
        assert np.array_equal(loaded[k], tensors[k])
