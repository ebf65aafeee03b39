import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dgpi import autodiff as ad
from dgpi.networks import (Checkpoint, LinearPolicy, MlpSpec, PolicyNetwork, QuadraticValue,
                           ValueNetwork, init_params, mlp_forward)


def test_param_count_and_layout():
    spec = MlpSpec([3, 64, 64, 1], "softplus")
    assert spec.n_params == 3 * 64 + 64 + 64 * 64 + 64 + 64 + 1
    zb = MlpSpec([3, 8, 1], "logsq", zero_bias=True)
    assert zb.n_params == 3 * 8 + 8
    assert all(not b for _, _, b in zb.layer_shapes())


def test_glorot_bounds_and_zero_biases():
    spec = MlpSpec([5, 32, 2], "linear")
    p = init_params(spec, 3).flat
    w1 = p[:5 * 32]
    b1 = p[5 * 32:5 * 32 + 32]
    assert np.max(np.abs(w1)) <= np.sqrt(6 / 37)
    np.testing.assert_array_equal(b1, 0.0)


def test_init_is_deterministic_per_seed():
    spec = MlpSpec([3, 16, 1], "softplus")
    np.testing.assert_array_equal(init_params(spec, 7).flat, init_params(spec, 7).flat)
    assert not np.array_equal(init_params(spec, 7).flat, init_params(spec, 8).flat)


def test_forward_matches_manual_numpy(rng):
    spec = MlpSpec([3, 4, 2], "tanh", output_scale=(0.35, 3.0))
    p = rng.normal(size=spec.n_params)
    x = rng.normal(size=(5, 3))
    W1, b1 = p[:12].reshape(4, 3), p[12:16]
    W2, b2 = p[16:24].reshape(2, 4), p[24:26]
    h = x @ W1.T + b1
    h = np.where(h > 0, h, np.expm1(h))
    expect = np.tanh(h @ W2.T + b2) * [0.35, 3.0]
    np.testing.assert_allclose(mlp_forward(spec, p, x), expect, rtol=1e-13)


@given(st.integers(0, 10_000))
def test_zero_bias_value_vanishes_at_shift(seed):
    spec = MlpSpec([5, 8, 8, 1], "logsq", zero_bias=True)
    shift = np.array([0.0, 0.0, 12.0, 0.0, 0.0])
    w = np.random.default_rng(seed).normal(scale=3.0, size=spec.n_params)
    v = ValueNetwork(spec, w, shift)
    assert v(shift) == 0.0
    assert v.zero_at_shift


@given(st.integers(0, 10_000))
def test_value_outputs_are_non_negative(seed):
    rng = np.random.default_rng(seed)
    for act, zb in (("softplus", False), ("logsq", True)):
        spec = MlpSpec([3, 8, 1], act, zero_bias=zb)
        v = ValueNetwork(spec, rng.normal(scale=4.0, size=spec.n_params))
        assert np.all(v(rng.normal(scale=5.0, size=(50, 3))) >= 0.0)


def test_tanh_policy_respects_bounds(rng):
    spec = MlpSpec([5, 8, 2], "tanh", output_scale=(0.35, 3.0))
    pol = PolicyNetwork(spec, rng.normal(scale=10.0, size=spec.n_params))
    u = pol(rng.normal(scale=10.0, size=(100, 5)))
    assert np.all(np.abs(u[:, 0]) <= 0.35) and np.all(np.abs(u[:, 1]) <= 3.0)


def test_value_output_scale_multiplies(rng):
    plain = MlpSpec([3, 4, 1], "softplus")
    scaled = MlpSpec([3, 4, 1], "softplus", output_scale=(50.0,))
    w = rng.normal(size=plain.n_params)
    x = rng.normal(size=(4, 3))
    np.testing.assert_allclose(ValueNetwork(scaled, w)(x), 50.0 * ValueNetwork(plain, w)(x))


@pytest.mark.parametrize("kwargs", [
    dict(widths=[3]),
    dict(widths=[3, 0, 1]),
    dict(widths=[3, 4, 1], output_activation="relu"),
    dict(widths=[3, 4, 2], output_activation="tanh"),
    dict(widths=[3, 4, 2], output_activation="tanh", output_scale=(1.0,)),
    dict(widths=[3, 4, 1], hidden_activation="relu"),
    dict(widths=[3, 4, 1], output_activation="linear", output_scale=(2.0,)),
])
def test_invalid_specs_rejected(kwargs):
    with pytest.raises(ValueError):
        MlpSpec(**kwargs)


def test_wrong_input_width_raises(rng):
    spec = MlpSpec([3, 4, 1], "softplus")
    with pytest.raises(ad.ShapeError):
        mlp_forward(spec, np.zeros(spec.n_params), np.zeros(4))


def test_quadratic_and_linear_reference_approximators():
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    K = np.array([[1.0, -2.0]])
    x = np.array([1.0, 2.0])
    assert QuadraticValue(P)(x) == pytest.approx(x @ P @ x)
    np.testing.assert_allclose(LinearPolicy(K)(x), -K @ x)


def test_checkpoint_round_trip_is_exact(tmp_path, rng):
    vs = MlpSpec([5, 8, 1], "softplus", output_scale=(100.0,))
    ps = MlpSpec([5, 8, 2], "tanh", output_scale=(0.35, 3.0))
    shift = np.array([0, 0, 12.0, 0, 0])
    v = ValueNetwork(vs, rng.normal(size=vs.n_params), shift)
    p = PolicyNetwork(ps, rng.normal(size=ps.n_params), shift)
    path = tmp_path / "c.json"
    Checkpoint("vehicle", v, p, {"seed": 1}).save(path)
    back = Checkpoint.load(path)
    assert back.model == "vehicle" and back.meta == {"seed": 1}
    np.testing.assert_array_equal(back.value.params, v.params)
    np.testing.assert_array_equal(back.policy.params, p.params)
    x = rng.normal(size=(3, 5))
    np.testing.assert_array_equal(back.policy(x), p(x))


def test_checkpoint_rejects_foreign_documents(tmp_path):
    path = tmp_path / "x.json"
    path.write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        Checkpoint.load(path)
