"""MLP forward, optimizer, checkpoints, and the finite-difference checker."""

import numpy as np
import pytest

from rmgib.autodiff import Tensor
from rmgib.nn import (MLP, Adam, NonFiniteGradientError, ParamSet, adam_init,
                      gradient_check, load_params, mlp_forward, save_params,
                      sgd_adam_step)


def test_zero_weights_give_zero_output():
    m = MLP.create(3, 2, hidden=(4,), seed=0)
    for name in m.params.names():
        m.params[name].data[:] = 0.0
    out = mlp_forward(m, np.ones((5, 3)))
    assert np.allclose(out.data, 0.0)


def test_identity_single_layer():
    m = MLP.create(3, 3, hidden=(), seed=0)
    m.params["layer0.w"].data = np.eye(3)
    m.params["layer0.b"].data[:] = 0.0
    x = np.random.default_rng(0).standard_normal((4, 3))
    assert np.allclose(mlp_forward(m, x).data, x)


def test_single_unit_affine():
    # one layer, width 1: w=2, b=1, input 3 -> 7 (no activation on output)
    m = MLP.create(1, 1, hidden=(), seed=0)
    m.params["layer0.w"].data = np.array([[2.0]])
    m.params["layer0.b"].data = np.array([1.0])
    assert np.allclose(mlp_forward(m, np.array([3.0])).data, [7.0])


def test_forward_shape_mismatch():
    m = MLP.create(3, 2, hidden=(4,), seed=0)
    with pytest.raises(ValueError):
        mlp_forward(m, np.ones((5, 4)))


def test_adam_zero_gradient_keeps_params():
    m = MLP.create(2, 2, hidden=(3,), seed=1)
    before = m.params.copy_values()
    state = adam_init(m.params)
    grads = {n: np.zeros_like(t.data) for n, t in m.params.tensors.items()}
    sgd_adam_step(m.params, grads, state, lr=0.05)
    for name, val in before.items():
        assert np.allclose(m.params[name].data, val)


def test_adam_optimizes_quadratic():
    params = ParamSet(owner="q")
    w = params.add("w", np.array([1.0]))
    state = adam_init(params)
    steps = 0
    while abs(float(w.data[0])) >= 1e-3:
        grads = {"w": 2.0 * w.data}
        sgd_adam_step(params, grads, state, lr=0.01)
        steps += 1
        assert steps < 5000, "failed to reach |w| < 1e-3"
    assert abs(float(w.data[0])) < 1e-3


def test_adam_non_finite_gradient_names_tensor():
    m = MLP.create(2, 2, hidden=(), seed=1)
    grads = m.params.grads()
    grads["layer0.w"][0, 0] = np.nan
    with pytest.raises(NonFiniteGradientError) as err:
        sgd_adam_step(m.params, grads, adam_init(m.params))
    assert "layer0.w" in str(err.value)


def test_training_trajectories_deterministic():
    def run():
        m = MLP.create(3, 1, hidden=(8,), seed=7)
        opt = Adam(m.params, lr=0.02)
        x = np.random.default_rng(5).standard_normal((16, 3))
        y = x.sum(axis=1, keepdims=True)
        for _ in range(25):
            m.params.zero_grad()
            err = mlp_forward(m, x) - Tensor(y)
            (err * err).mean().backward()
            opt.step()
        return m.params.copy_values()

    a, b = run(), run()
    for name in a:
        assert np.array_equal(a[name], b[name])


def test_init_seed_determinism_and_distinctness():
    a = MLP.create(4, 4, hidden=(8,), seed=3)
    b = MLP.create(4, 4, hidden=(8,), seed=3)
    c = MLP.create(4, 4, hidden=(8,), seed=4)
    assert np.array_equal(a.params["layer0.w"].data, b.params["layer0.w"].data)
    assert not np.array_equal(a.params["layer0.w"].data, c.params["layer0.w"].data)


def test_gradient_check_linear_loss_is_exact():
    params = ParamSet(owner="lin")
    params.add("w", np.array([0.3, -0.7, 1.2]))
    coef = np.array([2.0, 0.5, -1.0])

    def loss_fn(p):
        return (p["w"] * coef).sum()

    assert gradient_check(loss_fn, params, epsilon=1e-6) < 1e-9


def test_gradient_check_flags_sign_flip():
    params = ParamSet(owner="bad")
    params.add("w", np.array([0.4, -0.2]))

    def bad_loss(p):
        w = p["w"]
        out = Tensor((w.data * w.data).sum(), parents=(w,))

        def bw(g):
            w._accumulate(-2.0 * w.data * g)  # wrong sign on purpose

        out._backward = bw
        return out

    assert gradient_check(bad_loss, params, epsilon=1e-6) > 0.1


def test_gradient_check_rejects_non_finite_loss():
    params = ParamSet(owner="nan")
    params.add("w", np.array([1.0]))

    def loss_fn(p):
        return p["w"].log().sum() * np.nan

    with pytest.raises(ValueError):
        gradient_check(loss_fn, params)


def test_checkpoint_roundtrip(tmp_path):
    m = MLP.create(3, 2, hidden=(5,), seed=9)
    path = tmp_path / "params.json"
    save_params(path, m.params)
    loaded = load_params(path)
    assert loaded.names() == m.params.names()
    for name in m.params.names():
        assert np.allclose(loaded[name].data, m.params[name].data)


def test_checkpoint_rejects_other_formats(tmp_path):
    path = tmp_path / "bogus.json"
    path.write_text('{"format": "something-else", "tensors": {}}')
    with pytest.raises(ValueError):
        load_params(path)
