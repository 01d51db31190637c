"""Attribute and neighbor bottlenecks: encodings, KLs, concrete sampling."""

import math

import numpy as np
import pytest

from rmgib.autodiff import Tensor, constant
from rmgib.bottlenecks import (assemble_selection, attribute_encode, bernoulli_kl,
                               gaussian_kl, gaussian_kl_terms, neighbor_probs,
                               sample_mask)
from rmgib.graph import Graph, k_hop
from rmgib.nn import MLP, ParamSet, gradient_check, mlp_forward


def make_encoder(in_dim=4, dz=3, seed=0):
    return MLP.create(in_dim, 2 * dz, hidden=(5,), seed=seed, owner="f_x")


def test_sigma_floor_at_zero_raw_output():
    f_x = make_encoder()
    for name in f_x.params.names():
        f_x.params[name].data[:] = 0.0
    code = attribute_encode(np.ones(4), f_x, noise_seed=0)
    assert np.allclose(code.sigma.data, math.log(2.0) + 1e-6)
    assert np.allclose(code.mu.data, 0.0)


def test_zero_noise_gives_mean():
    f_x = make_encoder(seed=1)
    code = attribute_encode(np.ones(4), f_x, noise=np.zeros(3))
    assert np.allclose(code.sample.data, code.mu.data)


def test_reparameterization_identity_and_seed_determinism():
    f_x = make_encoder(seed=2)
    a = attribute_encode(np.ones(4), f_x, noise_seed=42)
    b = attribute_encode(np.ones(4), f_x, noise_seed=42)
    assert np.array_equal(a.noise, b.noise)
    assert np.allclose(a.sample.data, a.mu.data + a.sigma.data * a.noise)


def test_encoder_rejects_non_finite():
    f_x = make_encoder()
    f_x.params["layer0.w"].data[0, 0] = np.inf
    with pytest.raises(ValueError):
        attribute_encode(np.ones(4), f_x, noise_seed=0)


def test_gaussian_kl_closed_form_values():
    def kl(mu, sigma):
        code = attribute_encode(np.ones(4), make_encoder(), noise=np.zeros(3))
        code.mu = Tensor(np.array(mu, dtype=float))
        code.sigma = Tensor(np.array(sigma, dtype=float))
        return float(gaussian_kl(code).data)

    assert kl([0.0], [1.0]) == pytest.approx(0.0, abs=1e-12)
    assert kl([1.0], [1.0]) == pytest.approx(0.5, abs=1e-12)
    assert kl([0.0], [2.0]) == pytest.approx(0.5 * (4 - 1 - 2 * math.log(2)), abs=1e-9)


def gauss_kl_quadrature(mu, sigma):
    """Numerical oracle: Gauss-Hermite integration of p log(p/q), per dim."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(201)
    total = 0.0
    for m, s in zip(mu, sigma):
        z = m + s * nodes
        log_p = -0.5 * ((z - m) / s) ** 2 - np.log(s) - 0.5 * np.log(2 * np.pi)
        log_q = -0.5 * z ** 2 - 0.5 * np.log(2 * np.pi)
        total += np.sum(weights * (log_p - log_q)) / np.sqrt(2 * np.pi)
    return total


def test_gaussian_kl_matches_quadrature_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        mu = rng.normal(0, 2, size=3)
        sigma = rng.uniform(0.3, 2.5, size=3)
        closed = float(gaussian_kl_terms(Tensor(mu.reshape(1, -1)),
                                         Tensor(sigma.reshape(1, -1))).data[0])
        assert closed == pytest.approx(gauss_kl_quadrature(mu, sigma), abs=1e-6)


def test_gaussian_kl_nonnegative_property():
    rng = np.random.default_rng(1)
    for _ in range(300):
        mu = rng.normal(0, 3, size=4)
        sigma = rng.uniform(0.05, 5.0, size=4)
        val = float(gaussian_kl_terms(Tensor(mu.reshape(1, -1)),
                                      Tensor(sigma.reshape(1, -1))).data[0])
        assert val >= -1e-12


def path_graph():
    return Graph(3, np.array([[0, 1], [1, 2]]), np.eye(3), np.zeros(3, int), 1)


def identity_embedder(dim):
    m = MLP.create(dim, dim, hidden=(), seed=0, owner="f_n")
    m.params["layer0.w"].data = np.eye(dim)
    m.params["layer0.b"].data[:] = 0.0
    return m


def test_neighbor_probs_orthogonal_and_zero_embeddings():
    g = path_graph()
    nb = k_hop(g, 0, 2)
    f_n = identity_embedder(3)
    p = neighbor_probs(g.features[0], nb, g.features, f_n)
    # identity features are orthogonal one-hots -> logistic(0) = 1/2
    assert np.allclose(p.data, 0.5)
    zero = MLP.create(3, 3, hidden=(), seed=0)
    for name in zero.params.names():
        zero.params[name].data[:] = 0.0
    p0 = neighbor_probs(g.features[0], nb, g.features, zero)
    assert np.allclose(p0.data, 0.5)


def test_neighbor_probs_matched_embedding_value():
    # h = h_u with squared norm ln 3 -> p = logistic(ln 3) = 3/4
    feats = np.full((2, 1), np.sqrt(np.log(3.0)))
    g = Graph(2, np.array([[0, 1]]), feats, np.zeros(2, int), 1)
    nb = k_hop(g, 0, 1)
    p = neighbor_probs(g.features[0], nb, g.features, identity_embedder(1))
    assert float(p.data[0]) == pytest.approx(0.75, abs=1e-12)


def test_neighbor_probs_empty_neighborhood():
    g = Graph(2, np.zeros((0, 2)), np.eye(2), np.zeros(2, int), 1)
    nb = k_hop(g, 0, 1)
    p = neighbor_probs(g.features[0], nb, g.features, identity_embedder(2))
    assert p.data.size == 0


def test_sample_mask_degenerate_probability():
    ones = 0
    for seed in range(2000):
        ms = sample_mask(np.array([1.0]), 1.0, "hard", seed=seed)
        ones += int(ms.hard.data[0] > 0.5)
    assert ones >= 1999  # clamped to 1 - 1e-6


def test_sample_mask_hard_frequency_matches_probability():
    p = np.full(100_000, 0.5)
    ms = sample_mask(p, 1.0, "hard", seed=7)
    assert abs(float(ms.hard.data.mean()) - 0.5) < 0.01


def test_sample_mask_seed_determinism_and_modes():
    p = np.array([0.2, 0.5, 0.9])
    a = sample_mask(p, 1.0, "relaxed", seed=5)
    b = sample_mask(p, 1.0, "relaxed", seed=5)
    assert np.array_equal(a.relaxed.data, b.relaxed.data)
    assert np.all((a.relaxed.data > 0) & (a.relaxed.data < 1))
    hard = sample_mask(p, 1.0, "hard", seed=5)
    assert set(np.unique(hard.hard.data)) <= {0.0, 1.0}
    assert np.array_equal(hard.hard.data, (a.relaxed.data > 0.5).astype(float))
    with pytest.raises(ValueError):
        sample_mask(p, 0.0, "relaxed", seed=1)
    with pytest.raises(ValueError):
        sample_mask(p, 1.0, "weird", seed=1)


def test_hard_mask_straight_through_gradient():
    params = ParamSet(owner="st")
    logit = params.add("logit", np.array([0.3]))

    def loss_fn(p):
        prob = p["logit"].sigmoid()
        ms = sample_mask(prob, 1.0, "hard", noise=np.zeros(1))
        return (ms.hard * 2.0).sum()

    params.zero_grad()
    loss = loss_fn(params)
    loss.backward()
    # straight-through: the gradient equals the relaxed pathway's gradient;
    # with zero noise and temperature 1 the relaxed draw is exactly sigmoid(logit)
    prob = 1 / (1 + np.exp(-0.3))
    assert logit.grad is not None
    assert float(logit.grad[0]) == pytest.approx(2.0 * prob * (1 - prob), abs=1e-9)


def test_bernoulli_kl_values_and_properties():
    assert float(bernoulli_kl(np.array([0.5, 0.5]), 0.5).data) == pytest.approx(0.0, abs=1e-9)
    val = float(bernoulli_kl(np.array([0.8]), 0.5).data)
    expect = 0.8 * math.log(1.6) + 0.2 * math.log(0.4)
    assert val == pytest.approx(expect, abs=1e-9)
    assert val == pytest.approx(0.19274, abs=1e-4)
    assert float(bernoulli_kl(np.zeros(0), 0.5).data) == 0.0
    with pytest.raises(ValueError):
        bernoulli_kl(np.array([0.5]), 1.0)


def test_bernoulli_kl_matches_exhaustive_oracle():
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = rng.uniform(1e-4, 1 - 1e-4, size=4)
        r = rng.uniform(0.05, 0.95)
        closed = float(bernoulli_kl(p, r).data)
        oracle = sum(pi * (math.log(pi) - math.log(r))
                     + (1 - pi) * (math.log(1 - pi) - math.log(1 - r)) for pi in p)
        assert closed == pytest.approx(oracle, abs=1e-9)
        assert closed >= -1e-12
        if np.any(np.abs(p - r) > 1e-3):
            assert closed > 0.0


def test_assemble_selection_masks():
    g = path_graph()
    nb = k_hop(g, 0, 2)  # members [1, 2]
    full = assemble_selection(nb, np.array([1.0, 1.0]))
    assert np.array_equal(full.local_adjacency, nb.local_adjacency)
    empty = assemble_selection(nb, np.array([0.0, 0.0]))
    assert empty.local_adjacency.shape == (1, 1)
    assert empty.selected.size == 0
    # drop the middle node: node 2 loses its path to the center
    dropped = assemble_selection(nb, np.array([0.0, 1.0]))
    assert dropped.selected.tolist() == [2]
    assert dropped.local_adjacency[0, 1] == 0.0
    with pytest.raises(ValueError):
        assemble_selection(nb, np.array([1.0]))


def test_kl_gradients_pass_fd_check():
    params = ParamSet(owner="kl")
    params.add("mu", np.array([0.4, -0.7]))
    params.add("raw", np.array([0.2, -0.1]))
    params.add("plogit", np.array([0.3, -0.5]))

    def loss_fn(p):
        sigma = p["raw"].softplus() + 1e-6
        kl_g = gaussian_kl_terms(p["mu"].reshape(1, -1), sigma.reshape(1, -1)).sum()
        probs = p["plogit"].sigmoid()
        kl_b = bernoulli_kl(probs, 0.4)
        ms = sample_mask(probs, 1.0, "relaxed",
                         noise=np.array([0.37, -1.2]))
        return kl_g + kl_b + (ms.relaxed * np.array([1.3, -0.4])).sum()

    assert gradient_check(loss_fn, params, epsilon=1e-6) < 1e-7
