"""GCN forward, classification loss, and the reference models."""

import math

import numpy as np
import pytest

from rmgib.autodiff import Tensor
from rmgib.graph import generate_sbm, split_nodes
from rmgib.nn import ParamSet, gradient_check
from rmgib.predictor import (GCNStack, Posterior, TrainingDivergedError, accuracy,
                             baseline_gcn_train, classification_loss, gcn_forward,
                             gcn_ib_train, gcn_pl_train, normalized_adjacency)


def plain_stack(in_dim, out_dim, hidden=(), seed=0, variant="gcn"):
    return GCNStack.create(in_dim, out_dim, hidden=hidden, seed=seed, variant=variant)


def test_single_node_identity_layer():
    stack = plain_stack(3, 3)
    stack.params["layer0.w"].data = np.eye(3)
    stack.params["layer0.b"].data[:] = 0.0
    code = np.array([[0.2, -1.0, 0.5]])
    post = gcn_forward(code, np.zeros((1, 1)), stack)
    assert np.allclose(post.logits, code[0])


def test_zero_codes_give_uniform_posterior():
    stack = plain_stack(4, 5, hidden=(6,), seed=1)
    post = gcn_forward(np.zeros((3, 4)), np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]],
                                                  dtype=float), stack)
    assert np.allclose(post.probs, 0.2)


def test_two_node_clique_averages_codes():
    stack = plain_stack(2, 2)
    stack.params["layer0.w"].data = np.eye(2)
    stack.params["layer0.b"].data[:] = 0.0
    codes = np.array([[1.0, 0.0], [0.0, 1.0]])
    a_s = np.array([[0.0, 1.0], [1.0, 0.0]])
    post = gcn_forward(codes, a_s, stack)
    # both degrees 2 under self-loops: center logits = (e1 + e2) / 2
    assert np.allclose(post.logits, [0.5, 0.5])


def test_gcn_forward_shape_checks():
    stack = plain_stack(3, 2)
    with pytest.raises(ValueError):
        gcn_forward(np.zeros((2, 3)), np.zeros((3, 3)), stack)
    with pytest.raises(ValueError):
        gcn_forward(np.zeros((2, 4)), np.zeros((2, 2)), stack)


def test_all_neighbors_dropped_equals_mlp_on_center():
    stack = plain_stack(3, 2, hidden=(4,), seed=3)
    code = np.random.default_rng(0).standard_normal((1, 3))
    post = gcn_forward(code, np.zeros((1, 1)), stack)
    h = Tensor(code)
    for i in range(stack.n_layers):
        h = h @ stack.params[f"layer{i}.w"] + stack.params[f"layer{i}.b"]
        if i < stack.n_layers - 1:
            h = h.relu()
    assert np.allclose(post.logits, h.data[0])


def test_classification_loss_values():
    uniform = [Posterior.from_probs(np.full(7, 1 / 7)) for _ in range(3)]
    val = float(classification_loss(uniform, [0, 3, 6]).data)
    assert val == pytest.approx(math.log(7), abs=1e-9)

    onehot = [Posterior.from_probs(np.array([1 - 2e-9, 1e-9, 1e-9]))]
    assert float(classification_loss(onehot, [0]).data) == pytest.approx(0.0, abs=1e-6)

    p = [Posterior.from_probs(np.array([0.5, 0.25, 0.25]))]
    assert float(classification_loss(p, [1]).data) == pytest.approx(math.log(4), abs=1e-9)


def test_classification_loss_gradient():
    params = ParamSet(owner="clf")
    params.add("logits", np.array([[0.3, -0.2, 1.0], [0.1, 0.9, -0.5]]))

    def loss_fn(p):
        return classification_loss(p["logits"], np.array([2, 1]))

    assert gradient_check(loss_fn, params, epsilon=1e-6) < 1e-7


def test_posterior_rows_sum_to_one_and_permutation_equivariance():
    stack = plain_stack(3, 4, hidden=(5,), seed=2)
    rng = np.random.default_rng(1)
    codes = rng.standard_normal((4, 3))
    a_s = np.array([[0, 1, 1, 0], [1, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0]],
                   dtype=float)
    post = gcn_forward(codes, a_s, stack)
    assert post.probs.sum() == pytest.approx(1.0, abs=1e-9)

    perm = np.array([2, 0, 3, 1])
    permuted = plain_stack(3, 4, hidden=(5,), seed=2)
    for name in stack.params.names():
        permuted.params[name].data = stack.params[name].data.copy()
    last = f"layer{stack.n_layers - 1}"
    permuted.params[f"{last}.w"].data = stack.params[f"{last}.w"].data[:, perm]
    permuted.params[f"{last}.b"].data = stack.params[f"{last}.b"].data[perm]
    post_p = gcn_forward(codes, a_s, permuted)
    assert np.allclose(post_p.probs, post.probs[perm])
    # argmax permutes accordingly
    assert perm[np.argmax(post_p.probs)] == np.argmax(post.probs)


def test_normalized_adjacency_variants():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    sym = normalized_adjacency(a, "gcn")
    assert np.allclose(sym, np.full((2, 2), 0.5))
    mean = normalized_adjacency(a, "mean")
    assert np.allclose(mean.sum(axis=1), 1.0)


def test_baseline_gcn_learns_separable_fixture(small_graph, small_splits, small_config):
    _, probs = baseline_gcn_train(small_graph, small_splits, small_config, seed=0)
    acc = accuracy(probs, small_graph.labels, small_splits.test_ids)
    assert acc > 0.9
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_baseline_gcn_chance_on_no_signal(small_config):
    g = generate_sbm([30, 30, 30, 30], 0.05, 0.05, 12, 0.0, seed=3)
    splits = split_nodes(g, 0.1, 30, 40, seed=0)
    _, probs = baseline_gcn_train(g, splits, small_config, seed=0)
    acc = accuracy(probs, g.labels, splits.test_ids)
    assert abs(acc - 0.25) < 0.17  # binomial noise around chance


def test_baseline_gcn_divergence_raises(small_graph, small_splits, small_config):
    # a step size past float64 range overflows the second layer into nan
    cfg = small_config.replace(lr=1e200, epochs=10)
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError) as err:
        baseline_gcn_train(small_graph, small_splits, cfg, seed=0)
    assert err.value.epoch >= 0


def test_baseline_gcn_empty_split_raises(small_graph, small_splits, small_config):
    import dataclasses

    empty = dataclasses.replace(small_splits, train_ids=np.zeros(0, dtype=np.int64),
                                train_labels=np.zeros(0, dtype=np.int64))
    with pytest.raises(ValueError):
        baseline_gcn_train(small_graph, empty, small_config, seed=0)


def test_gcn_pl_trains_and_keeps_given_labels(small_graph, small_splits, small_config):
    _, probs = gcn_pl_train(small_graph, small_splits, small_config, seed=0)
    acc = accuracy(probs, small_graph.labels, small_splits.test_ids)
    assert acc > 0.85


def test_gcn_ib_beta_zero_reduces_to_classification_objective(
        small_graph, small_splits, small_config):
    # with beta = 0 the objective is the NLL alone: both runs share draws,
    # so the encoder+stack trajectories are identical with/without the kl term
    cfg0 = small_config.replace(beta=0.0, epochs=10)
    model_a, probs_a = gcn_ib_train(small_graph, small_splits, cfg0, seed=4)
    model_b, probs_b = gcn_ib_train(small_graph, small_splits, cfg0, seed=4)
    assert np.array_equal(probs_a, probs_b)


def test_gcn_ib_trains(small_graph, small_splits, small_config):
    cfg = small_config.replace(beta=0.001)
    _, probs = gcn_ib_train(small_graph, small_splits, cfg, seed=0)
    acc = accuracy(probs, small_graph.labels, small_splits.test_ids)
    assert acc > 0.85


def test_sgc_and_mean_variants_run(small_graph, small_splits, small_config):
    for variant in ("sgc", "mean"):
        cfg = small_config.replace(predictor_variant=variant, epochs=30)
        _, probs = baseline_gcn_train(small_graph, small_splits, cfg, seed=0)
        assert accuracy(probs, small_graph.labels, small_splits.test_ids) > 0.5


def test_heterophilic_attack_degrades_gcn(small_config):
    from rmgib.graph import perturb_heterophilic

    g = generate_sbm([50, 50, 50], 0.08, 0.005, 12, 2.0, seed=6)
    splits = split_nodes(g, 0.1, 30, 60, seed=0)
    cfg = small_config.replace(epochs=80)
    _, clean_probs = baseline_gcn_train(g, splits, cfg, seed=0)
    clean_acc = accuracy(clean_probs, g.labels, splits.test_ids)

    attacked = perturb_heterophilic(g, 0.2, g.labels, seed=1)
    _, pert_probs = baseline_gcn_train(attacked, splits, cfg, seed=0)
    pert_acc = accuracy(pert_probs, attacked.labels, splits.test_ids)
    assert clean_acc - pert_acc >= 0.05
