import numpy as np
import pytest

from rmgib.config import ExperimentConfig
from rmgib.graph import generate_sbm, split_nodes


@pytest.fixture(scope="session")
def tiny_graph():
    """10-node, 2-class graph used by the gradient suite."""
    return generate_sbm([5, 5], 0.5, 0.2, 6, 2.0, seed=2)


@pytest.fixture(scope="session")
def small_graph():
    """120-node, 4-class graph with separable features."""
    return generate_sbm([30, 30, 30, 30], 0.15, 0.02, 12, 3.0, seed=1)


@pytest.fixture(scope="session")
def small_splits(small_graph):
    return split_nodes(small_graph, 0.1, 30, 40, seed=0)


@pytest.fixture()
def small_config():
    return ExperimentConfig(
        dataset={"kind": "sbm", "block_sizes": [30] * 4, "p_in": 0.15,
                 "p_out": 0.02, "feature_dim": 12, "feature_signal": 3.0,
                 "seed": 1},
        label_rate=0.1, val_count=30, test_count=40,
        hidden_dim=16, code_dim=8, embed_dim=8,
        epochs=60, mi_epochs=30, attack_epochs=150,
        beta=0.01, gamma=0.01, seeds=[0],
    )


@pytest.fixture()
def tiny_config():
    return ExperimentConfig(
        dataset={"kind": "sbm", "block_sizes": [5, 5], "p_in": 0.5,
                 "p_out": 0.2, "feature_dim": 6, "feature_signal": 2.0,
                 "seed": 2},
        label_rate=0.2, val_count=2, test_count=4,
        hidden_dim=6, code_dim=4, embed_dim=4,
        epochs=10, mi_epochs=8, attack_epochs=20,
        beta=0.01, gamma=0.01, seeds=[0],
    )
