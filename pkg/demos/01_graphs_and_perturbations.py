"""Build synthetic graphs, split them, and attack their structure.

Walks through the graph layer: a stochastic block model with class-mean
features, train/val/test splits at a 2% label rate, K-hop neighborhoods,
and the two structure attacks (uniform random flips and heterophilic
edge injection aimed at low-similarity cross-class pairs).
"""

import numpy as np

from rmgib import (generate_sbm, k_hop, perturb_heterophilic, perturb_random,
                   save_graph, split_nodes)

g = generate_sbm(block_sizes=[60, 60, 60, 60], p_in=0.08, p_out=0.01,
                 feature_dim=16, feature_signal=1.5, seed=7)
print(f"graph: {g.node_count} nodes, {g.edge_count} edges, "
      f"{g.class_count} classes, avg degree {2 * g.edge_count / g.node_count:.1f}")

splits = split_nodes(g, label_rate=0.02, val_count=40, test_count=80, seed=0)
print(f"splits: {len(splits.train_ids)} train / {len(splits.val_ids)} val / "
      f"{len(splits.test_ids)} test")

nb = k_hop(g, center=0, k=2)
hops = np.array([nb.hop_of[int(u)] for u in nb.members])
print(f"node 0 sees {np.sum(hops == 1)} one-hop and {np.sum(hops == 2)} "
      f"two-hop members")

# uniform random flips at a 20% edge budget
flipped = perturb_random(g, rate=0.2, seed=1)
print(f"random perturbation: {g.edge_count} -> {flipped.edge_count} edges")

# adversarial injection: cross-class pairs with the least similar features
attacked = perturb_heterophilic(g, rate=0.2, labels=g.labels, seed=1)
added = attacked.edge_codes() - g.edge_codes()
cross = sum(g.labels[c // g.node_count] != g.labels[c % g.node_count]
            for c in added)
print(f"heterophilic perturbation: added {len(added)} edges, "
      f"{cross} of them cross-class")

save_graph(attacked, "/tmp/demo_nodes.tsv", "/tmp/demo_edges.tsv")
print("wrote /tmp/demo_nodes.tsv and /tmp/demo_edges.tsv")
