"""The two bottlenecks, step by step on one node.

Encodes a node's attributes into a Gaussian code (reparameterized sample,
closed-form KL to the standard normal), scores its neighbors, draws a
relaxed concrete mask, and assembles the surviving local subgraph.
"""

import numpy as np

from rmgib import (assemble_selection, attribute_encode, bernoulli_kl,
                   gaussian_kl, generate_sbm, k_hop, neighbor_probs, sample_mask)
from rmgib.nn import MLP

g = generate_sbm([30, 30, 30], 0.15, 0.02, feature_dim=12, feature_signal=2.0,
                 seed=3)
center = 0
nb = k_hop(g, center, k=2)
print(f"center {center} has {nb.members.size} members within 2 hops")

# Gaussian attribute code: sample = mu + sigma * eps
f_x = MLP.create(g.feature_dim, 2 * 8, hidden=(32,), seed=0, owner="f_x")
code = attribute_encode(g.features[center], f_x, noise_seed=11)
print(f"code dims: mu {code.mu.shape}, sigma in "
      f"[{code.sigma.data.min():.3f}, {code.sigma.data.max():.3f}]")
print(f"attribute KL to N(0, I): {float(gaussian_kl(code).data):.4f} nats")

# neighbor retention probabilities from embedding inner products
f_n = MLP.create(g.feature_dim, 8, hidden=(32,), seed=1, owner="f_n")
probs = neighbor_probs(g.features[center], nb, g.features, f_n)
print(f"retention probs: mean {probs.data.mean():.3f}, "
      f"KL to Bernoulli(0.5): {float(bernoulli_kl(probs, 0.5).data):.4f} nats")

# one relaxed draw (training) and its hard thresholding (inference)
mask = sample_mask(probs, temperature=1.0, mode="hard", seed=5)
kept = int(mask.hard.data.sum())
print(f"hard mask keeps {kept} of {nb.members.size} members")

selection = assemble_selection(nb, mask.hard.data, probs=probs)
print(f"local adjacency shrinks {nb.local_adjacency.shape} -> "
      f"{selection.local_adjacency.shape}")

# the relaxed mask is what gradients flow through during training
relaxed = sample_mask(probs, temperature=1.0, mode="relaxed", seed=5)
print(f"relaxed mask values in ({relaxed.relaxed.data.min():.3f}, "
      f"{relaxed.relaxed.data.max():.3f})")
