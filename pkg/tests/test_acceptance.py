"""Acceptance suite: exact property checks plus directional trend
reproductions on fixed synthetic fixtures, one printed pass/fail line per
criterion.

The trend criteria (5-8) train GCN / GCN+IB / two-stage defense variants at
a 2% label rate over seeds 0-4 on two calibrations of the same SBM family:
a weak-feature fixture where the label-starved GCN leaks membership, and a
homophilic informative-feature fixture where the contrastive supervisor can
flag injected edges. Everything is deterministic, so the asserted margins
reproduce bit for bit. Run with ``pytest tests/test_acceptance.py -v -s`` to
see the criterion lines.
"""

import math
import time

import numpy as np
import pytest

from rmgib.attacks import roc_auc, train_attack_model, AttackDataset
from rmgib.autodiff import Tensor
from rmgib.bottlenecks import bernoulli_kl, gaussian_kl_terms
from rmgib.config import ExperimentConfig
from rmgib.graph import generate_sbm
from rmgib.harness import rerun_record, run_experiment, scaling_probe
from rmgib.infotheory import discrete_mi, random_kernel_joint, verify_ib_inequality
from rmgib.mi import contrastive_loss, NeighborPartition, self_supervision_loss
from rmgib.nn import MLP, ParamSet, gradient_check
from rmgib.predictor import classification_loss
from rmgib import trainer


def report(criterion: int, passed: bool, detail: str) -> None:
    print(f"\n[criterion {criterion:2d}] {'PASS' if passed else 'FAIL'} — {detail}")
    assert passed, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# the shared trend fixture: 1,800-node SBM, 2% labels, seeds 0-4


# The privacy fixture reproduces the few-label leaky regime: 36 labeled
# nodes out of 1800, features weak enough that the GCN generalizes
# imperfectly while memorizing its training nodes.
PRIVACY_BASE = dict(
    dataset={"kind": "sbm", "block_sizes": [360] * 5, "p_in": 5.0 / 359,
             "p_out": 2.0 / 1440, "feature_dim": 16, "feature_signal": 1.4,
             "seed": 3},
    label_rate=0.02, val_count=150, test_count=450,
    hidden_dim=16, code_dim=24, embed_dim=16, prior_rate=0.7,
    lr=0.01, epochs=300, mi_epochs=25, attack_epochs=300,
    beta=0.003, gamma=0.01, seeds=[0, 1, 2, 3, 4],
)

# The robustness fixture is homophilic with informative features, the regime
# where cross-class pairs are rare and distinct enough for the contrastive
# supervisor to flag injected edges (as on citation graphs).
ROBUST_BASE = dict(
    PRIVACY_BASE,
    dataset={"kind": "sbm", "block_sizes": [300] * 5, "p_in": 5.0 / 299,
             "p_out": 1.0 / 1200, "feature_dim": 16, "feature_signal": 2.0,
             "seed": 3},
    val_count=150, test_count=400, mi_epochs=30,
)

PERTURBED = {"kind": "heterophilic", "rate": 0.2}


def accept_config(base: dict, **overrides) -> ExperimentConfig:
    return ExperimentConfig(**{**base, **overrides})


@pytest.fixture(scope="module")
def runs():
    """Lazily computed, cached experiment records for the trend criteria."""
    cache = {}

    def get(name: str, base: dict = PRIVACY_BASE, **overrides):
        if name not in cache:
            record = run_experiment(accept_config(base, **overrides), persist=False)
            cache[name] = record
        return cache[name]

    return get


def mean_of(record, key):
    return record.summary[key]["mean"]


# ---------------------------------------------------------------------------
# 1. closed-form KLs against numerical oracles


_HERMITE_NODES, _HERMITE_WEIGHTS = np.polynomial.hermite_e.hermegauss(151)


def gauss_kl_quadrature(mu, sigma):
    z = mu[:, None] + sigma[:, None] * _HERMITE_NODES[None, :]
    log_p = -0.5 * ((z - mu[:, None]) / sigma[:, None]) ** 2 \
        - np.log(sigma)[:, None] - 0.5 * np.log(2 * np.pi)
    log_q = -0.5 * z ** 2 - 0.5 * np.log(2 * np.pi)
    return float(((log_p - log_q) * _HERMITE_WEIGHTS[None, :]).sum()
                 / np.sqrt(2 * np.pi))


def test_criterion_1_closed_form_exactness():
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst_g = worst_b = 0.0
    for _ in range(1000):
        mu = rng.normal(0, 2, size=3)
        sigma = rng.uniform(0.3, 2.5, size=3)
        closed = float(gaussian_kl_terms(Tensor(mu.reshape(1, -1)),
                                         Tensor(sigma.reshape(1, -1))).data[0])
        worst_g = max(worst_g, abs(closed - gauss_kl_quadrature(mu, sigma)))

        p = rng.uniform(1e-4, 1 - 1e-4, size=4)
        r = rng.uniform(0.05, 0.95)
        closed_b = float(bernoulli_kl(p, r).data)
        oracle = sum(pi * (math.log(pi) - math.log(r))
                     + (1 - pi) * (math.log(1 - pi) - math.log(1 - r))
                     for pi in p)
        worst_b = max(worst_b, abs(closed_b - oracle))
    elapsed = time.perf_counter() - start
    ok = worst_g < 1e-6 and worst_b < 1e-6 and elapsed < 5.0
    report(1, ok, f"gaussian |err| {worst_g:.2e}, bernoulli |err| {worst_b:.2e}, "
                  f"{elapsed:.2f}s for 1000 instances")


# ---------------------------------------------------------------------------
# 2. gradient suite: every loss against central finite differences


def test_criterion_2_gradient_suite():
    start = time.perf_counter()
    errors = {}

    # classification loss through softmax logits
    p1 = ParamSet(owner="clf")
    p1.add("logits", np.random.default_rng(0).standard_normal((6, 3)))
    errors["classification"] = gradient_check(
        lambda p: classification_loss(p["logits"], np.array([0, 2, 1, 1, 0, 2])),
        p1, epsilon=1e-5)

    # attribute-code compression term
    p2 = ParamSet(owner="gauss")
    p2.add("mu", np.random.default_rng(1).standard_normal((4, 3)))
    p2.add("raw", np.random.default_rng(2).standard_normal((4, 3)))
    errors["attribute_kl"] = gradient_check(
        lambda p: gaussian_kl_terms(p["mu"], p["raw"].softplus() + 1e-6).mean(),
        p2, epsilon=1e-5)

    # neighbor-retention compression term
    p3 = ParamSet(owner="bern")
    p3.add("logit", np.random.default_rng(3).standard_normal(7))
    errors["neighbor_kl"] = gradient_check(
        lambda p: bernoulli_kl(p["logit"].sigmoid(), 0.4), p3, epsilon=1e-5)

    # contrastive scorer objective (frozen negatives)
    g10 = generate_sbm([5, 5], 0.5, 0.2, 6, 2.0, seed=2)
    pairs = g10.directed_pairs
    neg = np.random.default_rng(4).integers(0, 10, size=(pairs.shape[0], 1))
    f_m = MLP.create(6, 4, hidden=(5,), seed=5, owner="f_m")
    errors["contrastive"] = gradient_check(
        lambda p: contrastive_loss(f_m, g10.features, pairs[:, 0], pairs[:, 1],
                                   neg, 10),
        f_m.params, epsilon=1e-5)

    # neighbor-bottleneck self-supervision
    p5 = ParamSet(owner="selfsup")
    p5.add("plogit", np.random.default_rng(6).standard_normal(4))
    partition = NeighborPartition(pos={0: np.array([1, 2])},
                                  neg={0: np.array([3, 4])})
    errors["self_supervision"] = gradient_check(
        lambda p: self_supervision_loss(
            {0: p["plogit"].sigmoid()}, partition, node_count=2,
            neighbor_ids={0: np.array([1, 2, 3, 4])}),
        p5, epsilon=1e-5)

    # the assembled two-stage objective on the 10-node fixture, frozen draws
    cfg = ExperimentConfig(
        dataset={"kind": "sbm"}, hidden_dim=6, code_dim=4, embed_dim=4,
        mi_epochs=5, beta=0.01, gamma=0.01, seeds=[0])
    from rmgib.mi import partition_neighbors, train_mi_estimator

    est = train_mi_estimator(g10, 1, cfg, seed=3)
    part = partition_neighbors(g10, est)
    params = trainer.RmgibParams.create(g10.feature_dim, g10.class_count, cfg, 11)
    ctx = trainer.build_train_context(g10, np.arange(10), cfg, part)
    errors["assembled_objective"] = gradient_check(
        lambda p: trainer.gib_loss(g10, np.arange(10), g10.labels, params, cfg,
                                   seed=77, ctx=ctx).total_tensor,
        params.merged, epsilon=1e-5)

    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    ok = worst < 1e-4 and elapsed < 60.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
    report(2, ok, f"max rel err {worst:.2e} ({detail}), {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. discrete information-theory oracle


def test_criterion_3_information_oracle():
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst_ci = worst_gap = 0.0
    inequality_holds = True
    for _ in range(1000):
        j = random_kernel_joint(rng, nx=3, ny=3, nz=3)
        worst_ci = max(worst_ci, abs(discrete_mi(j, ("z", "y"), conditioned_on="x")))
        rep = verify_ib_inequality(j)
        worst_gap = max(worst_gap, abs(rep["decomposition_gap"]))
        inequality_holds &= rep["mi_zx"] >= rep["mi_zy"] - 1e-9
    elapsed = time.perf_counter() - start
    ok = worst_ci <= 1e-12 and worst_gap <= 1e-9 and inequality_holds \
        and elapsed < 10.0
    report(3, ok, f"max |I(z;y|x)| {worst_ci:.1e}, max decomposition gap "
                  f"{worst_gap:.1e}, {elapsed:.1f}s for 1000 joints")


# ---------------------------------------------------------------------------
# 4. ROC oracle and destroyed-signal sanity


def pair_count_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_criterion_4_roc_oracle():
    rng = np.random.default_rng(8)
    trials = 0
    worst = 0.0
    while trials < 10_000:
        n = int(rng.integers(2, 11))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            continue
        scores = np.round(rng.random(n), 1)  # coarse grid provokes ties
        worst = max(worst, abs(roc_auc(scores, labels)
                               - pair_count_auc(scores, labels)))
        trials += 1

    # label-shuffled attack data should yield chance-level held-out ROC
    post = rng.random((400, 5))
    post /= post.sum(axis=1, keepdims=True)
    shuffled = AttackDataset(posteriors=post,
                             membership=rng.permutation([1, 0] * 200))
    cfg = ExperimentConfig(dataset={"kind": "sbm"}, attack_epochs=200, seeds=[0])
    atk = train_attack_model(shuffled, cfg, seed=0)
    held = rng.random((1000, 5))
    held /= held.sum(axis=1, keepdims=True)
    shuffled_roc = roc_auc(atk.scores(held), np.array([1, 0] * 500))

    ok = worst < 1e-12 and abs(shuffled_roc - 0.5) <= 0.05
    report(4, ok, f"pair-count max |err| {worst:.1e} over 10000 trials, "
                  f"shuffled-label ROC {shuffled_roc:.3f}")


# ---------------------------------------------------------------------------
# 5. privacy trend on the fixture


def test_criterion_5_privacy_trend(runs):
    start = time.perf_counter()
    gcn = runs("gcn_clean", model="gcn", mia=["MIA-F"])
    rmgib = runs("rmgib_clean", model="rmgib", mia=["MIA-F"])
    elapsed = time.perf_counter() - start
    gcn_roc = mean_of(gcn, "mia_f_roc")
    rm_roc = mean_of(rmgib, "mia_f_roc")
    gcn_acc = mean_of(gcn, "accuracy")
    rm_acc = mean_of(rmgib, "accuracy")
    ok = (gcn_roc >= 0.65 and rm_roc <= gcn_roc - 0.10
          and rm_acc >= gcn_acc - 0.03 and elapsed < 20 * 60)
    report(5, ok, f"GCN roc {gcn_roc:.3f} (>= 0.65), defense roc {rm_roc:.3f} "
                  f"(<= {gcn_roc - 0.10:.3f}), acc {rm_acc:.3f} vs GCN "
                  f"{gcn_acc:.3f} (>= {gcn_acc - 0.03:.3f}), {elapsed / 60:.1f} min")


# ---------------------------------------------------------------------------
# 6. label-rate trend for the attribute-bottleneck reference model


def test_criterion_6_label_rate_trend(runs):
    low = runs("gcn_ib_2pct", model="gcn_ib", mia=["MIA-F"], label_rate=0.02)
    high = runs("gcn_ib_8pct", model="gcn_ib", mia=["MIA-F"], label_rate=0.08)
    roc_low = mean_of(low, "mia_f_roc")
    roc_high = mean_of(high, "mia_f_roc")
    ok = roc_high <= roc_low - 0.05
    report(6, ok, f"GCN+IB MIA-F roc {roc_low:.3f} @2% -> {roc_high:.3f} @8% "
                  f"(drop {roc_low - roc_high:.3f} >= 0.05)")


# ---------------------------------------------------------------------------
# 7. robustness trend under heterophilic perturbation


def test_criterion_7_robustness_trend(runs):
    gcn = runs("gcn_pert", base=ROBUST_BASE, model="gcn", perturbation=PERTURBED)
    gcn_ib = runs("gcn_ib_pert", base=ROBUST_BASE, model="gcn_ib",
                  perturbation=PERTURBED)
    rmgib = runs("rmgib_pert", base=ROBUST_BASE, model="rmgib",
                 perturbation=PERTURBED)
    a_gcn = mean_of(gcn, "accuracy")
    a_ib = mean_of(gcn_ib, "accuracy")
    a_rm = mean_of(rmgib, "accuracy")
    ok = a_rm >= a_gcn + 0.03 and a_rm > a_ib
    report(7, ok, f"perturbed accuracy: defense {a_rm:.3f} vs GCN {a_gcn:.3f} "
                  f"(+{a_rm - a_gcn:.3f} >= 0.03) and GCN+IB {a_ib:.3f}")


# ---------------------------------------------------------------------------
# 8. ablations: pseudo labels, self-supervision, fraction sweep


def test_criterion_8_ablation_ordering(runs):
    rm_clean = runs("rmgib_clean", model="rmgib", mia=["MIA-F"])
    no_pl = runs("rmgib_no_pl", model="rmgib_no_pl", mia=["MIA-F"])
    rm_pert = runs("rmgib_pert", base=ROBUST_BASE, model="rmgib",
                   perturbation=PERTURBED)
    no_s = runs("rmgib_no_s_pert", base=ROBUST_BASE, model="rmgib_no_s",
                perturbation=PERTURBED)
    frac5 = runs("rmgib_frac5", model="rmgib", mia=["MIA-F"], pseudo_fraction=0.05)

    roc_full = mean_of(rm_clean, "mia_f_roc")
    roc_no_pl = mean_of(no_pl, "mia_f_roc")
    acc_pert = mean_of(rm_pert, "accuracy")
    acc_no_s = mean_of(no_s, "accuracy")
    roc_frac5 = mean_of(frac5, "mia_f_roc")

    ok = (roc_full <= roc_no_pl - 0.05
          and acc_pert > acc_no_s
          and roc_full <= roc_frac5)
    report(8, ok,
           f"roc: full {roc_full:.3f} vs no-pseudo {roc_no_pl:.3f} "
           f"(gap {roc_no_pl - roc_full:.3f} >= 0.05); perturbed acc: full "
           f"{acc_pert:.3f} > no-supervision {acc_no_s:.3f}; fraction sweep "
           f"roc 100% {roc_full:.3f} <= 5% {roc_frac5:.3f}")


# ---------------------------------------------------------------------------
# 9. linear scaling of the training loop


def test_criterion_9_scaling():
    cfg = accept_config(PRIVACY_BASE, seeds=[0], mi_epochs=10)
    rows = scaling_probe([500, 1000, 2000], cfg, epochs=3)
    times = {r["nodes"]: r["sec_per_epoch"] for r in rows}
    r1 = times[1000] / times[500]
    r2 = times[2000] / times[1000]
    ok = r1 < 2.5 and r2 < 2.5
    report(9, ok, f"sec/epoch {times[500]:.3f} / {times[1000]:.3f} / "
                  f"{times[2000]:.3f}; ratios {r1:.2f}, {r2:.2f} < 2.5")


# ---------------------------------------------------------------------------
# 10. reproducibility audit


def test_criterion_10_reproducibility(tmp_path):
    cfg = ExperimentConfig(
        dataset={"kind": "sbm", "block_sizes": [40] * 3, "p_in": 0.12,
                 "p_out": 0.02, "feature_dim": 10, "feature_signal": 2.0,
                 "seed": 5},
        label_rate=0.1, val_count=20, test_count=40,
        hidden_dim=8, code_dim=6, embed_dim=6,
        epochs=40, mi_epochs=10, attack_epochs=60,
        beta=0.003, gamma=0.01, seeds=[0, 1], mia=["MIA-F", "MIA-S"],
        model="rmgib", out_dir=str(tmp_path),
    )
    record = run_experiment(cfg, persist=True)
    from rmgib.harness import RunRecord
    import os

    path = os.path.join(str(tmp_path), f"record_{record.config_hash}.json")
    loaded = RunRecord.load(path)
    replay = rerun_record(loaded)
    ok = replay.per_seed == loaded.per_seed and replay.summary == loaded.summary
    report(10, ok, f"replayed {len(loaded.per_seed)} seeds bit-identically "
                   f"({sorted(loaded.per_seed[0])})")
