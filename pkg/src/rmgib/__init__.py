"""Robust and membership-privacy-preserving graph learning toolkit.

A numpy library implementing a graph information bottleneck defense
(Gaussian attribute codes, Bernoulli neighbor selection, contrastive
neighbor supervision, pseudo-label retraining) together with its
adversaries: a shadow-training membership-inference pipeline and
graph perturbation generators.
"""

from .attacks import (AttackDataset, AttackModel, ShadowSetup, build_shadow_setup,
                      evaluate_mia, roc_auc, train_attack_model,
                      train_shadow_and_collect)
from .bottlenecks import (AttributeCode, NeighborSelection, assemble_selection,
                          attribute_encode, bernoulli_kl, gaussian_kl,
                          neighbor_probs, sample_mask)
from .config import BETA_GRID, GAMMA_GRID, ExperimentConfig
from .graph import (Graph, Neighborhood, Splits, generate_sbm, k_hop, load_graph,
                    perturb_heterophilic, perturb_random, save_graph, split_nodes,
                    subsample_graph)
from .harness import (RunRecord, emit_report, rerun_record, run_experiment,
                      run_grid, scaling_probe)
from .infotheory import (JointDistribution, discrete_mi, kernel_joint,
                         random_kernel_joint, verify_ib_inequality)
from .mi import (MIEstimator, NeighborPartition, mi_score, partition_neighbors,
                 self_supervision_loss, train_mi_estimator)
from .nn import (MLP, Adam, ParamSet, gradient_check, load_params, mlp_forward,
                 save_params, sgd_adam_step)
from .predictor import (GCNStack, Posterior, baseline_gcn_train,
                        classification_loss, gcn_forward, gcn_ib_train,
                        gcn_pl_train)
from .trainer import (LossBreakdown, PseudoLabelSet, RmgibParams,
                      collect_pseudo_labels, gib_loss, rmgib_posteriors,
                      stage1_train, stage2_train, train_rmgib)

__version__ = "0.1.0"
