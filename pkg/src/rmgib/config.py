"""Experiment configuration: one JSON-serializable document drives everything.

Defaults mirror the reference setup: 2-layer networks, hidden width 256,
selection threshold 0.5, concrete temperature 1, label rate 2%. The beta and
gamma sweeps come from fixed grids; when grid mode is on, values outside
those grids are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

MODELS = ("gcn", "gcn_pl", "gcn_ib", "rmgib", "rmgib_no_s", "rmgib_no_pl")
PERTURBATION_KINDS = ("none", "random", "heterophilic")
MIA_SETTINGS = ("MIA-F", "MIA-S")
PREDICTOR_VARIANTS = ("gcn", "sgc", "mean")

BETA_GRID = (0.0001, 0.0003, 0.001, 0.003, 0.03, 0.1)
GAMMA_GRID = (1e-05, 0.0001, 0.001, 0.01, 0.1)


def default_dataset() -> dict:
    return {
        "kind": "sbm",
        "block_sizes": [60, 60, 60, 60, 60],
        "p_in": 0.1,
        "p_out": 0.01,
        "feature_dim": 16,
        "feature_signal": 1.5,
        "seed": 7,
    }


@dataclass
class ExperimentConfig:
    # dataset
    dataset: dict = field(default_factory=default_dataset)
    label_rate: float = 0.02
    val_count: int = 500
    test_count: int = 1000

    # architecture
    model: str = "gcn"
    hidden_dim: int = 256
    code_dim: int = 64
    embed_dim: int = 64
    layers: int = 2
    predictor_variant: str = "gcn"

    # objective weights and priors
    beta: float = 0.001
    gamma: float = 0.01
    prior_rate: float = 0.5
    threshold: float = 0.5
    temperature: float = 1.0

    # optimization
    lr: float = 0.01
    epochs: int = 200
    weight_decay: float = 0.0
    val_every: int = 5

    # mutual-information supervisor
    mi_epochs: int = 150
    mi_negatives: int = 1

    # pseudo labels
    pseudo_fraction: float = 1.0
    pseudo_confidence_min: float | None = None

    # perturbation
    perturbation: dict = field(default_factory=lambda: {"kind": "none", "rate": 0.0})

    # membership inference
    mia: list = field(default_factory=list)
    attack_hidden: int = 64
    attack_epochs: int = 300
    attack_lr: float = 0.01
    attack_sorted_posteriors: bool = False

    # harness
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str | None = None
    grid_mode: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.predictor_variant not in PREDICTOR_VARIANTS:
            raise ValueError(f"unknown predictor variant {self.predictor_variant!r}")
        kind = self.perturbation.get("kind", "none")
        if kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {kind!r}")
        for setting in self.mia:
            if setting not in MIA_SETTINGS:
                raise ValueError(f"unknown MIA setting {setting!r}")
        if not (0.0 < self.prior_rate < 1.0):
            raise ValueError("prior_rate must be in (0, 1)")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.grid_mode:
            if self.beta not in BETA_GRID:
                raise ValueError(f"beta {self.beta} is not in the grid {BETA_GRID}")
            if self.gamma not in GAMMA_GRID:
                raise ValueError(f"gamma {self.gamma} is not in the grid {GAMMA_GRID}")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]
