#!/usr/bin/env python3
"""
Synthetic Cohort Simulator

Generates a desk-scale cohort with planted structure:
- k groups with well-separated centers in a low-dimensional latent space
- feature vectors derived from the latent points (written as features.csv)
- exponential survival times with a per-group hazard and random censoring
- H&E-like tiles (pink background, blue-purple nuclei) per case
- toy ViT weights and a ready-to-run pathx.toml

Usage:
    pathx synth --k 3 --n 300 --seed 7 --out synthetic
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from PIL import Image

from pathx.ml.numeric import Rng, sigmoid
from pathx.ml.vit import init_vit_weights, save_weights
from pathx.models.models import ClinicalRecord, risk_names
from pathx.schemas.schemas import SynthConfig, ViTConfig
from pathx.utils.csv_io import write_clinical, write_features, write_rows

logger = logging.getLogger(__name__)

LOWEST_HAZARD = 0.001       # per day
HIGHEST_HAZARD = 0.02
BACKGROUND_RGB = (236, 190, 214)
NUCLEUS_RGB = (72, 52, 142)
WHITE_RGB = (250, 250, 250)


def default_hazards(k: int) -> List[float]:
    """k=3: 0.001/0.005/0.02; k=2: 0.001/0.02; otherwise geometric between the extremes"""
    if k == 1:
        return [LOWEST_HAZARD]
    if k == 2:
        return [LOWEST_HAZARD, HIGHEST_HAZARD]
    if k == 3:
        return [LOWEST_HAZARD, 0.005, HIGHEST_HAZARD]
    return list(np.geomspace(LOWEST_HAZARD, HIGHEST_HAZARD, k))


@dataclass
class SyntheticCohort:
    case_ids: List[str]
    groups: np.ndarray                  # planted group per case, 0 = lowest hazard
    group_names: List[str]
    latent: np.ndarray                  # planted latent points
    features: np.ndarray                # (n, feature_dim) in (0, 1)
    records: List[ClinicalRecord] = field(default_factory=list)

    @property
    def truth(self) -> Dict[str, str]:
        return {case: self.group_names[g] for case, g in zip(self.case_ids, self.groups)}


class CohortSimulator:
    """Seeded generator for synthetic cohorts"""

    def __init__(self, config: SynthConfig, rng: Rng):
        self.config = config
        self.rng = rng
        self.hazards = config.hazards or default_hazards(config.k)
        if len(self.hazards) != config.k:
            raise ValueError(f"{len(self.hazards)} hazards given for k={config.k} groups")
        self.planted_dim = max(config.planted_dim, config.k)

    def case_ids(self) -> List[str]:
        width = max(3, len(str(self.config.n - 1)))
        return [f"case_{i:0{width}d}" for i in range(self.config.n)]

    def assign_groups(self) -> np.ndarray:
        """Balanced group sizes in shuffled order"""
        return self.rng.child(0).permutation(np.arange(self.config.n) % self.config.k)

    def planted_latent(self, groups: np.ndarray) -> np.ndarray:
        centers = np.zeros((self.config.k, self.planted_dim))
        centers[np.arange(self.config.k), np.arange(self.config.k)] = self.config.separation
        spread = self.rng.child(1).normal(0.0, self.config.within_spread, size=(groups.size, self.planted_dim))
        return centers[groups] + spread

    def features_from_latent(self, latent: np.ndarray) -> np.ndarray:
        """Random linear lift into feature_dim followed by a squashing sigmoid"""
        rng = self.rng.child(2)
        lift = rng.normal(0.0, 1.0, size=(self.planted_dim, self.config.feature_dim))
        noise = rng.normal(0.0, 0.05, size=(latent.shape[0], self.config.feature_dim))
        scale = math.sqrt(self.planted_dim) * max(1.0, self.config.separation / 3.0)
        return sigmoid(latent @ lift / scale + noise)

    def survival(self, case_ids: List[str], groups: np.ndarray, names: List[str]) -> List[ClinicalRecord]:
        rng = self.rng.child(3)
        hazards = np.asarray(self.hazards)[groups]
        event_times = rng.generator.exponential(1.0 / hazards)
        censored = rng.uniform(0.0, 1.0, size=groups.size) < self.config.censoring_rate
        fractions = rng.uniform(0.0, 1.0, size=groups.size)
        times = np.where(censored, fractions * event_times, event_times)
        return [
            ClinicalRecord(case_id=case, time=float(t), event=not bool(c), label=names[g])
            for case, t, c, g in zip(case_ids, times, censored, groups)
        ]

    def generate(self) -> SyntheticCohort:
        case_ids = self.case_ids()
        groups = self.assign_groups()
        names = risk_names(self.config.k)
        latent = self.planted_latent(groups)
        features = self.features_from_latent(latent)
        records = self.survival(case_ids, groups, names)
        logger.info(
            f"🧪 Synthetic cohort: n={self.config.n}, k={self.config.k}, separation={self.config.separation}, "
            f"events={sum(r.event for r in records)}"
        )
        return SyntheticCohort(case_ids, groups, names, latent, features, records)

    # -- tiles --

    def render_tile(self, rng: Rng, group: int) -> np.ndarray:
        size = self.config.tile_size
        base = np.array(BACKGROUND_RGB, dtype=np.float64)
        pixels = base + rng.normal(0.0, 4.0, size=(size, size, 3))

        yy, xx = np.mgrid[0:size, 0:size]
        nuclei = int(rng.integers(1 + group, 3 + 2 * group))
        for _ in range(nuclei):
            radius = rng.uniform(4.0, 7.0)
            cy, cx = rng.uniform(radius, size - radius, size=2)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
            pixels[mask] = np.array(NUCLEUS_RGB) + rng.normal(0.0, 4.0, size=(int(mask.sum()), 3))

        if rng.uniform() < 0.3:
            height = int(rng.integers(size // 8, size // 2))
            pixels[:height] = WHITE_RGB
        return np.clip(np.rint(pixels), 0, 255).astype(np.uint8)

    def write_tiles(self, tiles_dir: str, cohort: SyntheticCohort) -> None:
        side = self.config.tiles_per_side
        tiles_rng = self.rng.child(4)
        for index, (case, group) in enumerate(zip(cohort.case_ids, cohort.groups)):
            case_dir = os.path.join(tiles_dir, case)
            os.makedirs(case_dir, exist_ok=True)
            case_rng = tiles_rng.child(index)
            for row in range(side):
                for col in range(side):
                    tile = self.render_tile(case_rng.child(row * side + col), int(group))
                    Image.fromarray(tile).save(os.path.join(case_dir, f"{row}_{col}.png"))

    def toy_vit_config(self) -> ViTConfig:
        size = self.config.tile_size
        dim = self.config.feature_dim
        return ViTConfig(
            image_size=size,
            patch_size=16 if size % 16 == 0 else size,
            embed_dim=dim,
            num_heads=4 if dim % 4 == 0 else 1,
            num_layers=1,
            mlp_hidden=2 * dim,
        )

    def write(self, out_dir: str, seed: int) -> SyntheticCohort:
        """Generate the cohort and write every standard input file into out_dir"""
        os.makedirs(out_dir, exist_ok=True)
        cohort = self.generate()

        write_features(os.path.join(out_dir, "features.csv"), cohort.case_ids, cohort.features)
        write_clinical(os.path.join(out_dir, "clinical.csv"), cohort.records)
        write_rows(os.path.join(out_dir, "truth.csv"), ["case_id", "group"], sorted(cohort.truth.items()))
        self.write_tiles(os.path.join(out_dir, "tiles"), cohort)

        vit_config = self.toy_vit_config()
        save_weights(os.path.join(out_dir, "weights.vitw"), init_vit_weights(vit_config, self.rng.child(5)), vit_config)

        with open(os.path.join(out_dir, "pathx.toml"), "w", encoding="utf-8", newline="\n") as f:
            f.write(self.config_toml(seed, vit_config))

        logger.info(f"✅ Synthetic cohort written to {out_dir}")
        return cohort

    def config_toml(self, seed: int, vit: ViTConfig) -> str:
        dim = self.config.feature_dim
        sizes = [dim, max(2, (3 * dim) // 4), max(2, dim // 2), max(2, dim // 4)]
        return f"""# Synthetic cohort generated by `pathx synth`
cohort = "synthetic"
seed = {seed}

[paths]
tiles_dir = "tiles"
clinical_csv = "clinical.csv"
vit_weights = "weights.vitw"
features_csv = "features.csv"
out_dir = "out"

[scoring]
tile_size = {self.config.tile_size}

[vit]
image_size = {vit.image_size}
channels = {vit.channels}
patch_size = {vit.patch_size}
embed_dim = {vit.embed_dim}
num_heads = {vit.num_heads}
num_layers = {vit.num_layers}
mlp_hidden = {vit.mlp_hidden}

[autoencoder]
layer_sizes = [{", ".join(str(s) for s in sizes)}]

[autoencoder.train]
epochs = 100
batch_size = 32
learning_rate = 0.001

[clustering]
ks = [2, 3]
"""
