from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


# Paths
class PathsConfig(_Section):
    tiles_dir: Optional[str] = None           # {slide_id}/{row}_{col}.png or large PNGs
    clinical_csv: Optional[str] = None
    vit_weights: Optional[str] = None
    features_csv: Optional[str] = None        # supplied features skip extraction
    out_dir: Optional[str] = None


# Slide scoring
class ScoringConfig(_Section):
    dark_threshold: float = Field(120.0, ge=0, le=255)
    min_area: int = Field(30, ge=1)
    brightness_threshold: float = Field(220.0, ge=0, le=255)
    blank_weight: float = Field(1000.0, ge=0)
    tile_size: int = Field(1024, ge=1)         # gridding of large PNGs


# Vision transformer
class ViTConfig(_Section):
    image_size: int = Field(224, ge=1)
    channels: int = Field(3, ge=1)
    patch_size: int = Field(16, ge=1)
    embed_dim: int = Field(1024, ge=1)
    num_heads: int = Field(16, ge=1)
    num_layers: int = Field(24, ge=0)
    mlp_hidden: int = Field(4096, ge=1)

    @model_validator(mode="after")
    def check_geometry(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError(f"image_size {self.image_size} is not a multiple of patch_size {self.patch_size}")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        return self

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return (self.image_size * self.image_size) // (self.patch_size * self.patch_size)

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads


# Autoencoder
class TrainConfig(_Section):
    epochs: int = Field(100, ge=1)
    batch_size: int = Field(32, ge=1)
    learning_rate: float = Field(0.001, ge=0)
    seed: int = 0
    shuffle: bool = True


class AutoencoderConfig(_Section):
    layer_sizes: List[int] = Field(default_factory=lambda: [1024, 512, 256, 128])
    train: TrainConfig = Field(default_factory=TrainConfig)

    @field_validator("layer_sizes")
    @classmethod
    def check_layers(cls, value: List[int]) -> List[int]:
        if len(value) < 2 or any(size < 1 for size in value):
            raise ValueError("layer_sizes needs an input and a latent size, all positive")
        return value

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def latent_dim(self) -> int:
        return self.layer_sizes[-1]


# Stratification
class ClusteringConfig(_Section):
    linkage: Literal["ward", "single", "complete", "average"] = "ward"
    ks: List[int] = Field(default_factory=lambda: [2, 3])
    use_raw_features: bool = False


class TSNEConfig(_Section):
    perplexity: float = Field(30.0, gt=1.0)
    iterations: int = Field(1000, ge=1)
    early_exaggeration: float = Field(12.0, ge=1.0)
    exaggeration_iterations: int = Field(250, ge=0)
    learning_rate: Union[Literal["auto"], float] = "auto"     # auto: max(n / early_exaggeration / 4, 50)
    initial_momentum: float = Field(0.5, ge=0, lt=1)
    final_momentum: float = Field(0.8, ge=0, lt=1)
    momentum_switch_iteration: int = Field(250, ge=0)

    @field_validator("learning_rate")
    @classmethod
    def positive_rate(cls, value):
        if value != "auto" and not value > 0:
            raise ValueError("learning_rate must be positive or \"auto\"")
        return value


# Classification
class ClassifyConfig(_Section):
    test_fraction: float = Field(0.2, gt=0, lt=1)
    knn_k: int = Field(5, ge=1)
    logreg_l2: float = Field(1e-3, ge=0)
    logreg_epochs: int = Field(500, ge=0)
    logreg_learning_rate: float = Field(0.1, gt=0)
    mlp_hidden: int = Field(32, ge=1)
    mlp_epochs: int = Field(500, ge=0)
    mlp_learning_rate: float = Field(0.01, gt=0)
    use_raw_features: bool = False


# Attribution
class ShapConfig(_Section):
    n_samples: int = Field(200, ge=1)
    noise_sigma: float = Field(0.09, ge=0)
    target: Union[Literal["sum"], int] = "sum"
    top_k: int = Field(10, ge=1)
    localization: Literal["occlusion", "gradient"] = "occlusion"
    top_patches: int = Field(5, ge=1)
    boxes_per_feature: int = Field(1, ge=0)
    cases: Optional[List[str]] = None


# Synthetic cohort
class SynthConfig(_Section):
    n: int = Field(300, ge=4)
    k: int = Field(3, ge=1)
    separation: float = Field(10.0, ge=0)
    within_spread: float = Field(1.0, gt=0)
    censoring_rate: float = Field(0.2, ge=0, le=1)
    feature_dim: int = Field(64, ge=2)
    planted_dim: int = Field(4, ge=1)
    hazards: Optional[List[float]] = None       # per day, one per group
    tiles_per_side: int = Field(2, ge=1)
    tile_size: int = Field(64, ge=8)


class PipelineConfig(_Section):
    cohort: str = "cohort"
    seed: int = 7
    workers: int = Field(1, ge=1)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    scoring: ScoringConfig = Field(default_factory=ScoringConfig)
    vit: ViTConfig = Field(default_factory=ViTConfig)
    autoencoder: AutoencoderConfig = Field(default_factory=AutoencoderConfig)
    clustering: ClusteringConfig = Field(default_factory=ClusteringConfig)
    tsne: TSNEConfig = Field(default_factory=TSNEConfig)
    classify: ClassifyConfig = Field(default_factory=ClassifyConfig)
    shap: ShapConfig = Field(default_factory=ShapConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
