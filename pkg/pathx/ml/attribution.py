"""
GradientSHAP attributions over the encoder and spatial localization of ViT
features on the best tile.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from pathx.ml.autoencoder import AutoencoderParams, encode, encoder_input_gradient
from pathx.ml.numeric import Rng, check_finite
from pathx.ml.vit import ViTWeights, encode_image, scale_pixels, vit_input_gradient
from pathx.schemas.schemas import ViTConfig

logger = logging.getLogger(__name__)

Target = Union[str, int]


class EncoderReadout:
    """Scalar readout of the encoder: the latent sum or one latent coordinate"""

    def __init__(self, params: AutoencoderParams, target: Target = "sum"):
        if target != "sum" and not (isinstance(target, int) and 0 <= target < params.latent_dim):
            raise ValueError(f"target must be 'sum' or a latent index below {params.latent_dim}")
        self.params = params
        self.target = target
        self.input_dim = params.input_dim
        self._cotangent = np.ones(params.latent_dim)
        if target != "sum":
            self._cotangent = np.zeros(params.latent_dim)
            self._cotangent[target] = 1.0

    def value(self, x) -> np.ndarray:
        return encode(np.atleast_2d(x), self.params) @ self._cotangent

    def gradient(self, x) -> np.ndarray:
        return encoder_input_gradient(np.atleast_2d(x), self.params, self._cotangent)


class LinearReadout:
    """f(x) = w . x + b"""

    def __init__(self, weights, bias: float = 0.0):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = float(bias)
        self.input_dim = self.weights.size
        self.target = "linear"

    def value(self, x) -> np.ndarray:
        return np.atleast_2d(x) @ self.weights + self.bias

    def gradient(self, x) -> np.ndarray:
        return np.broadcast_to(self.weights, np.atleast_2d(x).shape).copy()


@dataclass
class Attribution:
    case_id: str
    target: Target
    phi: np.ndarray
    baseline_summary: str
    n_samples: int
    noise_sigma: float
    seed: Tuple[int, ...] = ()


def default_baselines(scaled_features: np.ndarray) -> np.ndarray:
    """All-0.5 vector and the per-feature mean of the scaled dataset"""
    scaled_features = np.asarray(scaled_features, dtype=np.float64)
    return np.vstack([np.full(scaled_features.shape[1], 0.5), scaled_features.mean(axis=0)])


def _balanced_baseline_order(count: int, n_samples: int, rng: Rng) -> np.ndarray:
    rounds = math.ceil(n_samples / count)
    return np.concatenate([rng.permutation(count) for _ in range(rounds)])[:n_samples]


def gradient_shap(
    model,
    x,
    baselines,
    n_samples: int = 200,
    noise_sigma: float = 0.09,
    rng: Optional[Rng] = None,
    case_id: str = "",
) -> Attribution:
    """
    phi_i = mean over samples of (x_i - b_i) * df/dx_i at b + alpha (x~ - b),
    with x~ = x + N(0, noise_sigma^2), alpha ~ U(0, 1) and baselines drawn in
    balanced shuffled rounds.
    """
    x = np.asarray(x, dtype=np.float64)
    baselines = np.atleast_2d(np.asarray(baselines, dtype=np.float64))
    if baselines.size == 0:
        raise ValueError("empty baselines")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if baselines.shape[1] != x.size or x.size != model.input_dim:
        raise ValueError("input, baselines and model dimensions disagree")
    rng = rng or Rng(0)

    order = _balanced_baseline_order(baselines.shape[0], n_samples, rng)
    alphas = rng.uniform(0.0, 1.0, size=n_samples)
    noise = rng.normal(0.0, noise_sigma, size=(n_samples, x.size)) if noise_sigma > 0 else np.zeros((n_samples, x.size))

    chosen = baselines[order]
    points = chosen + alphas[:, None] * (x[None, :] + noise - chosen)
    grads = check_finite(model.gradient(points), "SHAP gradients")
    phi = np.mean((x[None, :] - chosen) * grads, axis=0)

    return Attribution(
        case_id=case_id,
        target=model.target,
        phi=phi,
        baseline_summary=f"{baselines.shape[0]} baselines, balanced draws",
        n_samples=n_samples,
        noise_sigma=noise_sigma,
        seed=(rng.seed,) + tuple(rng.spawn_key),
    )


def completeness_check(attr: Attribution, model, x, baselines) -> float:
    """|sum(phi) - (f(x) - mean_b f(b))|"""
    baselines = np.atleast_2d(np.asarray(baselines, dtype=np.float64))
    gap = float(np.sum(attr.phi)) - (float(model.value(x)[0]) - float(np.mean(model.value(baselines))))
    return abs(gap)


def top_k_features(attr: Union[Attribution, np.ndarray], k: int = 10) -> List[int]:
    """Indices of the k largest |phi|, descending; ties keep the lower index"""
    phi = attr.phi if isinstance(attr, Attribution) else np.asarray(attr, dtype=np.float64)
    if not 0 <= k <= phi.size:
        raise ValueError(f"k must be between 0 and {phi.size}")
    order = np.lexsort((np.arange(phi.size), -np.abs(phi)))
    return [int(i) for i in order[:k]]


# -- spatial localization --

@dataclass
class FeatureLocalization:
    grid_size: int
    patch_size: int
    method: str
    saliency: Dict[int, np.ndarray] = field(default_factory=dict)                         # feature -> (g, g)
    top_patches: Dict[int, List[Tuple[int, int, float]]] = field(default_factory=dict)   # feature -> (row, col, weight)

    @property
    def features(self) -> List[int]:
        return list(self.saliency)


def _patch_slices(config: ViTConfig):
    p = config.patch_size
    for index in range(config.num_patches):
        row, col = divmod(index, config.grid_size)
        yield index, slice(row * p, (row + 1) * p), slice(col * p, (col + 1) * p)


def _occlusion_saliency(pixels, features, weights, config, fill) -> np.ndarray:
    base = encode_image(pixels, weights, config)[features]
    saliency = np.zeros((len(features), config.num_patches))
    for index, rows, cols in _patch_slices(config):
        occluded = pixels.copy()
        occluded[rows, cols, :] = fill
        saliency[:, index] = np.abs(encode_image(occluded, weights, config)[features] - base)
    return saliency


def _gradient_saliency(pixels, features, weights, config, fill) -> np.ndarray:
    displacement = pixels - fill
    saliency = np.zeros((len(features), config.num_patches))
    for row_index, feature in enumerate(features):
        cotangent = np.zeros(config.embed_dim)
        cotangent[feature] = 1.0
        grad = vit_input_gradient(pixels, weights, config, cotangent)
        for index, rows, cols in _patch_slices(config):
            saliency[row_index, index] = abs(float(np.sum(grad[rows, cols, :] * displacement[rows, cols, :])))
    return saliency


def localize_features(
    feature_indices: Sequence[int],
    tile,
    weights: ViTWeights,
    config: ViTConfig,
    method: str = "occlusion",
    top_patches: int = 5,
) -> FeatureLocalization:
    """
    Per-patch saliency of selected ViT output features.

    occlusion: |f_d(tile) - f_d(tile with the patch set to the per-channel median)|
    gradient:  |sum over the patch of df_d/dpixel * (pixel - median)|
    """
    pixels = scale_pixels(getattr(tile, "pixels", tile))
    features = [int(f) for f in feature_indices]
    for feature in features:
        if not 0 <= feature < config.embed_dim:
            raise ValueError(f"feature index {feature} outside the ViT output (D={config.embed_dim})")

    localization = FeatureLocalization(grid_size=config.grid_size, patch_size=config.patch_size, method=method)
    if not features:
        return localization

    fill = np.median(pixels.reshape(-1, pixels.shape[-1]), axis=0)
    if method == "occlusion":
        saliency = _occlusion_saliency(pixels, features, weights, config, fill)
    elif method == "gradient":
        saliency = _gradient_saliency(pixels, features, weights, config, fill)
    else:
        raise ValueError(f"unknown localization method '{method}'")

    keep = min(top_patches, config.num_patches)
    for row_index, feature in enumerate(features):
        values = saliency[row_index]
        localization.saliency[feature] = values.reshape(config.grid_size, config.grid_size)
        order = np.lexsort((np.arange(values.size), -values))[:keep]
        localization.top_patches[feature] = [
            (int(i) // config.grid_size, int(i) % config.grid_size, float(values[i])) for i in order
        ]
    logger.debug(f"Localized {len(features)} features by {method} on a {config.grid_size}x{config.grid_size} grid")
    return localization
