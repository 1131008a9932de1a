"""
Vision Transformer forward pass in numpy.

Pre-norm encoder blocks (LN -> multi-head self-attention -> residual,
LN -> GELU MLP -> residual), final layer norm, class-token readout.
Tokens are rows: z_0 = [cls + E_p[0]; x_p W_p + E_p[1:]].
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError
from scipy.special import erf

from pathx.errors import InputFormatError, NumericalError, TensorShapeError
from pathx.ml.numeric import Rng, check_finite, softmax
from pathx.schemas.schemas import ViTConfig
from pathx.utils.tensor_store import read_container, write_container

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-6
WEIGHTS_KIND = "vit"

_LAYER_TENSORS = (
    "ln1_gamma", "ln1_beta",
    "w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o",
    "ln2_gamma", "ln2_beta",
    "w_mlp1", "b_mlp1", "w_mlp2", "b_mlp2",
)


@dataclass
class LayerWeights:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    w_mlp1: np.ndarray
    b_mlp1: np.ndarray
    w_mlp2: np.ndarray
    b_mlp2: np.ndarray


@dataclass
class ViTWeights:
    config: ViTConfig
    patch_projection: np.ndarray          # W_p, (P*P*C, D)
    positional_embedding: np.ndarray      # E_p, (N + 1, D)
    class_token: np.ndarray               # (D,)
    layers: List[LayerWeights] = field(default_factory=list)
    norm_gamma: Optional[np.ndarray] = None
    norm_beta: Optional[np.ndarray] = None

    def to_tensors(self) -> Dict[str, np.ndarray]:
        tensors = {
            "patch_projection": self.patch_projection,
            "positional_embedding": self.positional_embedding,
            "class_token": self.class_token,
        }
        for i, layer in enumerate(self.layers):
            for name in _LAYER_TENSORS:
                tensors[f"layers.{i}.{name}"] = getattr(layer, name)
        tensors["norm_gamma"] = self.norm_gamma
        tensors["norm_beta"] = self.norm_beta
        return tensors

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], config: ViTConfig) -> "ViTWeights":
        for name, shape in expected_shapes(config).items():
            if name not in tensors:
                raise InputFormatError(f"weights are missing tensor '{name}'")
            if tuple(tensors[name].shape) != shape:
                raise TensorShapeError(name, shape, tensors[name].shape)
            check_finite(tensors[name], name)
        layers = [
            LayerWeights(**{name: tensors[f"layers.{i}.{name}"] for name in _LAYER_TENSORS})
            for i in range(config.num_layers)
        ]
        return cls(
            config=config,
            patch_projection=tensors["patch_projection"],
            positional_embedding=tensors["positional_embedding"],
            class_token=tensors["class_token"],
            layers=layers,
            norm_gamma=tensors["norm_gamma"],
            norm_beta=tensors["norm_beta"],
        )

    def validate(self, config: ViTConfig) -> None:
        """Check every tensor against the shapes implied by config"""
        tensors = self.to_tensors()
        for name, shape in expected_shapes(config).items():
            actual = getattr(tensors.get(name), "shape", ())
            if tuple(actual) != shape:
                raise TensorShapeError(name, shape, actual)


def expected_shapes(config: ViTConfig) -> Dict[str, Tuple[int, ...]]:
    d, hidden = config.embed_dim, config.mlp_hidden
    shapes = {
        "patch_projection": (config.patch_dim, d),
        "positional_embedding": (config.num_patches + 1, d),
        "class_token": (d,),
    }
    for i in range(config.num_layers):
        prefix = f"layers.{i}."
        shapes.update({
            prefix + "ln1_gamma": (d,), prefix + "ln1_beta": (d,),
            prefix + "w_q": (d, d), prefix + "b_q": (d,),
            prefix + "w_k": (d, d), prefix + "b_k": (d,),
            prefix + "w_v": (d, d), prefix + "b_v": (d,),
            prefix + "w_o": (d, d), prefix + "b_o": (d,),
            prefix + "ln2_gamma": (d,), prefix + "ln2_beta": (d,),
            prefix + "w_mlp1": (d, hidden), prefix + "b_mlp1": (hidden,),
            prefix + "w_mlp2": (hidden, d), prefix + "b_mlp2": (d,),
        })
    shapes["norm_gamma"] = (d,)
    shapes["norm_beta"] = (d,)
    return shapes


def init_vit_weights(config: ViTConfig, rng: Rng) -> ViTWeights:
    """Random weights for toy runs and synthetic cohorts"""
    d, hidden = config.embed_dim, config.mlp_hidden

    def dense(fan_in, fan_out):
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))

    patch_projection = dense(config.patch_dim, d)
    positional_embedding = rng.normal(0.0, 0.1, size=(config.num_patches + 1, d))
    class_token = rng.normal(0.0, 0.1, size=d)
    layers = []
    for _ in range(config.num_layers):
        layers.append(LayerWeights(
            ln1_gamma=np.ones(d), ln1_beta=np.zeros(d),
            w_q=dense(d, d), b_q=np.zeros(d),
            w_k=dense(d, d), b_k=np.zeros(d),
            w_v=dense(d, d), b_v=np.zeros(d),
            w_o=dense(d, d), b_o=np.zeros(d),
            ln2_gamma=np.ones(d), ln2_beta=np.zeros(d),
            w_mlp1=dense(d, hidden), b_mlp1=np.zeros(hidden),
            w_mlp2=dense(hidden, d), b_mlp2=np.zeros(d),
        ))
    return ViTWeights(
        config=config,
        patch_projection=patch_projection,
        positional_embedding=positional_embedding,
        class_token=class_token,
        layers=layers,
        norm_gamma=np.ones(d),
        norm_beta=np.zeros(d),
    )


def save_weights(path: str, weights: ViTWeights, config: Optional[ViTConfig] = None) -> str:
    config = config or weights.config
    weights.validate(config)
    return write_container(path, WEIGHTS_KIND, config.model_dump(), weights.to_tensors())


def load_weights(path: str) -> ViTWeights:
    meta, tensors = read_container(path, WEIGHTS_KIND)
    try:
        config = ViTConfig(**meta)
    except ValidationError as e:
        raise InputFormatError(f"invalid ViT config header in {path}: {e}")
    weights = ViTWeights.from_tensors(tensors, config)
    logger.info(f"Loaded ViT weights from {path} (D={config.embed_dim}, layers={config.num_layers})")
    return weights


# -- forward pass --

def scale_pixels(pixels: np.ndarray) -> np.ndarray:
    """uint8 rasters are scaled to [0, 1]; float rasters are taken as already scaled"""
    pixels = np.asarray(pixels)
    if pixels.dtype == np.uint8:
        return pixels.astype(np.float64) / 255.0
    return pixels.astype(np.float64)


def patchify(pixels: np.ndarray, config: ViTConfig) -> np.ndarray:
    """(H, W, C) image -> (N, P*P*C) flattened patches, row-major over the patch grid"""
    x = scale_pixels(getattr(pixels, "pixels", pixels))
    expected = (config.image_size, config.image_size, config.channels)
    if x.shape != expected:
        raise ValueError(f"tile shape {x.shape} does not match ViT input {expected}")
    g, p, c = config.grid_size, config.patch_size, config.channels
    return x.reshape(g, p, g, p, c).transpose(0, 2, 1, 3, 4).reshape(g * g, p * p * c)


def unpatchify(patches: np.ndarray, config: ViTConfig) -> np.ndarray:
    g, p, c = config.grid_size, config.patch_size, config.channels
    return patches.reshape(g, g, p, p, c).transpose(0, 2, 1, 3, 4).reshape(g * p, g * p, c)


def embed(patches: np.ndarray, weights: ViTWeights) -> np.ndarray:
    """Token matrix (N + 1, D): class token first, then W_p x_p + E_p"""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[1] != weights.patch_projection.shape[0]:
        raise ValueError(f"patch matrix {patches.shape} does not match projection {weights.patch_projection.shape}")
    if patches.shape[0] + 1 != weights.positional_embedding.shape[0]:
        raise ValueError(
            f"{patches.shape[0]} patches do not match positional embedding rows {weights.positional_embedding.shape[0]}"
        )
    cls_row = weights.class_token[None, :] + weights.positional_embedding[:1]
    patch_rows = patches @ weights.patch_projection + weights.positional_embedding[1:]
    return np.vstack([cls_row, patch_rows])


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + LAYER_NORM_EPS)
    x_hat = centered * inv_std
    return x_hat * gamma + beta, (x_hat, inv_std)


def _layer_norm_backward(d_out: np.ndarray, gamma: np.ndarray, cache) -> np.ndarray:
    x_hat, inv_std = cache
    d_xhat = d_out * gamma
    return inv_std * (
        d_xhat
        - d_xhat.mean(axis=-1, keepdims=True)
        - x_hat * (d_xhat * x_hat).mean(axis=-1, keepdims=True)
    )


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    tokens, dim = x.shape
    return x.reshape(tokens, num_heads, dim // num_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    heads, tokens, head_dim = x.shape
    return x.transpose(1, 0, 2).reshape(tokens, heads * head_dim)


def _attention_forward(tokens: np.ndarray, layer: LayerWeights, num_heads: int):
    a, ln_cache = layer_norm(tokens, layer.ln1_gamma, layer.ln1_beta)
    q = _split_heads(a @ layer.w_q + layer.b_q, num_heads)
    k = _split_heads(a @ layer.w_k + layer.b_k, num_heads)
    v = _split_heads(a @ layer.w_v + layer.b_v, num_heads)
    head_dim = q.shape[-1]
    logits = q @ k.transpose(0, 2, 1) / math.sqrt(head_dim)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("attention overflow")
    probs = softmax(logits)
    mixed = _merge_heads(probs @ v)
    out = tokens + mixed @ layer.w_o + layer.b_o
    cache = {"ln": ln_cache, "a": a, "q": q, "k": k, "v": v, "probs": probs, "mixed": mixed}
    return out, cache


def attention(tokens: np.ndarray, layer: LayerWeights, num_heads: int, return_weights: bool = False):
    """Pre-norm multi-head self-attention sub-block with residual connection"""
    out, cache = _attention_forward(np.asarray(tokens, dtype=np.float64), layer, num_heads)
    if return_weights:
        return out, cache["probs"]
    return out


def _mlp_forward(tokens: np.ndarray, layer: LayerWeights):
    b, ln_cache = layer_norm(tokens, layer.ln2_gamma, layer.ln2_beta)
    pre = b @ layer.w_mlp1 + layer.b_mlp1
    hidden = gelu(pre)
    out = tokens + hidden @ layer.w_mlp2 + layer.b_mlp2
    return out, {"ln": ln_cache, "b": b, "pre": pre, "hidden": hidden}


def _check_config(weights: ViTWeights, config: ViTConfig) -> None:
    if weights.config != config:
        weights.validate(config)


def _forward(pixels, weights: ViTWeights, config: ViTConfig, keep_trace: bool):
    _check_config(weights, config)
    tokens = embed(patchify(pixels, config), weights)
    trace = []
    for layer in weights.layers:
        mid, attn_cache = _attention_forward(tokens, layer, config.num_heads)
        out, mlp_cache = _mlp_forward(mid, layer)
        if keep_trace:
            trace.append((attn_cache, mlp_cache))
        tokens = out
    normed, final_cache = layer_norm(tokens, weights.norm_gamma, weights.norm_beta)
    check_finite(normed, "ViT output")
    return normed, trace, final_cache


def encode_image(tile, weights: ViTWeights, config: ViTConfig) -> np.ndarray:
    """Full forward pass; returns the class-token representation (length D)"""
    normed, _, _ = _forward(tile, weights, config, keep_trace=False)
    return normed[0].copy()


def vit_input_gradient(tile, weights: ViTWeights, config: ViTConfig, cotangent: np.ndarray) -> np.ndarray:
    """Gradient of <cotangent, encode_image(tile)> with respect to the scaled pixels (H, W, C)"""
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.shape != (config.embed_dim,):
        raise ValueError(f"cotangent must have length {config.embed_dim}")

    _, trace, final_cache = _forward(tile, weights, config, keep_trace=True)
    tokens = config.num_patches + 1

    d_normed = np.zeros((tokens, config.embed_dim))
    d_normed[0] = cotangent
    d_tokens = _layer_norm_backward(d_normed, weights.norm_gamma, final_cache)

    for layer, (attn_cache, mlp_cache) in zip(reversed(weights.layers), reversed(trace)):
        # MLP sub-block
        d_hidden = d_tokens @ layer.w_mlp2.T
        d_pre = d_hidden * _gelu_grad(mlp_cache["pre"])
        d_b = d_pre @ layer.w_mlp1.T
        d_mid = d_tokens + _layer_norm_backward(d_b, layer.ln2_gamma, mlp_cache["ln"])

        # attention sub-block
        d_mixed = _split_heads(d_mid @ layer.w_o.T, config.num_heads)
        probs, q, k, v = attn_cache["probs"], attn_cache["q"], attn_cache["k"], attn_cache["v"]
        d_probs = d_mixed @ v.transpose(0, 2, 1)
        d_v = probs.transpose(0, 2, 1) @ d_mixed
        d_logits = probs * (d_probs - np.sum(d_probs * probs, axis=-1, keepdims=True))
        d_logits /= math.sqrt(q.shape[-1])
        d_q = d_logits @ k
        d_k = d_logits.transpose(0, 2, 1) @ q
        d_a = (
            _merge_heads(d_q) @ layer.w_q.T
            + _merge_heads(d_k) @ layer.w_k.T
            + _merge_heads(d_v) @ layer.w_v.T
        )
        d_tokens = d_mid + _layer_norm_backward(d_a, layer.ln1_gamma, attn_cache["ln"])

    d_patches = d_tokens[1:] @ weights.patch_projection.T
    return unpatchify(d_patches, config)


def encode_batch(tiles: List, weights: ViTWeights, config: ViTConfig, workers: int = 1) -> np.ndarray:
    """Encode tiles in order; rows follow the input order regardless of worker count"""
    if workers <= 1 or len(tiles) <= 1:
        features = [encode_image(tile, weights, config) for tile in tiles]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            features = list(pool.map(lambda tile: encode_image(tile, weights, config), tiles))
    if not features:
        return np.zeros((0, config.embed_dim))
    return np.vstack(features)
