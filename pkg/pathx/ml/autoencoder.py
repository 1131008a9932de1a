"""
Dense autoencoder compressing ViT features into a low-dimensional latent code.

Encoder: ReLU hidden layers and a sigmoid latent layer. Decoder mirrors the
sizes with ReLU hidden layers and a sigmoid output. Trained on mean absolute
reconstruction error with mini-batch Adam and hand-written backpropagation.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.preprocessing import MinMaxScaler

from pathx.errors import InputFormatError
from pathx.ml.numeric import (
    AdamState,
    Rng,
    adam_step,
    check_finite,
    he_uniform,
    mae_loss,
    relu,
    sigmoid,
    xavier_uniform,
)
from pathx.schemas.schemas import AutoencoderConfig, TrainConfig
from pathx.utils.tensor_store import read_container, write_container

logger = logging.getLogger(__name__)

MODEL_KIND = "autoencoder"


@dataclass
class AutoencoderParams:
    layer_sizes: List[int]                 # [input, hidden..., latent]
    encoder_weights: List[np.ndarray]      # (sizes[i], sizes[i+1])
    encoder_biases: List[np.ndarray]
    decoder_weights: List[np.ndarray]      # mirrored, latent -> input
    decoder_biases: List[np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def latent_dim(self) -> int:
        return self.layer_sizes[-1]

    def tensors(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.encoder_weights, self.encoder_biases):
            out.extend([w, b])
        for w, b in zip(self.decoder_weights, self.decoder_biases):
            out.extend([w, b])
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate([t.reshape(-1) for t in self.tensors()])

    @classmethod
    def from_vector(cls, vector: np.ndarray, layer_sizes: Sequence[int]) -> "AutoencoderParams":
        params = cls.zeros(layer_sizes)
        offset = 0
        for tensor in params.tensors():
            tensor[...] = vector[offset:offset + tensor.size].reshape(tensor.shape)
            offset += tensor.size
        if offset != vector.size:
            raise ValueError(f"parameter vector length {vector.size} does not match sizes {list(layer_sizes)}")
        return params

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int]) -> "AutoencoderParams":
        sizes = list(layer_sizes)
        mirrored = sizes[::-1]
        return cls(
            layer_sizes=sizes,
            encoder_weights=[np.zeros((a, b)) for a, b in zip(sizes, sizes[1:])],
            encoder_biases=[np.zeros(b) for b in sizes[1:]],
            decoder_weights=[np.zeros((a, b)) for a, b in zip(mirrored, mirrored[1:])],
            decoder_biases=[np.zeros(b) for b in mirrored[1:]],
        )

    def named_tensors(self) -> Dict[str, np.ndarray]:
        named = {}
        for i, (w, b) in enumerate(zip(self.encoder_weights, self.encoder_biases)):
            named[f"encoder.{i}.weight"] = w
            named[f"encoder.{i}.bias"] = b
        for i, (w, b) in enumerate(zip(self.decoder_weights, self.decoder_biases)):
            named[f"decoder.{i}.weight"] = w
            named[f"decoder.{i}.bias"] = b
        return named


def init_params(layer_sizes: Sequence[int], rng: Rng) -> AutoencoderParams:
    """He-uniform for ReLU layers, Xavier-uniform for the sigmoid layers, zero biases"""
    params = AutoencoderParams.zeros(layer_sizes)
    last = len(params.encoder_weights) - 1
    for weights in (params.encoder_weights, params.decoder_weights):
        for i, w in enumerate(weights):
            fan_in, fan_out = w.shape
            init = xavier_uniform if i == last else he_uniform
            weights[i] = init(rng, fan_in, fan_out)
    return params


def _as_batch(x, expected: int, what: str) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != expected:
        raise ValueError(f"{what} has dimension {batch.shape[-1]}, expected {expected}")
    return batch, single


def _run_stack(h: np.ndarray, weights: List[np.ndarray], biases: List[np.ndarray], trace: Optional[list]):
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        pre = h @ w + b
        h = sigmoid(pre) if i == last else relu(pre)
        if trace is not None:
            trace.append((pre, h))
    return h


def encode(x, params: AutoencoderParams) -> np.ndarray:
    batch, single = _as_batch(x, params.input_dim, "input")
    z = _run_stack(batch, params.encoder_weights, params.encoder_biases, None)
    return z[0] if single else z


def decode(z, params: AutoencoderParams) -> np.ndarray:
    batch, single = _as_batch(z, params.latent_dim, "latent vector")
    x_hat = _run_stack(batch, params.decoder_weights, params.decoder_biases, None)
    return x_hat[0] if single else x_hat


def reconstruct(x, params: AutoencoderParams) -> np.ndarray:
    return decode(encode(x, params), params)


def _backward_stack(
    d_out: np.ndarray,
    inputs: np.ndarray,
    weights: List[np.ndarray],
    trace: list,
) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """Backpropagate through one stack; returns (d_inputs, d_weights, d_biases)"""
    last = len(weights) - 1
    d_weights: List[Optional[np.ndarray]] = [None] * len(weights)
    d_biases: List[Optional[np.ndarray]] = [None] * len(weights)
    d_h = d_out
    for i in range(last, -1, -1):
        pre, h = trace[i]
        if i == last:
            d_pre = d_h * h * (1.0 - h)
        else:
            d_pre = d_h * (pre > 0.0)
        layer_input = trace[i - 1][1] if i > 0 else inputs
        d_weights[i] = layer_input.T @ d_pre
        d_biases[i] = d_pre.sum(axis=0)
        d_h = d_pre @ weights[i].T
    return d_h, d_weights, d_biases


def loss_and_grads(x, params: AutoencoderParams) -> Tuple[float, AutoencoderParams]:
    """Mean absolute reconstruction error over all elements and its exact gradients"""
    batch, _ = _as_batch(x, params.input_dim, "input")
    if batch.shape[0] == 0:
        raise ValueError("empty batch")

    encoder_trace: list = []
    decoder_trace: list = []
    z = _run_stack(batch, params.encoder_weights, params.encoder_biases, encoder_trace)
    x_hat = _run_stack(z, params.decoder_weights, params.decoder_biases, decoder_trace)
    check_finite(x_hat, "reconstruction")

    loss = mae_loss(batch, x_hat)
    d_x_hat = -np.sign(batch - x_hat) / batch.size

    d_z, dec_w, dec_b = _backward_stack(d_x_hat, z, params.decoder_weights, decoder_trace)
    _, enc_w, enc_b = _backward_stack(d_z, batch, params.encoder_weights, encoder_trace)

    grads = AutoencoderParams(
        layer_sizes=list(params.layer_sizes),
        encoder_weights=enc_w,
        encoder_biases=enc_b,
        decoder_weights=dec_w,
        decoder_biases=dec_b,
    )
    check_finite(grads.to_vector(), "autoencoder gradients")
    return loss, grads


def backprop(x, params: AutoencoderParams) -> AutoencoderParams:
    """Gradients of the single-vector loss mean|x - decode(encode(x))|"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("backprop takes a single feature vector")
    return loss_and_grads(x, params)[1]


def encoder_input_gradient(x, params: AutoencoderParams, cotangent) -> np.ndarray:
    """Gradient of <cotangent, encode(x)> with respect to x, row by row for a batch"""
    batch, single = _as_batch(x, params.input_dim, "input")
    trace: list = []
    z = _run_stack(batch, params.encoder_weights, params.encoder_biases, trace)
    d_z = np.broadcast_to(np.asarray(cotangent, dtype=np.float64), z.shape)
    d_x, _, _ = _backward_stack(d_z, batch, params.encoder_weights, trace)
    check_finite(d_x, "encoder input gradient")
    return d_x[0] if single else d_x


def dataset_loss(dataset: np.ndarray, params: AutoencoderParams) -> float:
    return mae_loss(dataset, reconstruct(dataset, params))


def train(
    dataset,
    config: TrainConfig,
    layer_sizes: Optional[Sequence[int]] = None,
    rng: Optional[Rng] = None,
    params: Optional[AutoencoderParams] = None,
) -> Tuple[AutoencoderParams, List[float]]:
    """
    Mini-batch Adam on the MAE objective.

    Returns the trained params and the loss trace: entry 0 is the loss at
    initialization, entry e the full-dataset loss after epoch e.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("empty dataset")
    rng = rng or Rng(config.seed)
    if params is None:
        sizes = list(layer_sizes) if layer_sizes is not None else AutoencoderConfig().layer_sizes
        params = init_params(sizes, rng.child(0))
    if data.shape[1] != params.input_dim:
        raise ValueError(f"dataset has {data.shape[1]} features, autoencoder expects {params.input_dim}")

    shuffle_rng = rng.child(1)
    vector = params.to_vector()
    state = AdamState.zeros(vector.size, learning_rate=config.learning_rate)
    sizes = params.layer_sizes

    trace = [dataset_loss(data, params)]
    logger.info(f"🚀 Training autoencoder {sizes} on {data.shape[0]} vectors, initial MAE {trace[0]:.6f}")

    n = data.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n) if config.shuffle else np.arange(n)
        for start in range(0, n, config.batch_size):
            batch = data[order[start:start + config.batch_size]]
            _, grads = loss_and_grads(batch, params)
            vector, state = adam_step(vector, grads.to_vector(), state)
            params = AutoencoderParams.from_vector(vector, sizes)
        trace.append(dataset_loss(data, params))
        if epoch % 10 == 0 or epoch == config.epochs:
            logger.debug(f"epoch {epoch}: MAE {trace[-1]:.6f}")

    logger.info(f"✅ Autoencoder trained: MAE {trace[0]:.6f} -> {trace[-1]:.6f}")
    return params, trace


class FeatureScaler:
    """Per-feature min-max scaling to [0, 1]; values outside the fitted range are clipped"""

    def __init__(self):
        self.scaler = MinMaxScaler(feature_range=(0.0, 1.0), clip=True)
        self.is_fitted = False

    def fit(self, features) -> "FeatureScaler":
        self.scaler.fit(np.asarray(features, dtype=np.float64))
        self.is_fitted = True
        return self

    def transform(self, features) -> np.ndarray:
        if not self.is_fitted:
            raise ValueError("scaler has not been fitted")
        return self.scaler.transform(np.asarray(features, dtype=np.float64))

    def fit_transform(self, features) -> np.ndarray:
        return self.fit(features).transform(features)

    @property
    def data_min(self) -> np.ndarray:
        return self.scaler.data_min_

    @property
    def data_max(self) -> np.ndarray:
        return self.scaler.data_max_

    @classmethod
    def from_bounds(cls, data_min: np.ndarray, data_max: np.ndarray) -> "FeatureScaler":
        # fitting on the two bound rows reproduces the original data_min_ / data_max_
        return cls().fit(np.vstack([data_min, data_max]))


def save_autoencoder(path: str, params: AutoencoderParams, scaler: FeatureScaler, config: Optional[TrainConfig] = None) -> str:
    tensors = params.named_tensors()
    tensors["scaler_min"] = scaler.data_min
    tensors["scaler_max"] = scaler.data_max
    meta = {"layer_sizes": list(params.layer_sizes)}
    if config is not None:
        meta["train"] = config.model_dump()
    digest = write_container(path, MODEL_KIND, meta, tensors)
    logger.info(f"💾 Saved autoencoder to {path}")
    return digest


def load_autoencoder(path: str) -> Tuple[AutoencoderParams, FeatureScaler]:
    meta, tensors = read_container(path, MODEL_KIND)
    sizes = meta.get("layer_sizes")
    if not sizes or len(sizes) < 2:
        raise InputFormatError(f"{path} has no valid layer_sizes")

    params = AutoencoderParams.zeros(sizes)
    for name, expected in params.named_tensors().items():
        if name not in tensors:
            raise InputFormatError(f"{path} is missing tensor '{name}'")
        if tensors[name].shape != expected.shape:
            raise InputFormatError(f"tensor '{name}' has shape {tensors[name].shape}, expected {expected.shape}")
        expected[...] = tensors[name]

    for name in ("scaler_min", "scaler_max"):
        if name not in tensors or tensors[name].shape != (sizes[0],):
            raise InputFormatError(f"{path} has no valid '{name}' tensor")
    scaler = FeatureScaler.from_bounds(tensors["scaler_min"], tensors["scaler_max"])
    return params, scaler
