"""
Shared numerical primitives for every learning module.

Matrices are plain float64 numpy arrays in row-major (C) order; models use
row vectors, so a dense layer is ``x @ W + b`` with ``W`` shaped (in, out).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np
from scipy.special import expit

from pathx.errors import NumericalError

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


def check_finite(values: np.ndarray, name: str) -> np.ndarray:
    """Raise NumericalError if any entry is NaN or infinite"""
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"non-finite values in {name}")
    return values


def sigmoid(x) -> np.ndarray:
    # expit is overflow-free for large |x|
    return expit(np.asarray(x, dtype=np.float64))


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def softmax(x) -> np.ndarray:
    """Softmax over the last axis with max-subtraction"""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or x.shape[-1] == 0:
        raise ValueError("empty input")
    shifted = x - np.max(x, axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / np.sum(exps, axis=-1, keepdims=True)


def mae_loss(x, x_hat) -> float:
    """Mean absolute error (1/n) * sum |x_i - x_hat_i|"""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {x_hat.shape}")
    if x.size == 0:
        raise ValueError("empty input")
    return float(np.mean(np.abs(x - x_hat)))


def mae_grad(x, x_hat) -> np.ndarray:
    """Subgradient of mae_loss with respect to x_hat (sign(0) = 0)"""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    return -np.sign(x - x_hat) / x.size


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON

    @classmethod
    def zeros(cls, size: int, learning_rate: float = 0.001, **kwargs) -> "AdamState":
        return cls(
            first_moment=np.zeros(size, dtype=np.float64),
            second_moment=np.zeros(size, dtype=np.float64),
            learning_rate=learning_rate,
            **kwargs,
        )

    def __post_init__(self):
        if self.step_count < 0:
            raise ValueError("step_count must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.first_moment.shape != self.second_moment.shape:
            raise ValueError("moment shapes differ")


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> Tuple[np.ndarray, AdamState]:
    """One Adam update with bias correction; returns new params and a new state"""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ValueError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.first_moment.shape}"
        )

    step = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)

    new_state = AdamState(
        first_moment=m,
        second_moment=v,
        step_count=step,
        learning_rate=state.learning_rate,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
    )
    return new_params, new_state


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function"""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        f_plus = f(x)
        flat[i] = original - h
        f_minus = f(x)
        flat[i] = original
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericalError(f"non-finite function value at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x.shape)


def flatten_params(tensors: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(t, dtype=np.float64).reshape(-1) for t in tensors])


def unflatten_params(vector: np.ndarray, shapes: Sequence[Tuple[int, ...]]) -> List[np.ndarray]:
    tensors = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape)) if len(shape) else 1
        tensors.append(vector[offset:offset + size].reshape(shape).copy())
        offset += size
    if offset != vector.size:
        raise ValueError(f"vector length {vector.size} does not match shapes total {offset}")
    return tensors


@dataclass
class Rng:
    """Seedable counter-based generator (Philox) with order-independent children"""

    seed: int
    spawn_key: Tuple[int, ...] = ()
    _generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        seq = np.random.SeedSequence(entropy=self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=self.spawn_key)
        self._generator = np.random.Generator(np.random.Philox(seq))

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def child(self, index: int) -> "Rng":
        return Rng(self.seed, self.spawn_key + (int(index),))

    def int_seed(self) -> int:
        """32-bit seed for APIs that take a random_state integer"""
        seq = np.random.SeedSequence(entropy=self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=self.spawn_key)
        return int(seq.generate_state(1, dtype=np.uint32)[0])

    # convenience passthroughs
    def uniform(self, low=0.0, high=1.0, size=None):
        return self._generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._generator.integers(low, high, size)

    def permutation(self, n):
        return self._generator.permutation(n)


def he_uniform(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def xavier_uniform(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# -- chi-square tail via the regularized incomplete gamma function --

_GAMMA_TOL = 1e-12
_GAMMA_MAX_ITER = 10000


def _gamma_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by series (x < a + 1)"""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_GAMMA_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_TOL:
            break
    else:
        raise NumericalError("incomplete gamma series did not converge")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_continued_fraction(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by Lentz continued fraction (x >= a + 1)"""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_TOL:
            break
    else:
        raise NumericalError("incomplete gamma continued fraction did not converge")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_q(a: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(a, x) = 1 - P(a, x)"""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_continued_fraction(a, x)


def chi2_sf(statistic: float, df: int = 1) -> float:
    """Survival function of the chi-square distribution"""
    if statistic <= 0:
        return 1.0
    return regularized_gamma_q(df / 2.0, statistic / 2.0)

