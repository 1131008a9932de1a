"""
Exact t-SNE (no Barnes-Hut approximation) for 2-D cohort maps.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform

from pathx.ml.numeric import Rng
from pathx.schemas.schemas import TSNEConfig

logger = logging.getLogger(__name__)

ENTROPY_TOL = 1e-5
MAX_BISECTION_STEPS = 200
MIN_GAIN = 0.01
MIN_PROBABILITY = 1e-12
KL_EVERY = 50


@dataclass
class TSNEResult:
    coordinates: np.ndarray                 # (n, 2)
    kl_trace: List[Tuple[int, float]] = field(default_factory=list)   # (iteration, KL) at each checkpoint
    kl: Optional[float] = None              # KL of the returned coordinates
    betas: Optional[np.ndarray] = None      # per-point precision 1 / (2 sigma^2)

    @property
    def initial_kl(self) -> float:
        return self.kl_trace[0][1]

    @property
    def final_kl(self) -> float:
        return self.kl if self.kl is not None else self.kl_trace[-1][1]


def squared_distances(x: np.ndarray) -> np.ndarray:
    return squareform(pdist(x, "sqeuclidean"))


def _row_entropy(distances: np.ndarray, beta: float) -> Tuple[float, np.ndarray]:
    """Shannon entropy (nats) and conditional probabilities for one row"""
    shifted = distances - distances.min()
    weights = np.exp(-shifted * beta)
    total = weights.sum()
    probs = weights / total
    entropy = math.log(total) + beta * float(np.sum(shifted * probs))
    return entropy, probs


def conditional_affinities(x: np.ndarray, perplexity: float) -> Tuple[np.ndarray, np.ndarray]:
    """Row-stochastic p_{j|i} with each row's bandwidth bisected to the target perplexity"""
    d2 = squared_distances(x)
    n = d2.shape[0]
    target = math.log(perplexity)
    conditional = np.zeros((n, n))
    betas = np.ones(n)
    unconverged = 0

    for i in range(n):
        others = np.concatenate([np.arange(i), np.arange(i + 1, n)])
        row = d2[i, others]
        beta, beta_min, beta_max = 1.0, -np.inf, np.inf
        entropy, probs = _row_entropy(row, beta)
        for _ in range(MAX_BISECTION_STEPS):
            diff = entropy - target
            if abs(diff) < ENTROPY_TOL:
                break
            if diff > 0:
                beta_min = beta
                beta = beta * 2.0 if beta_max == np.inf else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = beta / 2.0 if beta_min == -np.inf else (beta + beta_min) / 2.0
            entropy, probs = _row_entropy(row, beta)
        else:
            unconverged += 1
        conditional[i, others] = probs
        betas[i] = beta

    if unconverged:
        logger.warning(f"⚠️ Perplexity search did not converge for {unconverged} of {n} points")
    return conditional, betas


def joint_affinities(x: np.ndarray, perplexity: float) -> Tuple[np.ndarray, np.ndarray]:
    conditional, betas = conditional_affinities(x, perplexity)
    n = conditional.shape[0]
    joint = (conditional + conditional.T) / (2.0 * n)
    return np.maximum(joint, MIN_PROBABILITY), betas


def _student_t(y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    num = 1.0 / (1.0 + squared_distances(y))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), MIN_PROBABILITY)
    return num, q


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = ~np.eye(p.shape[0], dtype=bool)
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def max_perplexity(n: int) -> float:
    """Largest usable perplexity for n points (strictly below (n - 1) / 3)"""
    return math.nextafter((n - 1) / 3.0, 0.0)


def resolve_learning_rate(config: TSNEConfig, n: int) -> float:
    if config.learning_rate == "auto":
        return max(n / config.early_exaggeration / 4.0, 50.0)
    return float(config.learning_rate)


def tsne_embed(
    vectors,
    perplexity: Optional[float] = None,
    iterations: Optional[int] = None,
    seed: Union[int, Rng] = 0,
    config: Optional[TSNEConfig] = None,
) -> TSNEResult:
    """
    Embed vectors in 2-D; perplexity and iterations override the config values.

    Early exaggeration and the momentum switch cover at most the first
    quarter of a run. After that phase, a checkpoint whose KL is worse than
    the best so far restores the best layout and halves the learning rate.
    The returned coordinates are the best checkpoint.
    """
    config = config or TSNEConfig()
    perplexity = config.perplexity if perplexity is None else perplexity
    iterations = config.iterations if iterations is None else iterations
    rng = seed if isinstance(seed, Rng) else Rng(seed)

    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 4:
        raise ValueError("t-SNE needs at least 4 vectors")
    n = x.shape[0]
    if not 1.0 < perplexity < (n - 1) / 3.0:
        raise ValueError(f"perplexity {perplexity} infeasible for {n} points (must be below {(n - 1) / 3.0:.3f})")

    learning_rate = resolve_learning_rate(config, n)
    exaggeration_stop = min(config.exaggeration_iterations, iterations // 4)
    momentum_switch = min(config.momentum_switch_iteration, iterations // 4)

    p, betas = joint_affinities(x, perplexity)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)

    _, q = _student_t(y)
    trace = [(0, kl_divergence(p, q))]
    best_kl, best_y = trace[0][1], y.copy()

    for it in range(iterations):
        exaggeration = config.early_exaggeration if it < exaggeration_stop else 1.0
        momentum = config.initial_momentum if it < momentum_switch else config.final_momentum

        num, q = _student_t(y)
        weighted = (exaggeration * p - q) * num
        grad = 4.0 * (np.sum(weighted, axis=1)[:, None] * y - weighted @ y)

        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, MIN_GAIN, out=gains)
        update = momentum * update - learning_rate * gains * grad
        y = y + update
        y = y - y.mean(axis=0)

        done = it + 1
        if done % KL_EVERY == 0 or done == iterations:
            _, q = _student_t(y)
            kl = kl_divergence(p, q)
            trace.append((done, kl))
            if kl < best_kl:
                best_kl, best_y = kl, y.copy()
            elif done > exaggeration_stop:
                logger.debug(f"t-SNE KL rose to {kl:.4f} at iteration {done}; back to {best_kl:.4f}")
                y = best_y.copy()
                update = np.zeros_like(y)
                gains = np.ones_like(y)
                learning_rate *= 0.5

    logger.info(f"📉 t-SNE on {n} points: KL {trace[0][1]:.4f} -> {best_kl:.4f}")
    return TSNEResult(coordinates=best_y, kl_trace=trace, kl=best_kl, betas=betas)
