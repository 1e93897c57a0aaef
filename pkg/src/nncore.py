"""Small dense-network engine used by every utility network.

Arrays are numpy, batches are rows. Every forward/backward function accepts a
single observation (1-D) or a batch (2-D, one row per observation); batched
weight gradients are summed over rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import DEFAULTS
from .errors import DimensionError, NumericalError

logger = logging.getLogger(__name__)

BlockGradient = Tuple[np.ndarray, np.ndarray]


class ActivationKind(str, Enum):
    RELU = 'relu'
    TANH = 'tanh'
    IDENTITY = 'identity'

    def apply(self, z: np.ndarray) -> np.ndarray:
        if self is ActivationKind.RELU:
            return np.maximum(z, 0.0)
        if self is ActivationKind.TANH:
            return np.tanh(z)
        return z

    def derivative(self, z: np.ndarray) -> np.ndarray:
        # relu'(0) is taken as 0
        if self is ActivationKind.RELU:
            return (z > 0.0).astype(float)
        if self is ActivationKind.TANH:
            t = np.tanh(z)
            return 1.0 - t * t
        return np.ones_like(z)


@dataclass
class ParameterBlock:
    """Dense layer parameters: ``weights`` is (out_dim, in_dim)."""
    weights: np.ndarray
    bias: np.ndarray
    tie_tag: Optional[str] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"weights {self.weights.shape} and bias {self.bias.shape} do not form a layer"
            )

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size

    def copy(self) -> 'ParameterBlock':
        return ParameterBlock(self.weights.copy(), self.bias.copy(), self.tie_tag)


@dataclass
class DenseCache:
    x: np.ndarray
    z: np.ndarray
    block: ParameterBlock
    activation: ActivationKind
    single: bool


def glorot_init(out_dim: int, in_dim: int, rng: np.random.Generator,
                tie_tag: Optional[str] = None) -> ParameterBlock:
    """Glorot-uniform weights, zero bias."""
    if out_dim < 1 or in_dim < 1:
        raise DimensionError(f"layer dims must be >= 1, got ({out_dim}, {in_dim})")
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    weights = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    return ParameterBlock(weights, np.zeros(out_dim), tie_tag)


def _as_batch(x: np.ndarray, width: int) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x[np.newaxis, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != width:
        raise DimensionError(f"expected input width {width}, got shape {x.shape}")
    return batch, single


def dense_forward(x: np.ndarray, p: ParameterBlock,
                  a: ActivationKind) -> Tuple[np.ndarray, DenseCache]:
    batch, single = _as_batch(x, p.in_dim)
    z = batch @ p.weights.T + p.bias
    y = ActivationKind(a).apply(z)
    cache = DenseCache(x=batch, z=z, block=p, activation=ActivationKind(a), single=single)
    return (y[0] if single else y), cache


def dense_backward(cache: DenseCache, upstream: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dW, db, dx) of the cached forward map."""
    up = np.asarray(upstream, dtype=float)
    if cache.single and up.ndim == 1:
        up = up[np.newaxis, :]
    if up.shape != cache.z.shape:
        raise DimensionError(f"upstream shape {np.shape(upstream)} does not match output {cache.z.shape}")
    delta = up * cache.activation.derivative(cache.z)
    dW = delta.T @ cache.x
    db = delta.sum(axis=0)
    dx = delta @ cache.block.weights
    return dW, db, (dx[0] if cache.single else dx)


def accumulate_tied_gradients(grads: Sequence[BlockGradient]) -> BlockGradient:
    """Sum the per-copy gradients of one shared block."""
    if not grads:
        raise ValueError("no gradients to accumulate")
    dW0, db0 = grads[0]
    total_W = np.zeros_like(dW0, dtype=float)
    total_b = np.zeros_like(db0, dtype=float)
    for dW, db in grads:
        if np.shape(dW) != total_W.shape or np.shape(db) != total_b.shape:
            raise DimensionError(
                f"tied gradient shapes differ: {np.shape(dW)} vs {total_W.shape}"
            )
        total_W += dW
        total_b += db
    return total_W, total_b


def softmax(u: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise NumericalError("non-finite utilities passed to softmax")
    shifted = u - u.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ClampCounter:
    """Running count of chosen probabilities clamped by cross_entropy."""
    count: int = 0


def chosen_probabilities(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p, dtype=float))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if p.shape[0] != y.shape[0]:
        raise DimensionError(f"{p.shape[0]} probability rows for {y.shape[0]} choices")
    return p[np.arange(len(y)), y]


def cross_entropy(p: np.ndarray, y: np.ndarray, clamp: float = DEFAULTS.ce_clamp,
                  counter: Optional[ClampCounter] = None) -> float:
    """Mean negative log-probability of the chosen (0-based) alternatives."""
    chosen = chosen_probabilities(p, y)
    if chosen.size == 0:
        raise ValueError("cross entropy of an empty batch")
    clamped = chosen < clamp
    if clamped.any():
        n_clamped = int(clamped.sum())
        if counter is not None:
            counter.count += n_clamped
        logger.warning("Clamped %d chosen probabilities below %g", n_clamped, clamp)
        chosen = np.maximum(chosen, clamp)
    return float(-np.mean(np.log(chosen)))


def softmax_cross_entropy_grad(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d CE / d utilities for a batch: (p - onehot(y)) / N."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    grad = p.copy()
    grad[np.arange(len(y)), y] -= 1.0
    return grad / len(y)


@dataclass
class AdamState:
    learning_rate: float = DEFAULTS.learning_rate
    beta1: float = DEFAULTS.beta1
    beta2: float = DEFAULTS.beta2
    epsilon: float = DEFAULTS.epsilon
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update, applied in place to ``params``."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    step_size = state.learning_rate / bc1

    for key, value in params.items():
        g = grads[key]
        if np.shape(g) != value.shape:
            raise DimensionError(f"gradient for {key!r} has shape {np.shape(g)}, expected {value.shape}")
        if key not in state.m:
            state.m[key] = np.zeros_like(value)
            state.v[key] = np.zeros_like(value)
        state.m[key] *= state.beta1
        state.m[key] += (1.0 - state.beta1) * g
        state.v[key] *= state.beta2
        state.v[key] += (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(state.v[key] / bc2) + state.epsilon
        value -= step_size * state.m[key] / denom
    return params, state


def blocks_to_dict(blocks: Mapping[str, ParameterBlock]) -> Dict[str, Any]:
    """JSON-ready form; key order follows ``blocks``."""
    return {
        key: {
            'weights': block.weights.tolist(),
            'bias': block.bias.tolist(),
            'tie_tag': block.tie_tag,
        }
        for key, block in blocks.items()
    }


def blocks_from_dict(raw: Mapping[str, Any]) -> Dict[str, ParameterBlock]:
    blocks: Dict[str, ParameterBlock] = {}
    for key, item in raw.items():
        weights = np.asarray(item['weights'], dtype=float)
        if weights.ndim == 1:
            weights = weights.reshape(1, -1)
        blocks[key] = ParameterBlock(weights, np.asarray(item['bias'], dtype=float), item.get('tie_tag'))
    return blocks


def layer_sizes(n_inputs: int, hidden_layers: int, nodes_per_layer: int, n_outputs: int = 1) -> List[Tuple[int, int]]:
    """(out_dim, in_dim) for each layer of a stack, output layer last."""
    sizes = []
    width = n_inputs
    for _ in range(hidden_layers):
        sizes.append((nodes_per_layer, width))
        width = nodes_per_layer
    sizes.append((n_outputs, width))
    return sizes
