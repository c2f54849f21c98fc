"""Minimal deterministic numeric kernel.

Dense affine layers with ReLU/identity/softmax activations and inverted
dropout, stable softmax, cross-entropy, bias-corrected Adam, and
finite-difference gradient checking. Everything operates on float64
numpy arrays (a flat row-major buffer plus a shape — no wrapper type),
takes its randomness as an explicit ``numpy.random.Generator``, and is a
pure function of its inputs.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError, UsageError

ACTIVATIONS = ("identity", "relu", "softmax")


def tensor(data) -> np.ndarray:
    """Coerce to a float64 array, rejecting non-finite entries."""
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor contains NaN or Inf")
    return arr


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains NaN or Inf")
    return arr


# --------------------------------------------------------------------------
# dense layers
# --------------------------------------------------------------------------

@dataclass
class DenseLayer:
    """Affine map with an element-wise (or last-axis softmax) activation.

    ``weights`` has shape (out, in) and ``bias`` shape (out,).
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weights = tensor(self.weights)
        self.bias = tensor(self.bias)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("weights must be 2-D and bias 1-D")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


def init_dense(rng: np.random.Generator, in_dim: int, out_dim: int,
               activation: str = "identity") -> DenseLayer:
    """Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero bias."""
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    w = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    return DenseLayer(w, np.zeros(out_dim), activation)


@dataclass
class DenseCache:
    """Everything dense_backward needs from the matching forward call."""

    layer: DenseLayer
    x: np.ndarray
    z: np.ndarray          # pre-activation
    a: np.ndarray          # post-activation
    mask: np.ndarray | None
    keep: float            # 1 - dropout_rate
    out_shape: tuple


def _apply_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return z
    if activation == "relu":
        return np.maximum(z, 0.0)
    return softmax(z)


def dense_forward(layer: DenseLayer, x, dropout_rate: float = 0.0,
                  rng: np.random.Generator | None = None,
                  training: bool = False):
    """Apply the layer to a vector or a batch of row vectors.

    Inverted dropout (surviving units scaled by 1/(1-rate)) is applied
    after the activation, only when ``training`` is true. Returns
    ``(y, cache)``.
    """
    x = tensor(x)
    if x.ndim not in (1, 2):
        raise ShapeError(f"input must be 1-D or 2-D, got {x.ndim}-D")
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(f"input dim {x.shape[-1]} != layer input dim {layer.in_dim}")
    if not 0.0 <= dropout_rate < 1.0:
        raise UsageError(f"dropout_rate must be in [0, 1), got {dropout_rate}")

    z = x @ layer.weights.T + layer.bias
    a = _apply_activation(z, layer.activation)

    mask = None
    keep = 1.0
    if training and dropout_rate > 0.0:
        if rng is None:
            raise UsageError("dropout with training=True requires an rng")
        keep = 1.0 - dropout_rate
        mask = rng.random(a.shape) >= dropout_rate
        y = a * mask / keep
    else:
        y = a

    check_finite(y, "dense_forward output")
    cache = DenseCache(layer, x, z, a, mask, keep, y.shape)
    return y, cache


def dense_backward(cache: DenseCache, grad_out):
    """Exact gradients of the forward map: ``(grad_x, grad_W, grad_b)``."""
    grad_out = tensor(grad_out)
    if grad_out.shape != cache.out_shape:
        raise UsageError(
            f"grad_out shape {grad_out.shape} does not match cached output "
            f"shape {cache.out_shape}; cache is stale or mismatched"
        )
    g = grad_out
    if cache.mask is not None:
        g = g * cache.mask / cache.keep

    act = cache.layer.activation
    if act == "identity":
        gz = g
    elif act == "relu":
        gz = g * (cache.z > 0.0)
    else:  # softmax Jacobian-vector product, row-wise over the last axis
        p = cache.a
        inner = np.sum(g * p, axis=-1, keepdims=True)
        gz = p * (g - inner)

    x2 = np.atleast_2d(cache.x)
    gz2 = np.atleast_2d(gz)
    grad_w = gz2.T @ x2
    grad_b = gz2.sum(axis=0)
    grad_x = gz @ cache.layer.weights
    return grad_x, grad_w, grad_b


# --------------------------------------------------------------------------
# softmax / cross-entropy
# --------------------------------------------------------------------------

def softmax(z) -> np.ndarray:
    """Stable softmax over the last axis (max-subtracted)."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise UsageError("softmax of an empty tensor")
    check_finite(z, "softmax input")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(y, p) -> float:
    """-sum(y * log p) with p clamped at 1e-12 before the log."""
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape:
        raise ShapeError(f"y shape {y.shape} != p shape {p.shape}")
    return float(-(y * np.log(np.maximum(p, 1e-12))).sum())


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second-moment accumulators plus hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray, lr: float = 0.001, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), 0, lr, beta1, beta2, eps)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState):
    """Standard bias-corrected Adam update; returns ``(params, state)``.

    Both inputs are left untouched; the step counter increments by one.
    """
    params = np.ascontiguousarray(params, dtype=np.float64)
    grads = np.ascontiguousarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeError(f"params shape {params.shape} != grads shape {grads.shape}")
    if params.shape != state.m.shape:
        raise ShapeError(f"Adam state shape {state.m.shape} != params shape {params.shape}")
    step = state.step + 1
    p2, m2, v2 = kernels.adam_update(
        params.ravel(), grads.ravel(), state.m.ravel(), state.v.ravel(),
        step, state.lr, state.beta1, state.beta2, state.eps,
    )
    new_state = replace(state, m=m2.reshape(params.shape), v=v2.reshape(params.shape), step=step)
    return p2.reshape(params.shape), new_state


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------

def grad_check(f, params: np.ndarray, h: float = 1e-5) -> float:
    """Max relative disagreement of f's gradient with central differences.

    ``f`` maps a parameter vector to ``(value, gradient)``. The per-
    coordinate error is |analytic - numeric| / max(1, |analytic|); the
    maximum over coordinates is returned.
    """
    params = np.asarray(params, dtype=np.float64)
    value, grad = f(params)
    if not np.isfinite(value):
        raise NumericError("objective is not finite at the base point")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ShapeError(f"gradient shape {grad.shape} != params shape {params.shape}")
    check_finite(grad, "analytic gradient")

    worst = 0.0
    flat = params.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        bump = np.array(flat)
        bump[i] = flat[i] + h
        up, _ = f(bump.reshape(params.shape))
        bump[i] = flat[i] - h
        down, _ = f(bump.reshape(params.shape))
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"objective not finite at perturbation of coordinate {i}")
        numeric = (up - down) / (2.0 * h)
        err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
        if err > worst:
            worst = err
    return worst
