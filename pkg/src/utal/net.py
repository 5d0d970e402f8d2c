"""Dense-network building blocks with hand-derived backward passes.

No autodiff: every layer caches what its backward pass needs and returns
gradients with shapes matching its parameters exactly.  Layers accept either
a single vector or a [batch x dim] matrix; gradients accumulate on the layer
until `zero_grad`, so a batch can be pushed through in one call.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from utal.errors import ConfigError, NumericError
from utal.numerics import Rng

CHECKPOINT_MAGIC = b"UTAL1"

_L2_EPS = 1e-12


@dataclass
class ParamGrads:
    """Gradient block for one dense layer (same shapes as its parameters)."""

    dw: np.ndarray
    db: np.ndarray


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ConfigError(f"expected vector or [batch x dim] matrix, got shape {x.shape}")


class DenseLayer:
    """y = W x + b with cached input for the backward pass."""

    def __init__(self, weights: np.ndarray, biases: np.ndarray, name: str = "dense"):
        weights = np.asarray(weights, dtype=np.float64)
        biases = np.asarray(biases, dtype=np.float64)
        if weights.ndim != 2 or biases.shape != (weights.shape[0],):
            raise ConfigError(
                f"layer {name}: weights {weights.shape} and biases {biases.shape} disagree"
            )
        self.name = name
        self.weights = weights
        self.biases = biases
        self.grad_w = np.zeros_like(weights)
        self.grad_b = np.zeros_like(biases)
        self.vel_w = np.zeros_like(weights)
        self.vel_b = np.zeros_like(biases)
        self._x: np.ndarray | None = None
        self._squeeze = False

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        xb, squeeze = _as_batch(x)
        if xb.shape[1] != self.in_dim:
            raise ConfigError(
                f"layer {self.name}: input dim {xb.shape[1]}, expected {self.in_dim}"
            )
        self._x = xb
        self._squeeze = squeeze
        y = xb @ self.weights.T + self.biases
        return y[0] if squeeze else y

    def backward(self, dy: np.ndarray) -> tuple[np.ndarray, ParamGrads]:
        if self._x is None:
            raise NumericError(f"layer {self.name}: backward before forward")
        dyb, _ = _as_batch(dy)
        if dyb.shape != (self._x.shape[0], self.out_dim):
            raise ConfigError(
                f"layer {self.name}: upstream grad shape {dyb.shape} does not match "
                f"output ({self._x.shape[0]}, {self.out_dim})"
            )
        grads = ParamGrads(dw=dyb.T @ self._x, db=dyb.sum(axis=0))
        self.grad_w += grads.dw
        self.grad_b += grads.db
        dx = dyb @ self.weights
        return (dx[0] if self._squeeze else dx), grads

    def zero_grad(self) -> None:
        self.grad_w[...] = 0.0
        self.grad_b[...] = 0.0


class ReluLayer:
    """Elementwise max(0, x); subgradient at 0 is 0."""

    def __init__(self):
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        self._x = x
        return np.maximum(x, 0.0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise NumericError("relu: backward before forward")
        return np.where(self._x > 0.0, dy, 0.0)


class L2NormalizeLayer:
    """y = x / max(||x||_2, eps), rows normalized independently.

    Backward applies the full Jacobian (I - y y^T)/||x||; inputs with norm
    below eps map to x/eps (plain scaling), which keeps zero vectors at zero.
    """

    def __init__(self):
        self._y: np.ndarray | None = None
        self._norm: np.ndarray | None = None
        self._squeeze = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        xb, squeeze = _as_batch(x)
        norm = np.linalg.norm(xb, axis=1, keepdims=True)
        denom = np.maximum(norm, _L2_EPS)
        y = xb / denom
        self._y = y
        self._norm = norm
        self._squeeze = squeeze
        return y[0] if squeeze else y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._y is None or self._norm is None:
            raise NumericError("l2_normalize: backward before forward")
        dyb, _ = _as_batch(dy)
        denom = np.maximum(self._norm, _L2_EPS)
        proj = np.sum(self._y * dyb, axis=1, keepdims=True)
        dx = np.where(
            self._norm > _L2_EPS,
            (dyb - self._y * proj) / denom,
            dyb / _L2_EPS,
        )
        return dx[0] if self._squeeze else dx


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Functional form of the normalization layer (forward only)."""
    return L2NormalizeLayer().forward(x)


def softmax(z: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax along the last axis; sums to 1 within 1e-9."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_dense(rng: Rng, out_dim: int, in_dim: int, name: str = "dense") -> DenseLayer:
    """Uniform(+-sqrt(6/(in+out))) weights, zero biases, seeded draw order."""
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    w = (rng.uniforms(out_dim * in_dim) * 2.0 - 1.0) * bound
    return DenseLayer(w.reshape(out_dim, in_dim), np.zeros(out_dim), name=name)


def sgd_step(layers: list[DenseLayer], lr: float, momentum: float = 0.0) -> None:
    """v <- momentum*v + grad; p <- p - lr*v, per parameter block.

    Aborts with a diagnostic naming the offending block if any gradient is
    non-finite.
    """
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ConfigError("momentum must lie in [0, 1)")
    for layer in layers:
        for block, grad, vel in (
            ("weights", layer.grad_w, layer.vel_w),
            ("biases", layer.grad_b, layer.vel_b),
        ):
            if not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite gradient in {layer.name}.{block}")
            vel *= momentum
            vel += grad
        layer.weights -= lr * layer.vel_w
        layer.biases -= lr * layer.vel_b


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named float arrays in the versioned "UTAL1" binary format.

    Layout: magic, uint32 entry count, then per entry a uint16 name length,
    the UTF-8 name, uint8 ndim, uint32 dims, and the row-major payload as
    little-endian float32.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_arrays(path) -> dict[str, np.ndarray]:
    """Read a "UTAL1" file back into float64 arrays (exact float32 values)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n_items = int(np.prod(shape)) if ndim else 1
            payload = fh.read(4 * n_items)
            if len(payload) != 4 * n_items:
                raise ConfigError(f"truncated checkpoint payload for entry {name!r}")
            arrays[name] = (
                np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)
            )
        return arrays
