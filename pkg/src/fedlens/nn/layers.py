"""Layer specifications, activations, and shape inference.

Layout conventions: image batches are [N, C, H, W]; dense inputs are
[N, features]. Conv2D uses stride 1 and no padding; MaxPool2D uses
stride equal to the pool size and truncates any remainder rows/cols.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMOID = "sigmoid"
RELU = "relu"
SOFTMAX = "softmax"
LINEAR = "linear"
ACTIVATIONS = (SIGMOID, RELU, SOFTMAX, LINEAR)

DENSE = "dense"
CONV2D = "conv2d"
MAXPOOL2D = "maxpool2d"
FLATTEN = "flatten"


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent with the layer chain."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the architecture. Unused fields stay at their zero value."""

    kind: str
    activation: str = LINEAR
    units: int = 0  # dense
    filters: int = 0  # conv2d
    kernel: tuple[int, int] = (0, 0)  # conv2d
    pool: tuple[int, int] = (0, 0)  # maxpool2d

    @property
    def trainable(self) -> bool:
        return self.kind in (DENSE, CONV2D)


def dense(units: int, activation: str = LINEAR) -> LayerSpec:
    if units < 1:
        raise ValueError(f"dense units must be positive, got {units}")
    return LayerSpec(kind=DENSE, activation=activation, units=units)


def conv2d(filters: int, kernel_h: int, kernel_w: int, activation: str = LINEAR) -> LayerSpec:
    if filters < 1 or kernel_h < 1 or kernel_w < 1:
        raise ValueError("conv2d filters and kernel sizes must be positive")
    return LayerSpec(kind=CONV2D, activation=activation, filters=filters, kernel=(kernel_h, kernel_w))


def maxpool2d(pool_h: int, pool_w: int) -> LayerSpec:
    if pool_h < 1 or pool_w < 1:
        raise ValueError("maxpool2d pool sizes must be positive")
    return LayerSpec(kind=MAXPOOL2D, pool=(pool_h, pool_w))


def flatten() -> LayerSpec:
    return LayerSpec(kind=FLATTEN)


def validate_chain(specs: tuple[LayerSpec, ...] | list[LayerSpec]) -> None:
    """Check the structural rules that do not depend on an input shape."""
    if not specs:
        raise ValueError("architecture needs at least one layer")
    for pos, spec in enumerate(specs):
        if spec.kind not in (DENSE, CONV2D, MAXPOOL2D, FLATTEN):
            raise ValueError(f"unknown layer kind {spec.kind!r}")
        if spec.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {spec.activation!r}")
        if not spec.trainable and spec.activation != LINEAR:
            raise ValueError(f"{spec.kind} carries no activation, got {spec.activation!r}")
        if spec.activation == SOFTMAX and pos != len(specs) - 1:
            raise ValueError("softmax is permitted only on the final layer")
    last = specs[-1]
    if last.activation == SOFTMAX and last.kind != DENSE:
        raise ValueError("softmax output requires a dense final layer")


def output_shape(spec: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Per-sample output shape of one layer given its per-sample input shape."""
    if spec.kind == DENSE:
        if len(in_shape) != 1:
            raise ShapeError(
                f"dense layer expects flat input, got shape {in_shape}; add a flatten layer first"
            )
        return (spec.units,)
    if spec.kind == CONV2D:
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d expects [C, H, W] input, got shape {in_shape}")
        c, h, w = in_shape
        kh, kw = spec.kernel
        if h < kh or w < kw:
            raise ShapeError(f"conv2d kernel {spec.kernel} does not fit input {in_shape}")
        return (spec.filters, h - kh + 1, w - kw + 1)
    if spec.kind == MAXPOOL2D:
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool2d expects [C, H, W] input, got shape {in_shape}")
        c, h, w = in_shape
        ph, pw = spec.pool
        if h < ph or w < pw:
            raise ShapeError(f"maxpool2d pool {spec.pool} does not fit input {in_shape}")
        return (c, h // ph, w // pw)
    if spec.kind == FLATTEN:
        return (int(np.prod(in_shape)),)
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def init_layer(spec: LayerSpec, in_shape: tuple[int, ...], rng: np.random.Generator):
    """Initialize (weights, bias) for a trainable layer, or None.

    Weights are uniform in [-limit, limit] with limit = sqrt(6/(fan_in+fan_out));
    biases start at zero.
    """
    if spec.kind == DENSE:
        fan_in = in_shape[0]
        fan_out = spec.units
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        b = np.zeros(spec.units)
        return w, b
    if spec.kind == CONV2D:
        c = in_shape[0]
        kh, kw = spec.kernel
        fan_in = c * kh * kw
        fan_out = spec.filters * kh * kw
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(spec.filters, c, kh, kw))
        b = np.zeros(spec.filters)
        return w, b
    return None


def activate(a: np.ndarray, activation: str) -> np.ndarray:
    if activation == LINEAR:
        return a
    if activation == SIGMOID:
        # Two-branch form avoids overflow in exp for large |a|.
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        return out
    if activation == RELU:
        return np.maximum(a, 0.0)
    if activation == SOFTMAX:
        shifted = a - a.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown activation {activation!r}")


def activation_backward(grad_out: np.ndarray, pre_act: np.ndarray, out: np.ndarray, activation: str) -> np.ndarray:
    """Map dE/d(output) to the error term dE/d(pre-activation)."""
    if activation == LINEAR:
        return grad_out
    if activation == SIGMOID:
        return grad_out * (out * (1.0 - out))
    if activation == RELU:
        return grad_out * (pre_act > 0)
    if activation == SOFTMAX:
        # Full Jacobian-vector product; used when softmax is paired with a
        # loss other than the fused cross-entropy path.
        inner = (grad_out * out).sum(axis=-1, keepdims=True)
        return out * (grad_out - inner)
    raise ValueError(f"unknown activation {activation!r}")
