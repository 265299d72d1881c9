"""Feed-forward network: forward pass, backpropagation, SGD, training loop.

Gradients are computed per sample and averaged over the batch, so the bias
gradient of a layer is the batch mean of its error terms and each weight
gradient is the batch mean of (error term x upstream activation). All
arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    CONV2D,
    DENSE,
    FLATTEN,
    MAXPOOL2D,
    SOFTMAX,
    LayerSpec,
    ShapeError,
    activate,
    activation_backward,
    init_layer,
    output_shape,
    validate_chain,
)

MSE = "mse"
CROSS_ENTROPY = "cross_entropy"
LOSSES = (MSE, CROSS_ENTROPY)


class LossError(ValueError):
    """Raised for loss inputs that violate the loss's preconditions."""


class CacheMismatchError(ValueError):
    """Raised when backward() receives a cache from a different forward()."""


def _freeze(x: np.ndarray) -> np.ndarray:
    out = np.array(x, dtype=np.float64, order="C")
    if not np.isfinite(out).all():
        raise ValueError("parameters must be finite (no NaN/Inf)")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ModelParams:
    """Ordered (weights, bias) pairs, one per trainable layer.

    Arrays are copied on construction and marked read-only, so a ModelParams
    value can be shared freely between threads and rounds.
    """

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "layers", tuple((_freeze(w), _freeze(b)) for w, b in self.layers)
        )

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)


# Gradients share ModelParams' structure: one weight-gradient and one
# bias-gradient tensor per trainable layer, shape-identical to the model.
Gradients = ModelParams


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float
    batch_size: int
    epochs: int
    loss: str = CROSS_ENTROPY
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class ForwardCache:
    """Everything backward() needs: per-layer outputs and pre-activations.

    outputs[0] is the input batch; outputs[i] is the output of specs[i-1].
    pre_acts[i] and aux[i] belong to specs[i] (aux holds conv patches,
    pooling switches, or the pre-flatten shape).
    """

    model: ModelParams
    specs: tuple[LayerSpec, ...]
    outputs: list = field(default_factory=list)
    pre_acts: list = field(default_factory=list)
    aux: list = field(default_factory=list)


def check_model_matches(model: ModelParams, specs) -> None:
    trainable = sum(1 for s in specs if s.trainable)
    if trainable != model.num_layers:
        raise ShapeError(
            f"model has {model.num_layers} trainable layers but the architecture has {trainable}"
        )


def init_params(specs, input_shape: tuple[int, ...], rng: np.random.Generator) -> ModelParams:
    """Seeded initialization for the given layer chain and per-sample input shape."""
    specs = tuple(specs)
    validate_chain(specs)
    shape = tuple(input_shape)
    pairs = []
    for spec in specs:
        init = init_layer(spec, shape, rng)
        if init is not None:
            pairs.append(init)
        shape = output_shape(spec, shape)
    return ModelParams(layers=tuple(pairs))


def _conv_patches(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Extract sliding windows: [N, C, H, W] -> [N, OH, OW, C*kh*kw]."""
    n, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    sn, sc, sh, sw = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, shape=(n, oh, ow, c, kh, kw), strides=(sn, sh, sw, sc, sh, sw), writeable=False
    )
    return np.ascontiguousarray(win).reshape(n, oh, ow, c * kh * kw)


def _pool_windows(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """Disjoint pooling windows: [N, C, H, W] -> [N, C, OH, OW, ph*pw]."""
    n, c, h, w = x.shape
    oh, ow = h // ph, w // pw
    xt = x[:, :, : oh * ph, : ow * pw].reshape(n, c, oh, ph, ow, pw)
    return xt.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, ph * pw)


def forward(model: ModelParams, specs, x: np.ndarray):
    """Run the network on a batch. Returns (output, cache); mutates nothing.

    x is [N, ...] with the per-sample shape expected by the first layer.
    """
    specs = tuple(specs)
    validate_chain(specs)
    check_model_matches(model, specs)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise ShapeError(f"input must be a batch [N, ...], got shape {x.shape}")

    cache = ForwardCache(model=model, specs=specs)
    cache.outputs.append(x)
    out = x
    layer_i = 0
    for spec in specs:
        if spec.kind == DENSE:
            w, b = model.layers[layer_i]
            layer_i += 1
            if out.ndim != 2:
                raise ShapeError(
                    f"dense layer expects flat input, got shape {out.shape[1:]} per sample"
                )
            if out.shape[1] != w.shape[0]:
                raise ShapeError(
                    f"dense layer expects {w.shape[0]} inputs, got {out.shape[1]}"
                )
            a = out @ w + b
            cache.pre_acts.append(a)
            cache.aux.append(None)
            out = activate(a, spec.activation)
        elif spec.kind == CONV2D:
            w, b = model.layers[layer_i]
            layer_i += 1
            if out.ndim != 4:
                raise ShapeError(f"conv2d expects [N, C, H, W] input, got shape {out.shape}")
            if out.shape[1] != w.shape[1]:
                raise ShapeError(
                    f"conv2d expects {w.shape[1]} input channels, got {out.shape[1]}"
                )
            kh, kw = spec.kernel
            if out.shape[2] < kh or out.shape[3] < kw:
                raise ShapeError(
                    f"conv2d kernel {spec.kernel} does not fit input {out.shape[2:]}"
                )
            patches = _conv_patches(out, kh, kw)
            wmat = w.reshape(spec.filters, -1)
            a = np.einsum("nopk,fk->nfop", patches, wmat, optimize=True)
            a += b[None, :, None, None]
            cache.pre_acts.append(a)
            cache.aux.append(patches)
            out = activate(a, spec.activation)
        elif spec.kind == MAXPOOL2D:
            if out.ndim != 4:
                raise ShapeError(f"maxpool2d expects [N, C, H, W] input, got shape {out.shape}")
            ph, pw = spec.pool
            windows = _pool_windows(out, ph, pw)
            switches = windows.argmax(axis=-1)
            cache.pre_acts.append(None)
            cache.aux.append((switches, out.shape))
            out = np.take_along_axis(windows, switches[..., None], axis=-1)[..., 0]
        elif spec.kind == FLATTEN:
            cache.pre_acts.append(None)
            cache.aux.append(out.shape)
            out = out.reshape(out.shape[0], -1)
        cache.outputs.append(out)
    return out, cache


def compute_loss(predicted: np.ndarray, target: np.ndarray, loss: str) -> float:
    """Batch loss: MSE is sum of squared errors over 2N; cross-entropy is
    the mean negative log-likelihood."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ShapeError(
            f"predicted shape {predicted.shape} != target shape {target.shape}"
        )
    n = predicted.shape[0]
    if n == 0:
        raise LossError("empty batch")
    if loss == MSE:
        d = predicted - target
        return float((d * d).sum() / (2.0 * n))
    if loss == CROSS_ENTROPY:
        row_sums = predicted.sum(axis=-1)
        if np.any(predicted < -1e-12) or np.any(np.abs(row_sums - 1.0) > 1e-6):
            raise LossError(
                "cross-entropy expects probability vectors (non-negative, rows summing to 1)"
            )
        p = np.clip(predicted, 1e-300, None)
        return float(-(target * np.log(p)).sum() / n)
    raise ValueError(f"loss must be one of {LOSSES}, got {loss!r}")


def backward(model: ModelParams, specs, cache: ForwardCache, target: np.ndarray, loss: str) -> Gradients:
    """Backpropagate the batch-mean loss through the cached forward pass.

    For each trainable layer the bias gradient is the batch mean of the
    layer's error terms and the weight gradient is the batch mean of
    (error term x upstream activation).
    """
    specs = tuple(specs)
    if cache.model is not model:
        raise CacheMismatchError("cache was produced by forward() on a different model")
    if cache.specs != specs:
        raise CacheMismatchError("cache was produced with a different architecture")
    if len(cache.outputs) != len(specs) + 1:
        raise CacheMismatchError("cache is incomplete")

    out = cache.outputs[-1]
    target = np.asarray(target, dtype=np.float64)
    if out.shape != target.shape:
        raise ShapeError(f"output shape {out.shape} != target shape {target.shape}")
    n = out.shape[0]

    if loss == CROSS_ENTROPY:
        if specs[-1].activation != SOFTMAX:
            raise LossError("cross-entropy training requires a softmax final layer")
        # Fused softmax/cross-entropy error term at the output pre-activation.
        delta = out - target
        fused_last = True
        grad_out = None
    elif loss == MSE:
        grad_out = out - target  # per-sample dE/d(output)
        fused_last = False
    else:
        raise ValueError(f"loss must be one of {LOSSES}, got {loss!r}")

    grads: list[tuple[np.ndarray, np.ndarray]] = []
    layer_i = model.num_layers
    for pos in range(len(specs) - 1, -1, -1):
        spec = specs[pos]
        if spec.kind == DENSE:
            layer_i -= 1
            w, _ = model.layers[layer_i]
            if fused_last and pos == len(specs) - 1:
                d = delta
            else:
                d = activation_backward(
                    grad_out, cache.pre_acts[pos], cache.outputs[pos + 1], spec.activation
                )
            prev = cache.outputs[pos]
            dw = (prev.T @ d) / n
            db = d.sum(axis=0) / n
            grads.append((dw, db))
            grad_out = d @ w.T
        elif spec.kind == CONV2D:
            layer_i -= 1
            w, _ = model.layers[layer_i]
            d = activation_backward(
                grad_out, cache.pre_acts[pos], cache.outputs[pos + 1], spec.activation
            )
            patches = cache.aux[pos]
            f = w.shape[0]
            kh, kw = spec.kernel
            wmat = w.reshape(f, -1)
            dw = np.einsum("nfop,nopk->fk", d, patches, optimize=True) / n
            db = d.sum(axis=(0, 2, 3)) / n
            grads.append((dw.reshape(w.shape), db))
            dpatches = np.einsum("nfop,fk->nopk", d, wmat, optimize=True)
            in_shape = cache.outputs[pos].shape
            nb, c = in_shape[0], in_shape[1]
            oh, ow = d.shape[2], d.shape[3]
            dpatches = dpatches.reshape(nb, oh, ow, c, kh, kw)
            dx = np.zeros(in_shape)
            for i in range(kh):
                for j in range(kw):
                    dx[:, :, i : i + oh, j : j + ow] += dpatches[:, :, :, :, i, j].transpose(
                        0, 3, 1, 2
                    )
            grad_out = dx
        elif spec.kind == MAXPOOL2D:
            switches, in_shape = cache.aux[pos]
            ph, pw = spec.pool
            nb, c, h, w_in = in_shape
            oh, ow = h // ph, w_in // pw
            dwin = np.zeros((nb, c, oh, ow, ph * pw))
            np.put_along_axis(dwin, switches[..., None], grad_out[..., None], axis=-1)
            dx = np.zeros(in_shape)
            dx[:, :, : oh * ph, : ow * pw] = (
                dwin.reshape(nb, c, oh, ow, ph, pw)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(nb, c, oh * ph, ow * pw)
            )
            grad_out = dx
        elif spec.kind == FLATTEN:
            grad_out = grad_out.reshape(cache.aux[pos])
    grads.reverse()
    return Gradients(layers=tuple(grads))


def sgd_step(model: ModelParams, grads: Gradients, learning_rate: float) -> ModelParams:
    """One gradient-descent update: every parameter moves by -learning_rate * gradient."""
    if model.num_layers != grads.num_layers:
        raise ShapeError("model and gradients have different layer counts")
    pairs = []
    for (w, b), (gw, gb) in zip(model.layers, grads.layers):
        if w.shape != gw.shape or b.shape != gb.shape:
            raise ShapeError(
                f"gradient shapes {gw.shape}/{gb.shape} do not match parameters {w.shape}/{b.shape}"
            )
        pairs.append((w - learning_rate * gw, b - learning_rate * gb))
    return ModelParams(layers=tuple(pairs))


def train_epochs(model: ModelParams, specs, inputs: np.ndarray, targets: np.ndarray, hyper: Hyperparams):
    """Minibatch SGD for hyper.epochs passes over the data.

    Shuffling and batching are drawn from hyper.seed, so equal inputs give
    bit-identical outputs. Returns (trained model, mean batch loss of the
    final epoch, measured before each update).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if targets.shape[0] != n:
        raise ShapeError(f"{n} inputs but {targets.shape[0]} targets")
    rng = np.random.default_rng(hyper.seed)
    last_epoch_losses: list[float] = []
    for epoch in range(hyper.epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, hyper.batch_size):
            idx = perm[start : start + hyper.batch_size]
            out, cache = forward(model, specs, inputs[idx])
            losses.append(compute_loss(out, targets[idx], hyper.loss))
            grads = backward(model, specs, cache, targets[idx], hyper.loss)
            model = sgd_step(model, grads, hyper.learning_rate)
        last_epoch_losses = losses
    return model, float(np.mean(last_epoch_losses))


def predict(model: ModelParams, specs, x: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Class index per sample: argmax of the final layer, ties to the lowest index."""
    x = np.asarray(x, dtype=np.float64)
    parts = []
    for start in range(0, x.shape[0], chunk):
        out, _ = forward(model, specs, x[start : start + chunk])
        parts.append(out.argmax(axis=1))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def to_onehot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out
