"""Numerical gradient oracle: central finite differences per parameter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Gradients, ModelParams, compute_loss, forward


def finite_diff_gradient(model: ModelParams, specs, inputs, targets, loss: str, h: float = 1e-5) -> Gradients:
    """Estimate d(loss)/d(parameter) as (L(p+h) - L(p-h)) / 2h for every parameter.

    The loss is the same batch-mean quantity backward() differentiates, so the
    two routes are directly comparable.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    work = [(w.copy(), b.copy()) for w, b in model.layers]

    def loss_at() -> float:
        m = ModelParams(layers=tuple((w, b) for w, b in work))
        out, _ = forward(m, specs, inputs)
        return compute_loss(out, targets, loss)

    grads = []
    for w, b in work:
        gw = np.zeros_like(w)
        gb = np.zeros_like(b)
        for arr, grad in ((w, gw), (b, gb)):
            flat = arr.ravel()
            gflat = grad.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lo_hi = loss_at()
                flat[i] = orig - h
                lo_lo = loss_at()
                flat[i] = orig
                gflat[i] = (lo_hi - lo_lo) / (2.0 * h)
        grads.append((gw, gb))
    return Gradients(layers=tuple(grads))


@dataclass(frozen=True)
class GroupCheck:
    """Worst backward-vs-finite-difference disagreement within one parameter tensor."""

    layer_index: int  # 1-based trainable layer index
    kind: str  # "bias" | "weights"
    max_rel_err: float
    worst_coord: tuple[int, ...]


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
    amplifying finite-difference noise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def compare_gradients(analytic: Gradients, numeric: Gradients, floor: float = 1e-6) -> list[GroupCheck]:
    """Per (layer, weights/bias) group, the maximum relative error and its coordinates."""
    checks = []
    for li, ((aw, ab), (nw, nb)) in enumerate(zip(analytic.layers, numeric.layers), start=1):
        for kind, a, n in (("weights", aw, nw), ("bias", ab, nb)):
            err = relative_errors(a, n, floor)
            worst = int(err.argmax())
            checks.append(
                GroupCheck(
                    layer_index=li,
                    kind=kind,
                    max_rel_err=float(err.flat[worst]),
                    worst_coord=tuple(int(c) for c in np.unravel_index(worst, a.shape)),
                )
            )
    return checks
