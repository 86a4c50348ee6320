"""Square, exponential and logistic losses with backprop gradients.

Gradients use the convention ReLU'(0) = 0, so at a kink the returned vector is
one particular element of the Clarke subdifferential rather than a true
gradient. ``grad_fd_oracle`` is an independent central-difference check.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .network import Dataset, Params, layer_outputs


class LossKind(str, Enum):
    SQUARE = "square"
    EXPONENTIAL = "exponential"
    LOGISTIC = "logistic"


def _check_kind(d: Dataset, kind: LossKind) -> LossKind:
    kind = LossKind(kind)
    if kind is LossKind.SQUARE and d.is_classification:
        raise ValueError("square loss needs regression targets")
    if kind is not LossKind.SQUARE and not d.is_classification:
        raise ValueError(f"{kind.value} loss needs +-1 labels")
    return kind


def _check_shapes(p: Params, d: Dataset) -> None:
    if d.d_in != p.d_in:
        raise ValueError(f"dataset d_in={d.d_in} does not match network d_in={p.d_in}")
    if d.targets().shape[0] != p.d_out:
        raise ValueError(f"targets have dimension {d.targets().shape[0]}, network d_out={p.d_out}")


def residuals(p: Params, d: Dataset) -> np.ndarray:
    """``N(x_i) - y_i`` as columns (square loss only)."""
    _check_kind(d, LossKind.SQUARE)
    _check_shapes(p, d)
    return layer_outputs(p, d.x)[0][-1] - d.y


def _loss_from_output(out: np.ndarray, d: Dataset, kind: LossKind) -> float:
    if kind is LossKind.SQUARE:
        r = out - d.y
        return 0.5 * float(np.sum(r * r))
    q = d.labels * out[0]
    if kind is LossKind.EXPONENTIAL:
        return float(np.sum(np.exp(-q)))
    # log(1 + e^{-q}) without overflow for large |q|
    return float(np.sum(np.logaddexp(0.0, -q)))


def _output_grad(out: np.ndarray, d: Dataset, kind: LossKind) -> np.ndarray:
    if kind is LossKind.SQUARE:
        return out - d.y
    q = d.labels * out[0]
    if kind is LossKind.EXPONENTIAL:
        dq = -np.exp(-q)
    else:
        dq = -np.exp(-np.logaddexp(0.0, q))
    return (d.labels * dq)[None, :]


def loss(p: Params, d: Dataset, kind: LossKind = LossKind.SQUARE) -> float:
    kind = _check_kind(d, kind)
    _check_shapes(p, d)
    return _loss_from_output(layer_outputs(p, d.x)[0][-1], d, kind)


def masked_loss_and_grad(p: Params, d: Dataset, kind: LossKind, masks=None):
    """Like ``loss_and_grad`` with the hidden units gated by fixed 0/1 ``masks``.

    ``masks=None`` uses the pattern at ``p`` itself. Returns the masks used as
    a third element so a caller can freeze them for later evaluations.
    """
    kind = _check_kind(d, kind)
    _check_shapes(p, d)
    if masks is None:
        masks = [(h > 0.0).astype(float) for h in layer_outputs(p, d.x)[0][:-1]]
    pre, post = layer_outputs(p, d.x, masks)
    out = pre[-1]
    delta = _output_grad(out, d, kind)
    grads = [None] * p.depth
    for l in range(p.depth - 1, -1, -1):
        grads[l] = delta @ post[l].T
        if l > 0:
            delta = (p.layers[l].T @ delta) * masks[l - 1]
    return _loss_from_output(out, d, kind), Params(grads), masks


def loss_and_grad(p: Params, d: Dataset, kind: LossKind = LossKind.SQUARE) -> tuple[float, Params]:
    value, g, _ = masked_loss_and_grad(p, d, kind)
    return value, g


def grad(p: Params, d: Dataset, kind: LossKind = LossKind.SQUARE) -> Params:
    """Backprop gradient of ``loss`` with the ReLU'(0) = 0 selection at kinks."""
    return loss_and_grad(p, d, kind)[1]


def grad_fd_oracle(p: Params, d: Dataset, kind: LossKind = LossKind.SQUARE, h: float = 1e-6) -> Params:
    """Central differences, one coordinate at a time; O(h^2) away from kinks."""
    if not h > 0.0:
        raise ValueError("finite-difference step must be positive")
    theta = p.flat()
    g = np.empty_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (loss(p.with_flat(tp), d, kind) - loss(p.with_flat(tm), d, kind)) / (2.0 * h)
    return p.with_flat(g)


def margins(p: Params, d: Dataset) -> np.ndarray:
    if not d.is_classification:
        raise ValueError("margin needs a classification dataset")
    _check_shapes(p, d)
    return d.labels * layer_outputs(p, d.x)[0][-1][0]


def margin(p: Params, d: Dataset) -> float:
    """``min_i y_i N(x_i)``; positive iff every example is correctly classified."""
    return float(np.min(margins(p, d)))
