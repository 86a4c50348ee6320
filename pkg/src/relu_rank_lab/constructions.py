"""Explicit interpolating networks: a rank-1 two-neuron net and norm-controlled deepenings."""

from __future__ import annotations

import math

import numpy as np

from .linalg import angle, frobenius_norm, numerical_rank, pinv
from .network import Dataset, Params, forward_batch, relu

OUTPUT_TOL = 1e-9


def solve_output_layer(w: np.ndarray, d: Dataset) -> np.ndarray:
    """Output layer ``V`` with ``V relu(W X) = Y``.

    Needs the activation matrix ``relu(W X)`` to have full column rank; then
    ``V = Y relu(W X)^+`` interpolates exactly.
    """
    if d.is_classification:
        raise ValueError("output-layer solve needs regression targets")
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[1] != d.d_in:
        raise ValueError(f"first layer must have {d.d_in} columns")
    act = relu(w @ d.x)
    if numerical_rank(act) < d.n:
        raise ValueError("activation matrix column-rank deficient")
    v = d.y @ pinv(act)
    resid = np.max(np.abs(v @ act - d.y))
    if resid > OUTPUT_TOL * max(1.0, float(np.max(np.abs(d.y)))):
        raise ValueError(f"output-layer solve left residual {resid:.3g}")
    return v


def rank1_interpolator(d: Dataset) -> Params:
    """Width-2 depth-2 net fitting two planar examples with a rank-1 first layer.

    Rows are ``w = x1/|x1| - x2/|x2|`` and ``-w``; each row is active on
    exactly one example, so the activation matrix is diagonal and invertible.
    """
    if d.is_classification or d.n != 2 or d.d_in != 2:
        raise ValueError("rank-1 construction needs two 2-D inputs with regression targets")
    x1, x2 = d.x[:, 0], d.x[:, 1]
    if not (np.any(x1) and np.any(x2)) or angle(x1, x2) == 0.0:
        raise ValueError("inputs must be nonzero and non-parallel")
    w1 = x1 / np.linalg.norm(x1) - x2 / np.linalg.norm(x2)
    w = np.stack([w1, -w1])
    return Params([w, solve_output_layer(w, d)])


def _check_deepen(src: Params, k_prime: int, B: float) -> None:
    if src.d_out != 1:
        raise ValueError("deepening needs a scalar-output source network")
    if k_prime <= src.depth:
        raise ValueError(f"k_prime={k_prime} must exceed the source depth {src.depth}")
    if not B > 0:
        raise ValueError("B must be positive")


def deepen_square(src: Params, k_prime: int, B: float, data: Dataset | None = None) -> Params:
    """Depth-``k_prime`` net with the same outputs wherever the source output is >= 0.

    Source layers are scaled by ``a = (1/B)^((k'-k)/k')`` and followed by
    ``k'-k`` scalar layers of weight ``b = (1/B)^(-k/k')``; ``a^k b^(k'-k) = 1``.
    The ReLU on the old output unit zeroes negative outputs, so ``data``,
    when given, must have non-negative source outputs.
    """
    _check_deepen(src, k_prime, B)
    k = src.depth
    norms = [frobenius_norm(w) for w in src.layers]
    if max(norms) > B * (1.0 + 1e-12):
        raise ValueError(f"layer Frobenius norm {max(norms):.6g} exceeds B={B}")
    if data is not None and np.min(forward_batch(src, data.x)) < 0.0:
        raise ValueError("source network has a negative output on the data")
    a = (1.0 / B) ** ((k_prime - k) / k_prime)
    b = (1.0 / B) ** (-k / k_prime)
    return Params([a * w for w in src.layers] + [np.array([[b]])] * (k_prime - k))


def deepen_classification(src: Params, k_prime: int, B: float) -> Params:
    """Depth-``k_prime`` net computing exactly the source function, any sign.

    The old output row ``u`` becomes the pair ``(u, -u)`` so both signs pass
    the ReLU tail, recombined by a final ``(1, -1)`` layer.
    """
    _check_deepen(src, k_prime, B)
    k = src.depth
    a = (math.sqrt(2.0) / B) ** ((k_prime - k) / k_prime)
    b = (math.sqrt(2.0) / B) ** (-k / k_prime)
    u = src.layers[-1]
    layers = [a * w for w in src.layers[:-1]]
    layers.append(a * np.vstack([u, -u]))
    layers += [b * np.eye(2)] * (k_prime - k - 1)
    layers.append(b * np.array([[1.0, -1.0]]))
    return Params(layers)


def balance_layers(p: Params) -> Params:
    """Rescale layers to a common Frobenius norm (the geometric mean) without changing outputs."""
    norms = np.array([frobenius_norm(w) for w in p.layers])
    if np.any(norms == 0.0):
        raise ValueError("cannot balance a network with a zero layer")
    target = float(np.exp(np.mean(np.log(norms))))
    return Params([w * (target / n) for w, n in zip(p.layers, norms)])
