"""Bias-free fully-connected ReLU networks and datasets.

A network of depth ``k`` is a sequence of weight matrices ``W1..Wk`` with
``Wl`` of shape ``(d_l, d_{l-1})``. Hidden layers apply an entry-wise ReLU,
the output layer is linear. A neuron counts as active only when its
pre-activation is strictly positive (so the ReLU derivative at 0 is 0).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .linalg import as_matrix


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def matrix_to_json(m: np.ndarray) -> dict:
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]), "data": [float(v) for v in m.ravel()]}


def matrix_from_json(doc: dict) -> np.ndarray:
    rows, cols, data = int(doc["rows"]), int(doc["cols"]), doc["data"]
    if rows < 1 or cols < 1 or len(data) != rows * cols:
        raise ValueError(f"matrix document has {len(data)} entries, expected {rows}x{cols}")
    return as_matrix(np.array(data, dtype=float).reshape(rows, cols))


@dataclass(frozen=True)
class Params:
    """Weight matrices of a network, first layer first."""

    layers: tuple[np.ndarray, ...]

    def __init__(self, layers: Sequence[np.ndarray]):
        mats = tuple(as_matrix(w).copy() for w in layers)
        if len(mats) < 2:
            raise ValueError("a network needs at least two layers")
        for l in range(1, len(mats)):
            if mats[l].shape[1] != mats[l - 1].shape[0]:
                raise ValueError(
                    f"layer {l + 1} has {mats[l].shape[1]} columns but layer {l} has {mats[l - 1].shape[0]} rows"
                )
        for m in mats:
            m.flags.writeable = False
        object.__setattr__(self, "layers", mats)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.layers[0].shape[1],) + tuple(w.shape[0] for w in self.layers)

    @property
    def d_in(self) -> int:
        return self.layers[0].shape[1]

    @property
    def d_out(self) -> int:
        return self.layers[-1].shape[0]

    def sq_norm(self) -> float:
        return float(sum(np.sum(w * w) for w in self.layers))

    def norm(self) -> float:
        """Euclidean norm of all weights viewed as one vector."""
        return math.sqrt(self.sq_norm())

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.layers])

    def with_flat(self, theta: np.ndarray) -> "Params":
        out, pos = [], 0
        for w in self.layers:
            out.append(np.asarray(theta[pos : pos + w.size]).reshape(w.shape))
            pos += w.size
        return Params(out)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Params):
            return NotImplemented
        return self.depth == other.depth and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.layers, other.layers)
        )

    __hash__ = None  # type: ignore[assignment]

    def to_json(self) -> dict:
        return {"layers": [matrix_to_json(w) for w in self.layers]}

    @classmethod
    def from_json(cls, doc: dict) -> "Params":
        return cls([matrix_from_json(m) for m in doc["layers"]])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "Params":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Dataset:
    """Inputs ``x`` as columns (``d_in x n``) plus regression targets or +-1 labels."""

    x: np.ndarray
    y: np.ndarray | None = None
    labels: np.ndarray | None = field(default=None)

    def __post_init__(self):
        x = as_matrix(self.x)
        object.__setattr__(self, "x", x)
        if (self.y is None) == (self.labels is None):
            raise ValueError("give exactly one of regression targets y or classification labels")
        if self.y is not None:
            y = as_matrix(self.y)
            if y.shape[1] != x.shape[1]:
                raise ValueError(f"x has {x.shape[1]} columns but y has {y.shape[1]}")
            object.__setattr__(self, "y", y)
        else:
            lab = np.asarray(self.labels, dtype=float).ravel()
            if lab.size != x.shape[1]:
                raise ValueError(f"x has {x.shape[1]} columns but there are {lab.size} labels")
            if not np.all(np.abs(lab) == 1.0):
                raise ValueError("classification labels must be +1 or -1")
            object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def d_in(self) -> int:
        return self.x.shape[0]

    @property
    def is_classification(self) -> bool:
        return self.labels is not None

    def targets(self) -> np.ndarray:
        """Targets as a ``d_out x n`` matrix (labels become a single row)."""
        return self.y if self.y is not None else self.labels[None, :]

    def to_json(self) -> dict:
        doc = {"x": matrix_to_json(self.x)}
        if self.y is not None:
            doc["y"] = matrix_to_json(self.y)
        else:
            doc["labels"] = [float(v) for v in self.labels]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Dataset":
        x = matrix_from_json(doc["x"])
        if "y" in doc:
            return cls(x, y=matrix_from_json(doc["y"]))
        if "labels" in doc:
            return cls(x, labels=np.array(doc["labels"], dtype=float))
        raise ValueError("dataset document needs 'y' or 'labels'")


def _check_input(p: Params, x: np.ndarray) -> None:
    if x.shape[0] != p.d_in:
        raise ValueError(f"input dimension {x.shape[0]} does not match network d_in={p.d_in}")


def _ordered_matmul(w: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``w @ a`` summed term by term in column order.

    Unlike BLAS, the result for a column does not depend on the batch it sits
    in, so batched and single-column evaluations agree bit for bit.
    """
    out = w[:, 0:1] * a[0:1, :]
    for c in range(1, w.shape[1]):
        out = out + w[:, c : c + 1] * a[c : c + 1, :]
    return out


def layer_outputs(p: Params, x: np.ndarray, masks=None) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Pre-activations ``h_l`` and post-activations ``a_l`` for a batch (columns).

    ``a[0]`` is the input; ``h[-1]`` is the network output. Passing ``masks``
    (one 0/1 array per hidden layer) gates the hidden units by those masks
    instead of by the sign of their pre-activations.
    """
    x = np.asarray(x, dtype=float)
    _check_input(p, x)
    pre, post = [], [x]
    a = x
    for l, w in enumerate(p.layers):
        h = _ordered_matmul(w, a)
        pre.append(h)
        if l < p.depth - 1:
            a = relu(h) if masks is None else h * masks[l]
            post.append(a)
    return pre, post


def forward_batch(p: Params, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("forward_batch expects a d_in x n matrix")
    return layer_outputs(p, x)[0][-1]


def forward(p: Params, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("forward expects a vector")
    return forward_batch(p, x[:, None])[:, 0]


def activation_pattern(p: Params, x) -> list[np.ndarray]:
    """Boolean mask per hidden layer: True where the pre-activation is > 0."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("activation_pattern expects a vector")
    pre, _ = layer_outputs(p, x[:, None])
    return [h[:, 0] > 0.0 for h in pre[:-1]]


def scale(p: Params, c: float) -> Params:
    """Multiply every layer by ``c > 0``; outputs scale by ``c ** depth``."""
    if not c > 0.0:
        raise ValueError("scale factor must be positive")
    return Params([c * w for w in p.layers])
