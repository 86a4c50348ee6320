"""Gradient-flow simulation ``d theta / dt = -grad L(theta)``.

Explicit Euler with step ``h`` is exactly full-batch gradient descent with
learning rate ``h``; RK4 is there for conservation-law checks, where Euler's
first-order drift would hide the invariant. RK4 holds the activation pattern
fixed within each step (see ``_kernels``).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import _kernels
from .gradients import LossKind, _check_kind, _check_shapes, masked_loss_and_grad
from .linalg import frobenius_norm, stable_rank
from .network import Dataset, Params


class Integrator(str, Enum):
    EULER = "euler"
    RK4 = "rk4"


class StopReason(str, Enum):
    CONVERGED = "converged"
    STATIONARY = "stationary"
    MAX_STEPS = "max_steps"
    DIVERGED = "diverged"


DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class FlowConfig:
    step: float = 1e-3
    max_steps: int = 300_000
    loss_tol: float = 1e-4
    grad_tol: float = 1e-10
    integrator: Integrator = Integrator.EULER
    record_every: int = 1000
    seed: int = 0
    # True: ignore loss_tol/grad_tol while integrating, judge convergence at the end
    full_budget: bool = False
    snapshots: bool = False
    l2: float = 0.0
    backend: str = "numba"

    def __post_init__(self):
        object.__setattr__(self, "integrator", Integrator(self.integrator))
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if not (self.loss_tol > 0 and self.grad_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if self.backend not in ("numba", "numpy"):
            raise ValueError(f"unknown backend {self.backend!r}")

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["integrator"] = self.integrator.value
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "FlowConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown flow config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class TrajectorySample:
    time: float
    step: int
    loss: float
    grad_norm: float
    frobenius: list[float]
    stable_ranks: list[Optional[float]]
    regions: Optional[list[str]] = None
    params: Optional[Params] = None

    def to_json(self) -> dict:
        doc = {
            "time": self.time,
            "step": self.step,
            "loss": self.loss,
            "grad_norm": self.grad_norm,
            "frobenius": self.frobenius,
            "stable_ranks": self.stable_ranks,
        }
        if self.regions is not None:
            doc["regions"] = self.regions
        if self.params is not None:
            doc["params"] = self.params.to_json()
        return doc


@dataclass(frozen=True)
class FlowResult:
    params: Params
    converged: bool
    final_loss: float
    final_grad_norm: float
    steps_taken: int
    reason: StopReason
    trajectory: list[TrajectorySample] = field(default_factory=list)
    balance_drift: list[float] = field(default_factory=list)
    neuron_balance_drift: list[float] = field(default_factory=list)

    @property
    def diverged(self) -> bool:
        return self.reason is StopReason.DIVERGED

    def to_json(self) -> dict:
        return {
            "params": self.params.to_json(),
            "converged": self.converged,
            "final_loss": self.final_loss,
            "final_grad_norm": self.final_grad_norm,
            "steps_taken": self.steps_taken,
            "reason": self.reason.value,
            "balance_drift": self.balance_drift,
            "neuron_balance_drift": self.neuron_balance_drift,
            "trajectory": [s.to_json() for s in self.trajectory],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def balance_invariant(p: Params) -> list[float]:
    """``||W_l||_F^2 - ||W_{l+1}||_F^2`` for each adjacent layer pair."""
    sq = [float(np.sum(w * w)) for w in p.layers]
    return [sq[l] - sq[l + 1] for l in range(p.depth - 1)]


def neuron_balance_invariant(p: Params) -> list[np.ndarray]:
    """Per hidden neuron: squared norm of incoming row minus outgoing column."""
    out = []
    for l in range(p.depth - 1):
        incoming = np.sum(p.layers[l] ** 2, axis=1)
        outgoing = np.sum(p.layers[l + 1] ** 2, axis=0)
        out.append(incoming - outgoing)
    return out


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def random_sphere(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    """Uniform sample on the radius-``radius`` sphere in ``R^dim``."""
    while True:
        g = rng.standard_normal(dim)
        ng = np.linalg.norm(g)
        if ng > 1e-300:
            return radius * g / ng


def init_spherical(widths, radius: float, seed=0) -> Params:
    """Small random initialization.

    Depth 2: every row of W1 and every column of W2 uniform on the sphere of
    the given radius. Deeper nets: each layer i.i.d. Gaussian rescaled to
    Frobenius norm ``radius``.
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    widths = [int(w) for w in widths]
    if len(widths) < 3:
        raise ValueError("need at least input, hidden and output widths")
    rng = _rng(seed)
    if len(widths) == 3:
        d0, d1, d2 = widths
        w = np.stack([random_sphere(rng, d0, radius) for _ in range(d1)])
        v = np.stack([random_sphere(rng, d2, radius) for _ in range(d1)], axis=1)
        return Params([w, v])
    layers = []
    for l in range(len(widths) - 1):
        g = rng.standard_normal((widths[l + 1], widths[l]))
        layers.append(radius * g / np.linalg.norm(g))
    return Params(layers)


def _kind_code(kind: LossKind) -> int:
    return {LossKind.SQUARE: _kernels.KIND_SQUARE,
            LossKind.EXPONENTIAL: _kernels.KIND_EXP,
            LossKind.LOGISTIC: _kernels.KIND_LOGISTIC}[kind]


class _NumbaStepper:
    def __init__(self, p: Params, d: Dataset, kind: LossKind, cfg: FlowConfig):
        self.dims = np.array(p.widths, dtype=np.int64)
        sizes = [w.size for w in p.layers]
        self.offs = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.x = np.ascontiguousarray(d.x)
        self.t = np.ascontiguousarray(d.targets())
        self.lab = d.labels if d.is_classification else np.zeros(d.n)
        self.kind = _kind_code(kind)
        self.cfg = cfg
        self.method = _kernels.EULER if cfg.integrator is Integrator.EULER else _kernels.RK4

    def advance(self, theta: np.ndarray, n_steps: int):
        c = self.cfg
        return _kernels.integrate(
            theta, self.dims, self.offs, self.x, self.t, self.lab, self.kind, c.l2, c.step,
            n_steps, self.method, c.loss_tol, c.grad_tol, c.full_budget, DIVERGENCE_LIMIT,
        )


class _NumpyStepper:
    """Reference stepper built directly on ``gradients.loss_and_grad``."""

    def __init__(self, p: Params, d: Dataset, kind: LossKind, cfg: FlowConfig):
        self.template, self.d, self.kind, self.cfg = p, d, kind, cfg

    def _lg(self, theta, masks=None):
        value, g, masks = masked_loss_and_grad(self.template.with_flat(theta), self.d, self.kind, masks)
        g = g.flat()
        if self.cfg.l2:
            g = g + 2.0 * self.cfg.l2 * theta
        return value, g, masks

    def advance(self, theta: np.ndarray, n_steps: int):
        c, h = self.cfg, self.cfg.step
        steps = 0
        while True:
            cur, g1, masks = self._lg(theta)
            gn = float(np.linalg.norm(g1))
            if not (math.isfinite(cur) and math.isfinite(gn)) or cur > DIVERGENCE_LIMIT \
                    or np.linalg.norm(theta) > DIVERGENCE_LIMIT:
                return steps, _kernels.STATUS_DIVERGED, cur, gn
            if not c.full_budget and cur <= c.loss_tol:
                return steps, _kernels.STATUS_CONVERGED, cur, gn
            if gn == 0.0 or (not c.full_budget and gn <= c.grad_tol):
                return steps, _kernels.STATUS_STATIONARY, cur, gn
            if steps >= n_steps:
                return steps, _kernels.STATUS_BUDGET, cur, gn
            if c.integrator is Integrator.EULER:
                theta -= h * g1
            else:
                _, g2, _ = self._lg(theta - 0.5 * h * g1, masks)
                _, g3, _ = self._lg(theta - 0.5 * h * g2, masks)
                _, g4, _ = self._lg(theta - h * g3, masks)
                theta -= h / 6.0 * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
            steps += 1


def _summary(p: Params, d: Dataset, step: int, h: float, value: float, gn: float, snapshot: bool):
    from .geometry import region_labels  # avoid an import cycle

    fro = [frobenius_norm(w) for w in p.layers]
    ranks = [stable_rank(w) if f > 0 else None for w, f in zip(p.layers, fro)]
    regions = None
    if p.depth == 2 and p.widths[:2] == (2, 2) and d.n == 2:
        regions = [r.value for r in region_labels(p.layers[0], d.x[:, 0], d.x[:, 1])]
    return TrajectorySample(step * h, step, value, gn, fro, ranks, regions, p if snapshot else None)


def run_flow(p0: Params, d: Dataset, kind: LossKind = LossKind.SQUARE, cfg: FlowConfig = FlowConfig()) -> FlowResult:
    """Integrate gradient flow from ``p0`` and record summaries every ``record_every`` steps."""
    kind = _check_kind(d, kind)
    _check_shapes(p0, d)
    stepper = (_NumbaStepper if cfg.backend == "numba" else _NumpyStepper)(p0, d, kind, cfg)
    theta = p0.flat().copy()
    bal0 = np.array(balance_invariant(p0))
    nbal0 = neuron_balance_invariant(p0)
    bal_drift = np.zeros_like(bal0)
    nbal_drift = np.zeros(len(nbal0))

    def track(p: Params) -> None:
        nonlocal bal_drift, nbal_drift
        bal_drift = np.maximum(bal_drift, np.abs(np.array(balance_invariant(p)) - bal0))
        now = neuron_balance_invariant(p)
        nbal_drift = np.maximum(nbal_drift, [float(np.max(np.abs(a - b))) for a, b in zip(now, nbal0)])

    # zero-step call: evaluates loss and stop conditions at p0
    _, status, value, gn = stepper.advance(theta, 0)
    trajectory = [_summary(p0, d, 0, cfg.step, value, gn, cfg.snapshots)]
    steps = 0
    last_good = theta.copy()
    while status == _kernels.STATUS_BUDGET and steps < cfg.max_steps:
        last_good[:] = theta
        done, status, value, gn = stepper.advance(theta, min(cfg.record_every, cfg.max_steps - steps))
        steps += done
        if status == _kernels.STATUS_DIVERGED:
            break
        p = p0.with_flat(theta)
        track(p)
        if done > 0:
            trajectory.append(_summary(p, d, steps, cfg.step, value, gn, cfg.snapshots))

    reason = {
        _kernels.STATUS_CONVERGED: StopReason.CONVERGED,
        _kernels.STATUS_STATIONARY: StopReason.STATIONARY,
        _kernels.STATUS_DIVERGED: StopReason.DIVERGED,
    }.get(status, StopReason.MAX_STEPS)
    if reason is StopReason.DIVERGED and not np.all(np.isfinite(theta)):
        theta = last_good
    converged = reason is not StopReason.DIVERGED and value <= cfg.loss_tol
    return FlowResult(
        params=p0.with_flat(theta),
        converged=bool(converged),
        final_loss=float(value),
        final_grad_norm=float(gn),
        steps_taken=int(steps),
        reason=reason,
        trajectory=trajectory,
        balance_drift=[float(v) for v in bal_drift],
        neuron_balance_drift=[float(v) for v in nbal_drift],
    )
