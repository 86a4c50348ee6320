"""Activation-region geometry for width-2 networks on two inputs in the plane.

For inputs ``x1, x2`` a first-layer row ``w`` falls in exactly one region:

* ``D``  -- dead on both inputs (``w.x1 <= 0`` and ``w.x2 <= 0``)
* ``S``  -- active on both inputs
* ``S1`` -- active on ``x1`` only, ``S2`` -- active on ``x2`` only

Active means strictly positive pre-activation. "Interior" below means the
open region, i.e. every defining inequality holds strictly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from .gradients import LossKind, grad
from .linalg import angle
from .network import Dataset, Params

if TYPE_CHECKING:
    from .flow import FlowResult

SQRT3_2 = math.sqrt(3.0) / 2.0


class RegionLabel(str, Enum):
    D = "D"
    S = "S"
    S1 = "S1"
    S2 = "S2"


def _vec(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.size != 2:
        raise ValueError("region geometry is defined for 2-D vectors only")
    return v


def _check_inputs(x1, x2) -> tuple[np.ndarray, np.ndarray]:
    x1, x2 = _vec(x1), _vec(x2)
    if not (np.any(x1) and np.any(x2)):
        raise ValueError("inputs must be nonzero")
    return x1, x2


def classify(w, x1, x2) -> RegionLabel:
    x1, x2 = _check_inputs(x1, x2)
    w = _vec(w)
    on1, on2 = float(w @ x1) > 0.0, float(w @ x2) > 0.0
    if on1 and on2:
        return RegionLabel.S
    if on1:
        return RegionLabel.S1
    if on2:
        return RegionLabel.S2
    return RegionLabel.D


def in_interior(w, label: RegionLabel, x1, x2) -> bool:
    """True if ``w`` lies in the open region (off every boundary line)."""
    x1, x2 = _check_inputs(x1, x2)
    w = _vec(w)
    a, b = float(w @ x1), float(w @ x2)
    return {
        RegionLabel.S: a > 0 and b > 0,
        RegionLabel.S1: a > 0 and b < 0,
        RegionLabel.S2: a < 0 and b > 0,
        RegionLabel.D: a < 0 and b < 0,
    }[RegionLabel(label)]


def region_labels(w: np.ndarray, x1, x2) -> list[RegionLabel]:
    return [classify(row, x1, x2) for row in np.asarray(w)]


def input_angle(x1, x2) -> float:
    x1, x2 = _check_inputs(x1, x2)
    return angle(x1, x2)


def check_obtuse(x1, x2) -> float:
    """Angle between the inputs; raises unless it lies strictly in (pi/2, pi)."""
    a = input_angle(x1, x2)
    if not math.pi / 2 < a < math.pi:
        raise ValueError(f"input angle {a:.6f} is not in (pi/2, pi)")
    return a


def check_unit_inputs(x1, x2, tol: float = 1e-9) -> float:
    x1, x2 = _check_inputs(x1, x2)
    if abs(np.linalg.norm(x1) - 1) > tol or abs(np.linalg.norm(x2) - 1) > tol:
        raise ValueError("inputs must be unit vectors")
    return check_obtuse(x1, x2)


def check_targets(y1, y2, tol: float = 1e-9) -> None:
    """Targets must be unit vectors and linearly independent."""
    y1, y2 = _vec(y1), _vec(y2)
    if abs(np.linalg.norm(y1) - 1) > tol or abs(np.linalg.norm(y2) - 1) > tol:
        raise ValueError("targets must be unit vectors")
    if abs(y1[0] * y2[1] - y1[1] * y2[0]) <= tol:
        raise ValueError("targets must be linearly independent")


def check_dataset(d: Dataset) -> float:
    """Validate a two-example planar dataset for the negative results; returns the input angle."""
    if d.is_classification or d.n != 2 or d.d_in != 2 or d.y.shape[0] != 2:
        raise ValueError("expected two 2-D inputs with 2-D regression targets")
    check_targets(d.y[:, 0], d.y[:, 1])
    return check_unit_inputs(d.x[:, 0], d.x[:, 1])


def region_angle(x1, x2, label: RegionLabel) -> float:
    """Angular width of a region; S1 and S2 each span the input angle."""
    a = check_obtuse(x1, x2)
    if RegionLabel(label) in (RegionLabel.S1, RegionLabel.S2):
        return a
    return math.pi - a


def thm2_init_bound(x1, x2) -> float:
    """Largest first-layer row norm allowed for the rank-2 guarantee."""
    a = check_obtuse(x1, x2)
    return min(0.5, SQRT3_2 * math.cos(a / 2.0))


def thm3_radius_bound(x1, x2) -> float:
    a = check_obtuse(x1, x2)
    return SQRT3_2 * min(math.sin((math.pi - a) / 4.0), math.sin(a - math.pi / 2.0))


@dataclass(frozen=True)
class Thm3Intervals:
    angle_lo: float
    angle_hi: float
    norm_lo: float
    norm_hi: float
    prob_lower_bound: float
    radius_bound: float

    def angle_ok(self, a: float, slack: float = 0.0) -> bool:
        return self.angle_lo - slack <= a <= self.angle_hi + slack

    def norm_ok(self, r: float, slack: float = 0.0) -> bool:
        return self.norm_lo - slack < r < self.norm_hi + slack

    def to_json(self) -> dict:
        return asdict(self)


def thm3_intervals(x1, x2, init_norms=None) -> Thm3Intervals:
    """Angle and norm intervals for the limit rows, plus the probability floor.

    ``init_norms`` (first-layer row norms at initialization), when given, must
    respect the initialization radius bound.
    """
    a = check_obtuse(x1, x2)
    radius = thm3_radius_bound(x1, x2)
    if init_norms is not None and max(init_norms) > radius:
        raise ValueError(f"initial row norm {max(init_norms):.3g} exceeds the bound {radius:.3g}")
    return Thm3Intervals(
        angle_lo=math.pi - a,
        angle_hi=3.0 * math.pi / 4.0 + (a - math.pi / 2.0) / 2.0,
        norm_lo=SQRT3_2,
        norm_hi=math.sqrt(0.25 + 4.0 / (3.0 * math.sin(a) ** 2)),
        prob_lower_bound=2.0 * (a / (2.0 * math.pi)) ** 2,
        radius_bound=radius,
    )


def check_event_E(result: "FlowResult", intervals: Thm3Intervals, slack: float = 0.0) -> tuple[bool, dict]:
    """Did the run converge with limit rows inside the angle and norm intervals?"""
    p = result.params
    if p.depth != 2 or p.layers[0].shape != (2, 2):
        raise ValueError("event E is defined for depth-2 width-2 networks on 2-D inputs")
    w1, w2 = p.layers[0]
    n1, n2 = float(np.linalg.norm(w1)), float(np.linalg.norm(w2))
    ang = angle(w1, w2) if n1 > 0 and n2 > 0 else float("nan")
    angle_in = bool(not math.isnan(ang) and intervals.angle_ok(ang, slack))
    norms_in = bool(intervals.norm_ok(n1, slack) and intervals.norm_ok(n2, slack))
    ok = bool(result.converged and angle_in and norms_in)
    return ok, {
        "converged": bool(result.converged),
        "angle": ang,
        "norms": [n1, n2],
        "angle_in_interval": angle_in,
        "norms_in_interval": norms_in,
        "event_E": ok,
    }


def _sin_between(g: np.ndarray, x: np.ndarray) -> float:
    ng, nx = np.linalg.norm(g), np.linalg.norm(x)
    if ng == 0.0:
        return 0.0
    cross = g[0] * x[1] - g[1] * x[0]
    return abs(float(cross)) / (ng * nx)


def region_dynamics_report(p: Params, d: Dataset, kind: LossKind = LossKind.SQUARE) -> list[dict]:
    """Per first-layer row: its region and how its gradient row relates to the inputs.

    For a row in the open region S_i the gradient row must be parallel to
    ``x_i``; for a row in D it must be exactly zero.
    """
    if p.depth != 2 or d.n != 2 or d.d_in != 2:
        raise ValueError("region dynamics are defined for depth-2 nets on two 2-D inputs")
    x1, x2 = d.x[:, 0], d.x[:, 1]
    g = grad(p, d, kind).layers[0]
    rows = []
    for i, w in enumerate(p.layers[0]):
        label = classify(w, x1, x2)
        entry = {"row": i, "region": label.value, "interior": in_interior(w, label, x1, x2),
                 "grad_norm": float(np.linalg.norm(g[i]))}
        if label is RegionLabel.S1:
            entry["sin_to_input"] = _sin_between(g[i], x1)
        elif label is RegionLabel.S2:
            entry["sin_to_input"] = _sin_between(g[i], x2)
        elif label is RegionLabel.D:
            entry["grad_is_zero"] = bool(np.all(g[i] == 0.0))
        rows.append(entry)
    return rows


def span_distance(v: np.ndarray, y: np.ndarray) -> float:
    """Distance from ``v`` to the line spanned by ``y``."""
    y = y / np.linalg.norm(y)
    return float(np.linalg.norm(v - (v @ y) * y))
