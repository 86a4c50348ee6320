"""Per-layer rank and norm reports and the deep-network norm-ratio bounds."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constructions import balance_layers
from .gradients import margins
from .linalg import frobenius_norm, spectral_norm
from .network import Dataset, Params, forward_batch

BALANCE_TOL = 1e-6
FEASIBILITY_TOL = 1e-6

CSV_FIELDS = ["scope", "layer", "frobenius", "spectral", "stable_rank", "sigma_over_f",
              "mean_sigma_over_f", "harmonic_f_over_sigma", "b_star"]


@dataclass(frozen=True)
class LayerStats:
    frobenius: float
    spectral: float
    stable_rank: float
    sigma_over_f: float


@dataclass(frozen=True)
class RankReport:
    layers: list[LayerStats]
    mean_sigma_over_f: float
    harmonic_f_over_sigma: float
    b_star: Optional[float] = None

    def to_json(self) -> dict:
        return {
            "layers": [vars(s) for s in self.layers],
            "mean_sigma_over_f": self.mean_sigma_over_f,
            "harmonic_f_over_sigma": self.harmonic_f_over_sigma,
            "b_star": self.b_star,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RankReport":
        return cls([LayerStats(**s) for s in doc["layers"]], doc["mean_sigma_over_f"],
                   doc["harmonic_f_over_sigma"], doc.get("b_star"))

    def csv_rows(self) -> list[dict]:
        rows = [{"scope": "layer", "layer": i + 1, **vars(s)} for i, s in enumerate(self.layers)]
        rows.append({"scope": "aggregate", "mean_sigma_over_f": self.mean_sigma_over_f,
                     "harmonic_f_over_sigma": self.harmonic_f_over_sigma, "b_star": self.b_star})
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.csv_rows())
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{'layer':>5} {'frob':>11} {'spectral':>11} {'stable_rank':>11} {'sigma/F':>9}"]
        for i, s in enumerate(self.layers, 1):
            lines.append(f"{i:>5} {s.frobenius:>11.5g} {s.spectral:>11.5g} {s.stable_rank:>11.5g} {s.sigma_over_f:>9.5f}")
        lines.append(f"mean sigma/F = {self.mean_sigma_over_f:.6f}   harmonic F/sigma = {self.harmonic_f_over_sigma:.6f}"
                     + (f"   B* = {self.b_star:.6g}" if self.b_star is not None else ""))
        return "\n".join(lines)


def rank_report(p: Params) -> RankReport:
    stats = []
    for w in p.layers:
        f = frobenius_norm(w)
        if f == 0.0:
            raise ValueError("rank report is undefined for a zero layer")
        s = spectral_norm(w)
        r = s / f
        stats.append(LayerStats(f, s, 1.0 / (r * r), r))
    ratios = [s.sigma_over_f for s in stats]
    mean = sum(ratios) / len(ratios)
    fro = [s.frobenius for s in stats]
    b_star = sum(fro) / len(fro) if max(fro) - min(fro) <= BALANCE_TOL else None
    return RankReport(stats, mean, 1.0 / mean, b_star)


def _check_bound_args(B: float, k: int, k_prime: int) -> None:
    if not B > 0:
        raise ValueError("B must be positive")
    if not 2 <= k < k_prime:
        raise ValueError("need 2 <= k < k_prime")


def thm4_bound(B: float, k: int, k_prime: int) -> tuple[float, float]:
    """Square-loss bounds: mean sigma/F lower bound and harmonic F/sigma upper bound."""
    _check_bound_args(B, k, k_prime)
    e = k / k_prime
    return (1.0 / B) ** e, B ** e


def thm5_bound(B: float, k: int, k_prime: int) -> tuple[float, float]:
    """Margin-problem counterpart of ``thm4_bound``; meaningful for B > sqrt(2)."""
    _check_bound_args(B, k, k_prime)
    e = k / k_prime
    s = math.sqrt(k_prime / (k_prime + 1.0))
    r2 = math.sqrt(2.0)
    return (r2 / B) ** e * s / r2, r2 * (B / r2) ** e / s


def construction_sq_norm(mode: str, B: float, k: int, k_prime: int) -> float:
    """Squared-norm upper bound met by the deepening constructions."""
    e = k / k_prime
    if mode == "square":
        return k_prime * B ** (2.0 * e)
    if mode == "margin":
        return 2.0 * (B * B / 2.0) ** e * (k_prime + 1.0)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class WitnessReport:
    mode: str
    feasibility_residual: float
    norm: float
    balancedness_residual: float
    report: RankReport
    bound: Optional[tuple[float, float]] = None
    construction_sq_norm: Optional[float] = None
    certified: bool = False
    mean_ratio_ok: Optional[bool] = None
    harmonic_ok: Optional[bool] = None
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        """False only when the certificate holds and the bound still fails."""
        return not self.certified or bool(self.mean_ratio_ok and self.harmonic_ok)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "feasibility_residual": self.feasibility_residual,
            "norm": self.norm,
            "balancedness_residual": self.balancedness_residual,
            "rank_report": self.report.to_json(),
            "bound": list(self.bound) if self.bound else None,
            "construction_sq_norm": self.construction_sq_norm,
            "certified": self.certified,
            "mean_ratio_ok": self.mean_ratio_ok,
            "harmonic_ok": self.harmonic_ok,
            "ok": self.ok,
            "notes": self.notes,
        }


def check_min_norm_witness(candidate: Params, d: Dataset, mode: str, B: float | None = None,
                           k: int | None = None, slack: float = 1e-9) -> WitnessReport:
    """Measure a feasible network against the norm-ratio bounds for the setting ``(B, k)``.

    The bound is only *asserted* (``certified``) when the network is at least
    as small as the deepening construction and some input has norm <= 1 with
    target >= 1 (square) or with any label (margin). Under those conditions
    balancing the network and applying AM-GM to the layer norms yields the
    bound for this network, so a violation is a real failure. Otherwise the
    comparison is reported but not judged.
    """
    if candidate.d_out != 1:
        raise ValueError("min-norm witnesses are scalar-output networks")
    out = forward_batch(candidate, d.x)[0]
    if mode == "square":
        if d.is_classification:
            raise ValueError("square mode needs regression targets")
        resid = float(np.max(np.abs(out - d.y[0])))
        if resid > FEASIBILITY_TOL:
            raise ValueError(f"candidate does not interpolate (residual {resid:.3g})")
        anchor = np.any((np.linalg.norm(d.x, axis=0) <= 1.0) & (d.y[0] >= 1.0))
    elif mode == "margin":
        m = float(np.min(margins(candidate, d)))
        resid = max(0.0, 1.0 - m)
        if m < 1.0 - FEASIBILITY_TOL:
            raise ValueError(f"candidate margin {m:.6g} is below 1")
        anchor = np.any(np.linalg.norm(d.x, axis=0) <= 1.0)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    fro = [frobenius_norm(w) for w in candidate.layers]
    rep = WitnessReport(mode, resid, candidate.norm(), max(fro) - min(fro), rank_report(candidate))
    if B is None or k is None:
        rep.notes.append("no (B, k) given: bounds not evaluated")
        return rep
    k_prime = candidate.depth
    if k_prime <= k:
        rep.notes.append("candidate is not deeper than k: bounds not evaluated")
        return rep
    rep.bound = (thm4_bound if mode == "square" else thm5_bound)(B, k, k_prime)
    rep.construction_sq_norm = construction_sq_norm(mode, B, k, k_prime)
    # ratios are invariant under balancing, which never increases the norm
    balanced = rank_report(balance_layers(candidate))
    rep.mean_ratio_ok = balanced.mean_sigma_over_f >= rep.bound[0] - slack
    rep.harmonic_ok = balanced.harmonic_f_over_sigma <= rep.bound[1] + slack
    rep.certified = bool(anchor) and candidate.sq_norm() <= rep.construction_sq_norm * (1.0 + slack)
    if not rep.certified:
        rep.notes.append("norm certificate absent: comparison is measurement only")
    return rep
