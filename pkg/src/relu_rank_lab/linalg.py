"""Small dense linear algebra: SVD, norms, ranks, angles and the pseudoinverse.

Matrices are plain 2-D ``float64`` numpy arrays. Matrices here are tiny (at most
a few dozen rows), so the SVD is computed directly: a closed form for 2x2
inputs and one-sided (Hestenes) Jacobi rotations otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

JACOBI_TOL = 1e-12
PINV_RCOND = 1e-12
DEFAULT_RANK_TOL = 1e-8
_MAX_SWEEPS = 100
# squared column norm (at unit scale) below which a column counts as zero
_NEGLIGIBLE = 1e-280


@dataclass(frozen=True)
class Svd:
    """Thin SVD ``a = u @ diag(s) @ vt`` with ``s`` sorted non-increasing."""

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def _rot(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _svd_2x2(m: np.ndarray) -> Svd:
    a, b, c, d = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    e, f = (a + d) / 2.0, (a - d) / 2.0
    g, h = (c + b) / 2.0, (c - b) / 2.0
    q, r = math.hypot(e, h), math.hypot(f, g)
    sx = q + r
    # det / sx avoids the cancellation in q - r; exact zero for rows (w, -w)
    sy = (a * d - b * c) / sx if sx > 0.0 else 0.0
    a1, a2 = math.atan2(g, f), math.atan2(h, e)
    u = _rot((a2 + a1) / 2.0)
    vt = _rot((a2 - a1) / 2.0)
    if sy < 0.0:
        u[:, 1] = -u[:, 1]
        sy = -sy
    return Svd(u, np.array([sx, sy]), vt)


def _complete_orthonormal(u: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Replace the columns of ``u`` not flagged in ``filled`` by an orthonormal completion."""
    m, k = u.shape
    basis = [u[:, j] for j in range(k) if filled[j]]
    candidates = iter(np.eye(m))
    for j in range(k):
        if filled[j]:
            continue
        for e in candidates:
            v = e.copy()
            for _ in range(2):  # re-orthogonalize once for stability
                for bvec in basis:
                    v -= (bvec @ v) * bvec
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                u[:, j] = v / nv
                basis.append(u[:, j])
                break
    return u


def _svd_jacobi_tall(a: np.ndarray, tol: float) -> Svd:
    m, n = a.shape
    # work at unit scale so column dot products neither underflow nor overflow
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return Svd(_complete_orthonormal(np.zeros((m, n)), np.zeros(n, dtype=bool)), np.zeros(n), np.eye(n))
    g = a / scale
    v = np.eye(n)
    for _ in range(_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = g[:, p] @ g[:, p]
                beta = g[:, q] @ g[:, q]
                gamma = g[:, p] @ g[:, q]
                if gamma == 0.0 or min(alpha, beta) < _NEGLIGIBLE or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                else:
                    t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                gp, gq = g[:, p].copy(), g[:, q].copy()
                g[:, p], g[:, q] = c * gp - s * gq, s * gp + c * gq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            break
    else:
        raise RuntimeError("Jacobi SVD did not converge")
    sq = np.einsum("ij,ij->j", g, g)
    order = np.argsort(-sq, kind="stable")
    sq, g, v = sq[order], g[:, order], v[:, order]
    s = np.sqrt(sq)
    # negligible columns were never orthogonalized; complete them instead
    filled = sq >= _NEGLIGIBLE
    u = np.zeros((m, n))
    u[:, filled] = g[:, filled] / s[filled]
    s = s * scale
    if not filled.all():
        u = _complete_orthonormal(u, filled)
    return Svd(u, s, v.T)


def svd(a, tol: float = JACOBI_TOL) -> Svd:
    """Thin SVD of a finite matrix.

    2x2 inputs take a closed rotation-scale-rotation path; anything else runs
    one-sided Jacobi sweeps until every column pair is orthogonal to ``tol``.
    """
    m = as_matrix(a)
    rows, cols = m.shape
    if rows == 0 or cols == 0:
        raise ValueError("empty matrix")
    if m.shape == (2, 2):
        return _svd_2x2(m)
    if rows >= cols:
        return _svd_jacobi_tall(m, tol)
    t = _svd_jacobi_tall(m.T, tol)
    return Svd(t.vt.T, t.s, t.u.T)


def singular_values(a) -> np.ndarray:
    return svd(a).s


def spectral_norm(a) -> float:
    return float(svd(a).s[0])


def frobenius_norm(a) -> float:
    m = as_matrix(a)
    scale = float(np.max(np.abs(m)))
    if scale == 0.0:
        return 0.0
    r = m / scale
    return scale * math.sqrt(float(np.sum(r * r)))


def stable_rank(a) -> float:
    """``||a||_F^2 / ||a||_sigma^2``; raises for the zero matrix."""
    s = singular_values(a)
    if s[0] == 0.0:
        raise ValueError("undefined stable rank for the zero matrix")
    return float(np.sum((s / s[0]) ** 2))


def numerical_rank(a, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    s = singular_values(a)
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def angle(u, v) -> float:
    """Angle between two nonzero vectors, in ``[0, pi]``."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("angle undefined for a zero vector")
    cos = float(u @ v) / (nu * nv)
    return math.acos(min(1.0, max(-1.0, cos)))


def pinv(a, rcond: float = PINV_RCOND) -> np.ndarray:
    """Moore-Penrose pseudoinverse; singular values below ``rcond * s_max`` count as zero."""
    d = svd(a)
    if d.s[0] == 0.0:
        return np.zeros(as_matrix(a).shape[::-1])
    keep = d.s > rcond * d.s[0]
    inv = np.zeros_like(d.s)
    inv[keep] = 1.0 / d.s[keep]
    return (d.vt.T * inv) @ d.u.T
