"""Anisotropic conductivities in the plane from a pair of potentials.

Given ``u`` and a second potential ``v`` with ``det(grad u, grad v) > 0``,

    sigma = |grad u|^-4  M^T N M,   M = [[u1, u2], [-u2, u1]],
    N = [[a, -b], [-b, (b^2 + 1) / a]],  a = det(grad u, grad v),  b = grad u . grad v,

is symmetric positive definite with ``det sigma = |grad u|^-4`` and
``sigma grad u = -rot(grad v)`` where ``rot(p) = (-p2, p1)``.  The current is
therefore a rotated gradient and divergence free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OrientationError
from .fields import TensorConductivityField
from .grids import midpoint_grid
from .potentials import Jet, ScalarPotential


def rot(p):
    """Quarter turn ``(p1, p2) -> (-p2, p1)``."""
    p = np.asarray(p)
    return np.stack([-p[..., 1], p[..., 0]], axis=-1)


@dataclass(frozen=True, eq=False)
class PlanarPair:
    u: ScalarPotential
    v: ScalarPotential

    def __post_init__(self):
        if self.u.dimension != 2 or self.v.dimension != 2:
            raise ValueError("a planar pair needs two potentials in dimension 2")
        if not np.allclose(self.u.lattice.basis, self.v.lattice.basis):
            raise ValueError("u and v must share a period lattice")
        for p in (self.u, self.v):
            if np.linalg.norm(p.mean_gradient) == 0.0:
                raise ValueError(f"{p.name}: mean gradient must be nonzero")

    @property
    def interfaces(self) -> tuple:
        return tuple(self.u.interfaces) + tuple(self.v.interfaces)

    def gradients(self, x):
        return self.u.gradient(x), self.v.gradient(x)


@dataclass
class OrientationReport:
    min_det: float
    argmin: np.ndarray

    @property
    def positive(self) -> bool:
        return self.min_det > 0.0


def orientation_determinant(grad_u, grad_v):
    """``det(grad u, grad v) = rot(grad u) . grad v``."""
    gu, gv = np.asarray(grad_u), np.asarray(grad_v)
    return gu[..., 0] * gv[..., 1] - gu[..., 1] * gv[..., 0]


def orientation_condition(pair: PlanarPair, points=None, n: int = 64) -> OrientationReport:
    """Minimum of ``det(grad u, grad v)`` over the samples (cell midpoints by default)."""
    if points is None:
        lat = pair.u.lattice
        lo, hi = lat.origin, lat.origin + np.diag(lat.basis)
        points, _, _ = midpoint_grid(np.minimum(lo, hi), np.maximum(lo, hi), n, pair.interfaces)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    det = orientation_determinant(*pair.gradients(pts))
    i = int(np.argmin(det))
    return OrientationReport(float(det[i]), pts[i])


def _as_gradient(g):
    if isinstance(g, Jet):
        return np.asarray(g.gradient)
    arr = np.asarray(g)
    if arr.dtype == object:
        return arr
    return arr.astype(float)


def planar_conductivity(u_jet, v_jet):
    """Conductivity built from ``grad u`` and ``grad v``.

    Accepts jets or raw gradients with trailing axis 2, batched.  Object
    arrays (e.g. of ``fractions.Fraction``) are evaluated exactly.  Returns
    an array of shape ``(..., 2, 2)``.
    """
    gu, gv = _as_gradient(u_jet), _as_gradient(v_jet)
    u1, u2 = gu[..., 0], gu[..., 1]
    a = orientation_determinant(gu, gv)
    if np.any(np.asarray(a) <= 0):
        bad = int(np.sum(np.asarray(a) <= 0))
        raise OrientationError(f"det(grad u, grad v) <= 0 at {bad} point(s)")
    q = u1 * u1 + u2 * u2
    if np.any(np.asarray(q) == 0):
        raise ValueError("grad u vanishes")
    b = gu[..., 0] * gv[..., 0] + gu[..., 1] * gv[..., 1]
    c = (b * b + 1) / a
    s11 = a * u1 * u1 + 2 * b * u1 * u2 + c * u2 * u2
    s12 = (a - c) * u1 * u2 - b * (u1 * u1 - u2 * u2)
    s22 = a * u2 * u2 - 2 * b * u1 * u2 + c * u1 * u1
    q2 = q * q
    out = np.empty(np.shape(s11) + (2, 2), dtype=np.result_type(np.asarray(s11)))
    out[..., 0, 0] = s11 / q2
    out[..., 0, 1] = s12 / q2
    out[..., 1, 0] = s12 / q2
    out[..., 1, 1] = s22 / q2
    return out


def pair_conductivity(pair: PlanarPair, points) -> np.ndarray:
    return planar_conductivity(*pair.gradients(np.asarray(points, dtype=float)))


def stream_consistency_check(pair: PlanarPair, points, sigma=None) -> float:
    """``max |sigma grad u + rot(grad v)|`` over the samples."""
    pts = np.asarray(points, dtype=float)
    gu, gv = pair.gradients(pts)
    if sigma is None:
        sigma = planar_conductivity(gu, gv)
    res = np.einsum("...ij,...j->...i", sigma, gu) + rot(gv)
    return float(np.max(np.abs(res)))


def planar_field(pair: PlanarPair, lo, hi, n) -> TensorConductivityField:
    """Sample the conductivity at cell midpoints, aligned to the pair's interfaces."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    pts, _, axes = midpoint_grid(lo, hi, n, pair.interfaces)
    sigma = pair_conductivity(pair, pts)
    meta = {"u": pair.u.describe(), "v": pair.v.describe()}
    return TensorConductivityField(lo, hi, axes, sigma, meta)
