"""Conductivities for matrix-valued fields ``DU``.

With columns of ``DU`` the gradients of ``U_j``, the field

    sigma = det(<DU> DU) DU^-T Cof(B) DU^-1

makes every column of ``sigma DU = det<DU> Cof(DU) Cof(B)`` divergence free,
by Piola's identity ``Div Cof(DU) = 0``.  ``B = I`` gives the plain cofactor
construction; a positive definite ``B`` is the Hessian of the quadratic
convex weight ``y -> y^T B y / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import DeterminantSignError
from .fields import TensorConductivityField
from .grids import midpoint_grid
from .potentials import VectorPotential

DET_MARGIN = 1e-10


def cofactor(A) -> np.ndarray:
    """Matrix of signed minors, batched over leading axes.

    Satisfies ``A @ cofactor(A).T == det(A) I`` and is defined for singular
    ``A``.
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[-1]
    if d == 1:
        return np.ones_like(A)
    if d == 2:
        C = np.empty_like(A)
        C[..., 0, 0] = A[..., 1, 1]
        C[..., 0, 1] = -A[..., 1, 0]
        C[..., 1, 0] = -A[..., 0, 1]
        C[..., 1, 1] = A[..., 0, 0]
        return C
    C = np.empty_like(A)
    rows = np.arange(d)
    # singular minors are legitimate; LAPACK warns on them
    with np.errstate(divide="ignore", invalid="ignore"):
        for i, j in product(range(d), range(d)):
            minor = A[..., rows != i, :][..., :, rows != j]
            C[..., i, j] = (-1) ** (i + j) * np.linalg.det(minor)
    return C


@dataclass(frozen=True)
class ConvexWeight:
    """Quadratic convex weight ``y^T B y / 2``; ``B=None`` means the identity."""

    B: np.ndarray | None = None
    tag: str = field(default="default", compare=False)

    def __post_init__(self):
        if self.B is not None:
            B = np.asarray(self.B, dtype=float)
            if not np.allclose(B, B.T):
                raise ValueError("B must be symmetric")
            try:
                np.linalg.cholesky(B)
            except np.linalg.LinAlgError:
                raise ValueError("B must be positive definite") from None
            object.__setattr__(self, "B", B)
            object.__setattr__(self, "tag", "quadratic")

    def hessian(self, d: int) -> np.ndarray:
        return np.eye(d) if self.B is None else self.B

    def to_dict(self) -> dict:
        return {"tag": self.tag, "B": None if self.B is None else self.B.tolist()}


def _determinant_factor(U: VectorPotential, DU: np.ndarray) -> np.ndarray:
    det = np.linalg.det(U.mean_jacobian) * np.linalg.det(DU)
    if np.any(det <= 0):
        raise DeterminantSignError(f"det(<DU> DU) <= 0 at {int(np.sum(det <= 0))} point(s)")
    if np.any(det < DET_MARGIN):
        err = DeterminantSignError(f"det(<DU> DU) below {DET_MARGIN} at {int(np.sum(det < DET_MARGIN))} point(s)")
        err.kind = "near-degenerate"
        raise err
    return det


def matrix_conductivity(U: VectorPotential, x, weight: ConvexWeight | None = None) -> np.ndarray:
    """``det(<DU> DU) DU^-T Cof(B) DU^-1`` at the point(s) ``x``."""
    DU = U.jacobian(np.asarray(x, dtype=float))
    det = _determinant_factor(U, DU)
    CB = cofactor((weight or ConvexWeight()).hessian(U.dimension))
    K = np.linalg.inv(DU)
    S = det[..., None, None] * np.swapaxes(K, -1, -2) @ CB @ K
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def matrix_conductivity_convex(U: VectorPotential, weight: ConvexWeight, x) -> np.ndarray:
    """``J DU^-1`` with ``J = det<DU> Cof(DU B)``, the convex-weight route."""
    DU = U.jacobian(np.asarray(x, dtype=float))
    _determinant_factor(U, DU)
    J = np.linalg.det(U.mean_jacobian) * cofactor(DU @ weight.hessian(U.dimension))
    S = J @ np.linalg.inv(DU)
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def matrix_current(U: VectorPotential, x, weight: ConvexWeight | None = None) -> np.ndarray:
    """``sigma DU``; columns are the currents of the components of ``U``."""
    return matrix_conductivity(U, x, weight) @ U.jacobian(np.asarray(x, dtype=float))


def matrix_field(U: VectorPotential, lo, hi, n, weight: ConvexWeight | None = None) -> TensorConductivityField:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    pts, _, axes = midpoint_grid(lo, hi, n)
    sigma = matrix_conductivity(U, pts, weight)
    meta = {"U": U.describe(), "weight": (weight or ConvexWeight()).to_dict()}
    return TensorConductivityField(lo, hi, axes, sigma, meta)


@dataclass
class PiolaReport:
    h: float
    per_component: list
    max_residual: float

    def to_dict(self) -> dict:
        return {"h": self.h, "per_component": self.per_component, "max_residual": self.max_residual}


def _column_divergence(field_fn, pts: np.ndarray, h: float) -> np.ndarray:
    """Centered-difference ``sum_i d_i F[i, j]`` for a matrix field ``F``."""
    d = pts.shape[-1]
    div = 0.0
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        div = div + (field_fn(pts + e)[..., i, :] - field_fn(pts - e)[..., i, :]) / (2.0 * h)
    return div


def piola_residual(U: VectorPotential, lo, hi, n) -> PiolaReport:
    """Centered-difference ``Div Cof(DU)`` at the interior nodes of an ``n``-cell grid.

    The divergence acts on columns; the max-norm of each of its ``d``
    components is reported.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = lo.size
    h = float((hi[0] - lo[0]) / n)
    if n < 2:
        raise ValueError("need at least one interior node")
    axes = [np.linspace(lo[a], hi[a], n + 1)[1:-1] for a in range(d)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    div = _column_divergence(lambda X: cofactor(U.jacobian(X)), pts, h)
    per = np.max(np.abs(div), axis=0)
    return PiolaReport(h, per.tolist(), float(per.max()))


def gradient_curl(U: VectorPotential, lo, hi, n) -> np.ndarray:
    """Centered-difference curl of each gradient column in the plane, at the
    same nodes as :func:`piola_residual`.  Column ``j`` holds
    ``d_1 (grad U_j)_2 - d_2 (grad U_j)_1``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.size != 2:
        raise ValueError("the curl identity is planar")
    h = float((hi[0] - lo[0]) / n)
    axes = [np.linspace(lo[a], hi[a], n + 1)[1:-1] for a in range(2)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
    e1, e2 = np.array([h, 0.0]), np.array([0.0, h])
    D1 = (U.jacobian(pts + e1) - U.jacobian(pts - e1)) / (2 * h)
    D2 = (U.jacobian(pts + e2) - U.jacobian(pts - e2)) / (2 * h)
    return D1[:, 1, :] - D2[:, 0, :]
