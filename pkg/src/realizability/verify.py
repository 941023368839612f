"""Divergence residuals of currents and effective conductivities.

The weak residual of a current ``j`` against a bump ``phi`` is

    |int j . grad phi| / (||grad phi||_2 ||j||_2),

with both norms over the support of ``phi``.  By Cauchy-Schwarz it lies in
``[0, 1]`` whatever the magnitude of ``j``, which matters for conductivities
like ``e^w`` with ``|w|`` in the tens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLoadingError
from .grids import midpoint_grid

BUMP_FRACTION = 0.3
DEGENERATE_LOADING = 1e-12
ROUNDOFF_FLOOR = 1e-10


@dataclass(frozen=True)
class Bump:
    """``phi(x) = (1 - |x - c|^2 / r^2)^4`` inside the ball, zero outside."""

    center: tuple
    radius: float

    def value(self, x) -> np.ndarray:
        s = np.sum((np.asarray(x) - np.asarray(self.center)) ** 2, axis=-1) / self.radius**2
        return np.where(s < 1.0, (1.0 - np.minimum(s, 1.0)) ** 4, 0.0)

    def gradient(self, x) -> np.ndarray:
        dx = np.asarray(x) - np.asarray(self.center)
        s = np.sum(dx**2, axis=-1) / self.radius**2
        f = np.where(s < 1.0, -8.0 * (1.0 - np.minimum(s, 1.0)) ** 3 / self.radius**2, 0.0)
        return f[..., None] * dx


@dataclass
class TestFunctionBattery:
    bumps: list

    __test__ = False  # not a pytest class

    @classmethod
    def default(cls, lo, hi) -> "TestFunctionBattery":
        """Box center plus the ``2^d`` orthant centers.

        Radii are ``0.3`` times the shortest side, reduced where needed so
        each support stays inside the box.
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        d = lo.size
        mid = 0.5 * (lo + hi)
        centers = [mid]
        for signs in np.ndindex(*(2,) * d):
            centers.append(np.where(np.array(signs) == 0, 0.5 * (lo + mid), 0.5 * (mid + hi)))
        r0 = BUMP_FRACTION * float(np.min(hi - lo))
        bumps = []
        for c in centers:
            room = float(np.min(np.minimum(c - lo, hi - c)))
            bumps.append(Bump(tuple(c.tolist()), min(r0, room)))
        return cls(bumps)

    def inside(self, lo, hi) -> bool:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        return all(np.all(np.asarray(b.center) - b.radius >= lo - 1e-15)
                   and np.all(np.asarray(b.center) + b.radius <= hi + 1e-15) for b in self.bumps)


@dataclass
class ResidualReport:
    weak: list
    h: float
    rule: str
    strong: float | None = None
    coarse: list | None = None
    flagged: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def max_weak(self) -> float:
        return float(np.max(self.weak))

    def passed(self, tol: float) -> bool:
        return self.max_weak <= tol and not self.flagged

    def to_dict(self) -> dict:
        out = {
            "weak": [float(r) for r in np.ravel(self.weak)],
            "max_weak": self.max_weak,
            "h": self.h,
            "rule": self.rule,
            "strong": self.strong,
            "flagged": self.flagged,
        }
        if self.coarse is not None:
            out["coarse"] = [float(r) for r in np.ravel(self.coarse)]
        out.update(self.extra)
        return out


def _weak(J, pts, wts, battery):
    """Per-bump normalized residuals; ``J`` is ``(..., d)`` or ``(..., d, m)``."""
    d = pts.shape[-1]
    matrix = J.ndim == pts.ndim + 1
    pts = pts.reshape(-1, d)
    wts = wts.reshape(-1)
    J = J.reshape((len(pts), d, -1) if matrix else (len(pts), d, 1))
    out = []
    for b in battery.bumps:
        g = b.gradient(pts)
        on = np.sum(g * g, axis=-1) > 0
        gn = np.sqrt(np.sum(wts[on] * np.sum(g[on] ** 2, axis=-1)))
        num = np.einsum("n,ni,nij->j", wts, g, J)
        jn = np.sqrt(np.einsum("n,nij->j", wts[on], J[on] ** 2))
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.where(jn == 0, 0.0, np.abs(num) / (gn * jn))
        # nan propagates so corrupted samples cannot pass
        out.append(float(np.nan if np.isnan(r).any() else np.max(r)))
    return out


def weak_divergence_residual(current, lo, hi, n, battery: TestFunctionBattery | None = None,
                             interfaces=(), refine: bool = True) -> ResidualReport:
    """Test ``div j = 0`` weakly with a battery of bumps.

    ``current`` is either a callable mapping points ``(..., d)`` to currents
    ``(..., d)`` (or ``(..., d, m)`` for ``m`` column currents), or an array
    already sampled on ``midpoint_grid(lo, hi, n, interfaces)``.  With a
    callable and ``refine=True`` the residual is also computed on the grid
    with half as many cells; the report is flagged if refinement made it
    grow.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    battery = battery or TestFunctionBattery.default(lo, hi)
    if not battery.inside(lo, hi):
        raise ValueError("every bump must be supported inside the box")
    pts, wts, _ = midpoint_grid(lo, hi, n, interfaces)
    J = current(pts) if callable(current) else np.asarray(current, dtype=float)
    weak = _weak(J, pts, wts, battery)
    rule = "midpoint" + ("-aligned" if interfaces else "")
    h = float(np.max(hi - lo) / np.max(n))
    report = ResidualReport(weak, h, rule)
    if callable(current) and refine and np.min(n) >= 4:
        n2 = np.maximum(np.asarray(n) // 2, 1)
        p2, w2, _ = midpoint_grid(lo, hi, n2, interfaces)
        coarse = _weak(current(p2), p2, w2, battery)
        report.coarse = coarse
        report.flagged = bool(max(weak) > max(coarse) and max(weak) > ROUNDOFF_FLOOR)
    return report


def strong_divergence_residual(J, h) -> float:
    """Max over interior nodes of the centered-difference divergence.

    ``J`` has shape ``(n_1, ..., n_d, d)`` on a uniform grid; ``h`` is a
    scalar or one spacing per axis.
    """
    J = np.asarray(J, dtype=float)
    d = J.shape[-1]
    if J.ndim != d + 1 or any(s < 3 for s in J.shape[:-1]):
        raise ValueError("need a d-dimensional grid with at least 3 points per axis")
    hs = np.broadcast_to(np.asarray(h, dtype=float), (d,))
    inner = tuple(slice(1, -1) for _ in range(d))
    div = np.zeros(tuple(s - 2 for s in J.shape[:-1]))
    for i in range(d):
        up = list(inner)
        dn = list(inner)
        up[i] = slice(2, None)
        dn[i] = slice(None, -2)
        div += (J[tuple(up) + (i,)] - J[tuple(dn) + (i,)]) / (2.0 * hs[i])
    return float(np.max(np.abs(div)))


def effective_conductivity(sigma, potentials, n: int = 64, cell=None) -> np.ndarray:
    """``sigma*`` from ``sigma* <grad u_k> = <sigma grad u_k>`` over one period cell.

    ``sigma`` maps points to scalars or ``d x d`` matrices.  ``potentials``
    are objects with ``gradient``, ``lattice`` and ``interfaces``, one per
    loading; their mean gradients must span R^d.  The averages use the
    midpoint rule aligned to every declared interface.
    """
    potentials = list(potentials)
    p0 = potentials[0]
    d = p0.dimension
    if len(potentials) != d:
        raise DegenerateLoadingError(f"need {d} loadings, got {len(potentials)}")
    if cell is None:
        lat = p0.lattice
        a, b = lat.origin, lat.origin + np.diag(lat.basis)
        cell = (np.minimum(a, b), np.maximum(a, b))
    interfaces = tuple(itf for p in potentials for itf in getattr(p, "interfaces", ()))
    pts, wts, _ = midpoint_grid(cell[0], cell[1], n, interfaces)
    pts = pts.reshape(-1, d)
    wts = wts.reshape(-1) / wts.sum()
    S = np.asarray(sigma(pts), dtype=float)
    G = np.empty((d, d))
    C = np.empty((d, d))
    for k, p in enumerate(potentials):
        g = p.gradient(pts)
        j = S[:, None] * g if S.ndim == 1 else np.einsum("nij,nj->ni", S, g)
        G[:, k] = wts @ g
        C[:, k] = wts @ j
    sv = np.linalg.svd(G, compute_uv=False)
    if sv[-1] <= DEGENERATE_LOADING * max(sv[0], 1e-300):
        raise DegenerateLoadingError("mean gradients of the loadings do not span R^d")
    return np.linalg.solve(G.T, C.T).T
