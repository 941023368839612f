"""Scalar and vector potentials with analytic jets, and the example catalog.

Every potential evaluates its value, gradient, Hessian and Laplacian in
closed form and is vectorized over leading axes: ``x`` of shape ``(..., d)``
gives a gradient of shape ``(..., d)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import QuadratureError
from .grids import Interface, midpoint_grid

TWO_PI = 2.0 * np.pi
INTERFACE_PROXIMITY = 1e-9
NONVANISHING_THRESHOLD = 1e-8


@dataclass(frozen=True, eq=False)
class PeriodLattice:
    """Period cell ``Y = origin + basis @ [0, 1]^d``; columns of ``basis`` are periods."""

    basis: np.ndarray
    origin: np.ndarray = None

    def __post_init__(self):
        b = np.array(self.basis, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1] or b.shape[0] < 2:
            raise ValueError("lattice basis must be a square matrix of size >= 2")
        if abs(np.linalg.det(b)) < 1e-14:
            raise ValueError("lattice basis is singular")
        o = np.zeros(b.shape[0]) if self.origin is None else np.array(self.origin, dtype=float)
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "origin", o)

    @classmethod
    def unit(cls, d: int = 2) -> "PeriodLattice":
        return cls(np.eye(d))

    @property
    def dimension(self) -> int:
        return self.basis.shape[0]

    @property
    def volume(self) -> float:
        return abs(float(np.linalg.det(self.basis)))

    @property
    def diameter(self) -> float:
        corners = np.array(list(itertools.product([0.0, 1.0], repeat=self.dimension)))
        pts = corners @ self.basis.T
        diff = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((diff**2).sum(-1)).max())

    @property
    def axis_aligned(self) -> bool:
        return bool(np.allclose(self.basis, np.diag(np.diag(self.basis))))

    def vectors(self, n: int) -> np.ndarray:
        """Lattice vectors ``basis @ k`` for integer ``k`` in ``[-n, n]^d``."""
        ks = np.array(list(itertools.product(range(-n, n + 1), repeat=self.dimension)), dtype=float)
        return ks @ self.basis.T

    def to_dict(self) -> dict:
        return {"basis": self.basis.tolist(), "origin": self.origin.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "PeriodLattice":
        return cls(np.array(data["basis"], dtype=float), data.get("origin"))


@dataclass
class Jet:
    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray
    laplacian: np.ndarray
    near_interface: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class ScalarPotential:
    """A potential ``u`` whose gradient is periodic on ``lattice``.

    ``jet_fn(x)`` returns ``(u, grad u, hess u)`` for points of shape
    ``(..., d)``.  Non-smooth potentials list the hyperplanes where the
    gradient jumps in ``interfaces``.
    """

    name: str
    jet_fn: Callable[[np.ndarray], tuple]
    lattice: PeriodLattice
    mean_gradient: np.ndarray
    smooth: bool = True
    interfaces: tuple[Interface, ...] = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        g = np.asarray(self.mean_gradient, dtype=float)
        if g.shape != (self.lattice.dimension,):
            raise ValueError("mean gradient has the wrong dimension")
        if not np.any(g != 0.0):
            raise ValueError("mean gradient must be nonzero")
        object.__setattr__(self, "mean_gradient", g)

    @property
    def dimension(self) -> int:
        return self.lattice.dimension

    def jet(self, x) -> Jet:
        x = np.asarray(x, dtype=float)
        u, g, h = self.jet_fn(x)
        near = None
        if self.interfaces:
            dist = np.min([itf.distance(x) for itf in self.interfaces], axis=0)
            near = dist <= INTERFACE_PROXIMITY
        return Jet(u, g, h, np.trace(h, axis1=-2, axis2=-1), near)

    def value(self, x) -> np.ndarray:
        return self.jet_fn(np.asarray(x, dtype=float))[0]

    def gradient(self, x) -> np.ndarray:
        return self.jet_fn(np.asarray(x, dtype=float))[1]

    def laplacian(self, x) -> np.ndarray:
        h = self.jet_fn(np.asarray(x, dtype=float))[2]
        return np.trace(h, axis1=-2, axis2=-1)

    def describe(self) -> dict:
        return {"name": self.name, "params": dict(self.params), "lattice": self.lattice.to_dict()}

    def require_smooth(self, what: str) -> None:
        if not self.smooth:
            raise ValueError(f"{what} requires a smooth potential, got piecewise {self.name!r}")


@dataclass(frozen=True, eq=False)
class VectorPotential:
    """``U = (U_1, ..., U_d)``; the Jacobian is ``DU[i, j] = d U_j / d x_i``."""

    name: str
    components: tuple[ScalarPotential, ...]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.components[0].dimension
        if len(self.components) != d or any(c.dimension != d for c in self.components):
            raise ValueError("a vector potential needs d components in dimension d")
        if abs(np.linalg.det(self.mean_jacobian)) == 0.0:
            raise ValueError("det <DU> must be nonzero")

    @property
    def dimension(self) -> int:
        return len(self.components)

    @property
    def lattice(self) -> PeriodLattice:
        return self.components[0].lattice

    @property
    def mean_jacobian(self) -> np.ndarray:
        return np.stack([c.mean_gradient for c in self.components], axis=-1)

    @property
    def smooth(self) -> bool:
        return all(c.smooth for c in self.components)

    def jacobian(self, x) -> np.ndarray:
        return np.stack([c.gradient(x) for c in self.components], axis=-1)

    def describe(self) -> dict:
        return {"name": self.name, "params": dict(self.params), "lattice": self.lattice.to_dict()}


def evaluate(p: ScalarPotential, x) -> Jet:
    """Jet of ``p`` at ``x``; for piecewise potentials ``near_interface`` flags
    points within 1e-9 of a jump, where the lower-side limit is returned."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("evaluation point must be finite")
    return p.jet(x)


@dataclass
class NonvanishingReport:
    min_norm: float
    argmin: np.ndarray
    threshold: float

    @property
    def satisfied(self) -> bool:
        return self.min_norm > self.threshold


def check_gradient_nonvanishing(p: ScalarPotential, n: int = 64,
                                threshold: float = NONVANISHING_THRESHOLD) -> NonvanishingReport:
    """Minimum of ``|grad u|`` over the ``(n + 1)^d`` nodes of one period cell."""
    lat = p.lattice
    axes = [np.linspace(0.0, 1.0, n + 1)] * lat.dimension
    s = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lat.dimension)
    pts = lat.origin + s @ lat.basis.T
    norms = np.linalg.norm(p.gradient(pts), axis=-1)
    i = int(np.argmin(norms))
    return NonvanishingReport(float(norms[i]), pts[i], threshold)


def cell_points(p: ScalarPotential, n: int) -> np.ndarray:
    """Midpoint samples of one period cell, flattened to ``(N, d)``."""
    pts, _ = _cell_quadrature(p, n)
    return pts


def _cell_quadrature(p: ScalarPotential, n: int):
    lat = p.lattice
    d = lat.dimension
    if lat.axis_aligned:
        lo = lat.origin
        hi = lat.origin + np.diag(lat.basis)
        lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
        pts, w, _ = midpoint_grid(lo, hi, n, p.interfaces)
        pts = pts.reshape(-1, d)
        w = w.reshape(-1)
    else:
        s, w, _ = midpoint_grid(np.zeros(d), np.ones(d), n)
        pts = lat.origin + s.reshape(-1, d) @ lat.basis.T
        w = w.reshape(-1)
    return pts, w / w.sum()


def mean_gradient(p: ScalarPotential, n: int = 16, tol: float = 1e-12, max_doublings: int = 6) -> np.ndarray:
    """Cell average of the gradient by the midpoint rule, doubling ``n`` until
    two successive levels agree to ``tol``."""
    trace = []
    prev = None
    for _ in range(max_doublings + 1):
        pts, w = _cell_quadrature(p, n)
        avg = w @ p.gradient(pts)
        if prev is not None:
            change = float(np.max(np.abs(avg - prev)))
            trace.append((n, change))
            if change <= tol:
                return avg
        prev = avg
        n *= 2
    raise QuadratureError("mean gradient quadrature did not converge", trace)


# ---------------------------------------------------------------------------
# catalog


def _zeros_hess(x, d):
    return np.zeros(x.shape[:-1] + (d, d))


def linear(a, lattice: PeriodLattice | None = None) -> ScalarPotential:
    a = np.asarray(a, dtype=float)
    d = a.size
    lattice = lattice or PeriodLattice.unit(d)

    def jet(x):
        return x @ a, np.broadcast_to(a, x.shape).copy(), _zeros_hess(x, d)

    return ScalarPotential("linear", jet, lattice, a, params={"a": a.tolist()})


def drift_cosine() -> ScalarPotential:
    """``u = x_1 - cos(2 pi x_2)``: smooth, nonvanishing gradient, not isotropically
    realizable with a periodic conductivity."""

    def jet(x):
        s = np.sin(TWO_PI * x[..., 1])
        c = np.cos(TWO_PI * x[..., 1])
        g = np.stack([np.ones_like(s), TWO_PI * s], axis=-1)
        h = _zeros_hess(x, 2)
        h[..., 1, 1] = TWO_PI**2 * c
        return x[..., 0] - c, g, h

    return ScalarPotential("drift_cosine", jet, PeriodLattice.unit(2), np.array([1.0, 0.0]))


def monotone_1d(d: int = 2) -> ScalarPotential:
    """``u = x_1 - cos(2 pi x_1) / (4 pi)``; ``u' = 1 + sin(2 pi x_1) / 2`` lies in [1/2, 3/2]."""

    def jet(x):
        t = x[..., 0]
        g = np.zeros(x.shape)
        g[..., 0] = 1.0 + 0.5 * np.sin(TWO_PI * t)
        h = _zeros_hess(x, d)
        h[..., 0, 0] = np.pi * np.cos(TWO_PI * t)
        return t - np.cos(TWO_PI * t) / (4.0 * np.pi), g, h

    mean = np.zeros(d)
    mean[0] = 1.0
    return ScalarPotential("monotone_1d", jet, PeriodLattice.unit(d), mean, params={"d": d})


def trig_perturbation(eps: float = 0.1) -> ScalarPotential:
    """``u = x_1 + eps sin(2 pi x_1) cos(2 pi x_2)``, nonvanishing for eps < 1/(2 pi)."""
    if not 0.0 <= eps <= 0.1:
        raise ValueError("trig_perturbation needs 0 <= eps <= 0.1")

    def jet(x):
        s1, c1 = np.sin(TWO_PI * x[..., 0]), np.cos(TWO_PI * x[..., 0])
        s2, c2 = np.sin(TWO_PI * x[..., 1]), np.cos(TWO_PI * x[..., 1])
        k = TWO_PI * eps
        g = np.stack([1.0 + k * c1 * c2, -k * s1 * s2], axis=-1)
        h = np.empty(x.shape[:-1] + (2, 2))
        h[..., 0, 0] = -TWO_PI * k * s1 * c2
        h[..., 1, 1] = -TWO_PI * k * s1 * c2
        h[..., 0, 1] = h[..., 1, 0] = -TWO_PI * k * c1 * s2
        return x[..., 0] + eps * s1 * c2, g, h

    return ScalarPotential("trig_perturbation", jet, PeriodLattice.unit(2), np.array([1.0, 0.0]),
                           params={"eps": eps})


def _chi(t):
    # indicator of [0, 1/2] mod 1, taking the lower-side limit at the jumps
    f = t - np.floor(t)
    return ((f > 0.0) & (f <= 0.5)).astype(float)


def _chi_integral(t):
    f = t - np.floor(t)
    return 0.5 * np.floor(t) + np.minimum(f, 0.5)


_SAWTOOTH_INTERFACES = (Interface(axis=0, positions=(0.0, 0.5), period=1.0),)


def sawtooth() -> ScalarPotential:
    """Lipschitz potential ``u = x_2 - x_1 + int_0^{x_1} chi``.

    Its gradient is ``e_2`` where ``chi = 1`` and ``e_2 - e_1`` elsewhere, with
    jumps on the lines ``x_1 in (1/2) Z``.
    """

    def jet(x):
        chi = _chi(x[..., 0])
        g = np.stack([chi - 1.0, np.ones_like(chi)], axis=-1)
        return x[..., 1] - x[..., 0] + _chi_integral(x[..., 0]), g, _zeros_hess(x, 2)

    return ScalarPotential("sawtooth", jet, PeriodLattice.unit(2), np.array([-0.5, 1.0]),
                           smooth=False, interfaces=_SAWTOOTH_INTERFACES)


def sawtooth_partner() -> ScalarPotential:
    """``v = u - x_1`` for the sawtooth ``u``: a genuine Lipschitz potential with
    ``det(grad u, grad v) = 1`` everywhere and jumps only across ``x_1 in (1/2) Z``."""

    def jet(x):
        chi = _chi(x[..., 0])
        g = np.stack([chi - 2.0, np.ones_like(chi)], axis=-1)
        return x[..., 1] - 2.0 * x[..., 0] + _chi_integral(x[..., 0]), g, _zeros_hess(x, 2)

    return ScalarPotential("sawtooth_partner", jet, PeriodLattice.unit(2), np.array([-1.5, 1.0]),
                           smooth=False, interfaces=_SAWTOOTH_INTERFACES)


# Reference per-phase gradient pairs (grad u, grad v) for a two-phase sawtooth
# laminate, phase chi = 1 first.  They give the conductivities
# [[2, 1], [1, 1]] and [[1, 1], [1, 5]] / 4 pointwise.
SAWTOOTH_PHASE_GRADIENTS = (
    ((0, 1), (-1, 1)),
    ((-1, 1), (-1, 0)),
)


def sine_coordinate(i: int, j: int, eps: float, d: int = 2) -> ScalarPotential:
    """``u = x_i + eps sin(2 pi x_j)``, a component of the perturbed identity map."""

    def jet(x):
        g = np.zeros(x.shape)
        g[..., i] = 1.0
        g[..., j] += TWO_PI * eps * np.cos(TWO_PI * x[..., j])
        h = _zeros_hess(x, d)
        h[..., j, j] = -(TWO_PI**2) * eps * np.sin(TWO_PI * x[..., j])
        return x[..., i] + eps * np.sin(TWO_PI * x[..., j]), g, h

    mean = np.zeros(d)
    mean[i] = 1.0
    return ScalarPotential("sine_coordinate", jet, PeriodLattice.unit(d), mean,
                           params={"i": i, "j": j, "eps": eps, "d": d})


def product_mode(i: int, k1: int, k2: int, eps: float) -> ScalarPotential:
    """``u = x_i + eps sin(2 pi k1 x_1) sin(2 pi k2 x_2)`` in the plane."""
    a, b = TWO_PI * k1, TWO_PI * k2

    def jet(x):
        s1, c1 = np.sin(a * x[..., 0]), np.cos(a * x[..., 0])
        s2, c2 = np.sin(b * x[..., 1]), np.cos(b * x[..., 1])
        g = np.stack([eps * a * c1 * s2, eps * b * s1 * c2], axis=-1)
        g[..., i] += 1.0
        h = np.empty(x.shape[:-1] + (2, 2))
        h[..., 0, 0] = -eps * a * a * s1 * s2
        h[..., 1, 1] = -eps * b * b * s1 * s2
        h[..., 0, 1] = h[..., 1, 0] = eps * a * b * c1 * c2
        return x[..., i] + eps * s1 * s2, g, h

    return ScalarPotential("product_mode", jet, PeriodLattice.unit(2), np.eye(2)[i],
                           params={"i": i, "k1": k1, "k2": k2, "eps": eps})


CATALOG = {
    "linear": linear,
    "drift_cosine": drift_cosine,
    "monotone_1d": monotone_1d,
    "trig_perturbation": trig_perturbation,
    "sawtooth": sawtooth,
    "sawtooth_partner": sawtooth_partner,
    "sine_coordinate": sine_coordinate,
    "product_mode": product_mode,
}


def make_potential(name: str, params: dict | None = None, lattice=None) -> ScalarPotential:
    if name not in CATALOG:
        raise KeyError(f"unknown potential {name!r}; known: {sorted(CATALOG)}")
    params = dict(params or {})
    if lattice is not None:
        if name != "linear":
            raise ValueError(f"potential {name!r} has a fixed lattice")
        params["lattice"] = lattice if isinstance(lattice, PeriodLattice) else PeriodLattice.from_dict(lattice)
    return CATALOG[name](**params)


def potential_from_config(cfg: dict | str) -> ScalarPotential:
    if isinstance(cfg, str):
        return make_potential(cfg)
    lattice = cfg.get("lattice") if cfg["name"] == "linear" else None
    return make_potential(cfg["name"], cfg.get("params"), lattice)


def identity_map(d: int = 2) -> VectorPotential:
    return VectorPotential("identity", tuple(linear(np.eye(d)[j]) for j in range(d)), {"d": d})


def linear_map(A) -> VectorPotential:
    """``U(x) = A x``, so ``DU = A^T``."""
    A = np.asarray(A, dtype=float)
    return VectorPotential("linear", tuple(linear(A[j]) for j in range(A.shape[0])), {"A": A.tolist()})


def perturbed_identity(eps: float = 0.05, d: int = 2) -> VectorPotential:
    """``U_i = x_i + eps sin(2 pi x_{i+1})`` (indices mod d); periodic DU, <DU> = I."""
    comps = tuple(sine_coordinate(i, (i + 1) % d, eps, d) for i in range(d))
    return VectorPotential("perturbed_identity", comps, {"eps": eps, "d": d})


def mixed_mode(eps: float = 0.02) -> VectorPotential:
    """Planar periodic perturbation of the identity whose mixed partials carry
    two different frequencies, so centered differences do not commute exactly."""
    comps = (product_mode(0, 1, 2, eps), product_mode(1, 2, 1, eps))
    return VectorPotential("mixed_mode", comps, {"eps": eps})


VECTOR_CATALOG = {
    "identity": identity_map,
    "linear": linear_map,
    "perturbed_identity": perturbed_identity,
    "mixed_mode": mixed_mode,
}


def vector_potential_from_config(cfg: dict | str) -> VectorPotential:
    if isinstance(cfg, str):
        cfg = {"name": cfg}
    name = cfg["name"]
    if name not in VECTOR_CATALOG:
        raise KeyError(f"unknown vector potential {name!r}; known: {sorted(VECTOR_CATALOG)}")
    return VECTOR_CATALOG[name](**dict(cfg.get("params") or {}))
