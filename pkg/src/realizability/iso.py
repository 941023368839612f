"""Isotropic conductivities from the gradient flow.

``w = log sigma`` is the integral of the Laplacian of ``u`` along the flow
from ``x`` to the equipotential ``{u = 0}``; then ``div(e^w grad u) = 0``.
Values of ``w`` reach several hundred for some catalog fields, so everything
is stored and compared as ``w``, never as ``sigma``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import null_space
from scipy.special import logsumexp

from .errors import HittingError, RankDeficiencyError
from .flow import FlowConfig, equipotential_hits, hitting_hyperplane, hyperplane_map
from .grids import midpoint_grid
from .potentials import PeriodLattice, ScalarPotential

SLOPE_UNBOUNDED = 0.5
SLOPE_BOUNDED = 0.05
MAX_FAILURE_FRACTION = 0.10
PERIODIZE_RANGE_LIMIT = 1e3


@dataclass
class ScalarConductivityField:
    """Log-conductivity samples at the cell midpoints of a box.

    ``axes`` are the midpoint coordinates per axis and ``w`` has shape
    ``tuple(len(a) for a in axes)``.  Off-grid values use multilinear
    interpolation of ``w`` (clamped at the outermost midpoints).
    """

    lo: np.ndarray
    hi: np.ndarray
    axes: list
    w: np.ndarray
    interpolation: str = "multilinear"
    meta: dict = field(default_factory=dict)

    @property
    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @property
    def sigma(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.w)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        live = [i for i, a in enumerate(self.axes) if len(a) > 1]
        if not live:
            return np.full(x.shape[:-1], float(self.w.reshape(-1)[0]))
        axes = [self.axes[i] for i in live]
        vals = self.w.reshape([len(a) for a in axes]) if len(live) < len(self.axes) else self.w
        xi = np.stack([np.clip(x[..., i], a[0], a[-1]) for i, a in zip(live, axes)], axis=-1)
        return RegularGridInterpolator(axes, vals, method="linear")(xi)

    def header(self) -> dict:
        return {
            "box": [self.lo.tolist(), self.hi.tolist()],
            "grid": [len(a) for a in self.axes],
            "interpolation": self.interpolation,
            **self.meta,
        }

    def write(self, csv_path, json_path=None) -> None:
        pts = self.points.reshape(-1, len(self.axes))
        w = self.w.reshape(-1)
        with open(Path(csv_path), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"x_{i + 1}" for i in range(pts.shape[1])] + ["w", "sigma"])
            with np.errstate(over="ignore"):
                for xi, wi in zip(pts, w):
                    wr.writerow([repr(float(v)) for v in xi] + [repr(float(wi)), repr(float(np.exp(wi)))])
        if json_path is not None:
            Path(json_path).write_text(json.dumps(self.header(), indent=2, sort_keys=True))

    @classmethod
    def read(cls, csv_path, json_path) -> "ScalarConductivityField":
        head = json.loads(Path(json_path).read_text())
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        shape = tuple(head["grid"])
        d = len(shape)
        pts = data[:, :d].reshape(shape + (d,))
        axes = [pts[(0,) * a + (slice(None),) + (0,) * (d - a - 1)][:, a] for a in range(d)]
        meta = {k: v for k, v in head.items() if k not in ("box", "grid", "interpolation")}
        return cls(np.array(head["box"][0]), np.array(head["box"][1]), axes,
                   data[:, d].reshape(shape), head.get("interpolation", "multilinear"), meta)


def log_conductivity_batch(p: ScalarPotential, points, cfg: FlowConfig | None = None) -> np.ndarray:
    """``w`` at many points; raises ``HittingError`` listing the points that failed."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tau, z, w, res, it, status = equipotential_hits(p, pts, cfg)
    bad = status != "ok"
    if bad.any():
        kinds = sorted(set(status[bad]))
        raise HittingError(kinds[0], f"{int(bad.sum())} points failed to reach u = 0 ({', '.join(kinds)})",
                           points=pts[bad])
    return w


def log_conductivity(p: ScalarPotential, x, cfg: FlowConfig | None = None) -> float:
    """``w(x) = int_0^tau(x) lap u(X(s, x)) ds``."""
    return float(log_conductivity_batch(p, np.asarray(x, dtype=float)[None, :], cfg)[0])


def conductivity_field(p: ScalarPotential, lo, hi, n, cfg: FlowConfig | None = None) -> ScalarConductivityField:
    """Sample ``w`` at the midpoints of an ``n``-cell grid on the box ``[lo, hi]``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    pts, _, axes = midpoint_grid(lo, hi, n)
    shape = pts.shape[:-1]
    w = log_conductivity_batch(p, pts.reshape(-1, pts.shape[-1]), cfg).reshape(shape)
    return ScalarConductivityField(lo, hi, axes, w, meta={"potential": p.describe()})


def tangent_frame(nu) -> np.ndarray:
    """Orthonormal basis of the hyperplane orthogonal to ``nu``, one vector per row."""
    nu = np.asarray(nu, dtype=float)
    return null_space(nu[None, :]).T


def cross_product(vectors) -> np.ndarray:
    """Generalized cross product of ``d - 1`` vectors in R^d (rows of ``vectors``).

    Characterized by ``xi . (v_1 x ... x v_{d-1}) = det(xi, v_1, ..., v_{d-1})``.
    """
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    d = V.shape[1]
    if V.shape[0] != d - 1:
        raise ValueError("need d - 1 vectors in R^d")
    M = V.T
    out = np.empty(d)
    for k in range(d):
        minor = np.delete(M, k, axis=0)
        out[k] = (-1) ** k * (np.linalg.det(minor) if minor.size else 1.0)
    return out


def hyperplane_conductivity(p: ScalarPotential, H, x, cfg: FlowConfig | None = None,
                            frame=None, h_fd: float | None = None, rank_tol: float = 1e-8) -> float:
    """``sigma_H = |grad v_1 x ... x grad v_{d-1}| / |grad u|`` with ``v_k = z_H . tau_k``.

    The gradients of the first integrals ``v_k`` come from central differences
    of the hitting map ``z_H``.
    """
    cfg = (cfg or FlowConfig()).resolved(p)
    x = np.asarray(x, dtype=float)
    d = x.size
    ref = hitting_hyperplane(p, H, x, cfg)
    frame = tangent_frame(H[0]) if frame is None else np.atleast_2d(np.asarray(frame, dtype=float))
    h = 1e-5 * p.lattice.diameter if h_fd is None else h_fd
    E = np.eye(d) * h
    stencil = np.concatenate([x + E, x - E])
    Z = hyperplane_map(p, H, stencil, ref, cfg)
    V = Z @ frame.T
    grads = ((V[:d] - V[d:]) / (2.0 * h)).T
    sv = np.linalg.svd(grads, compute_uv=False)
    if sv[-1] <= rank_tol * max(sv[0], 1e-300):
        raise RankDeficiencyError(f"first-integral gradients are rank deficient at {x} (sv = {sv})")
    return float(np.linalg.norm(cross_product(grads)) / np.linalg.norm(p.gradient(x)))


@dataclass
class TorusVerdict:
    verdict: str
    c_est: float
    slope: float
    r2: float
    radii: list
    shell_sup: list
    failures: int
    total: int

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "C_est": self.c_est,
            "slope": self.slope,
            "r2": self.r2,
            "radii": list(self.radii),
            "shell_sup": list(self.shell_sup),
            "failures": self.failures,
            "total": self.total,
            "note": "bounded means bounded on the tested shells only",
        }


def shell_points(lattice: PeriodLattice, radius: float, count: int, seed: int = 0) -> np.ndarray:
    """Points on the cube shell ``|x - origin|_inf = radius``."""
    d = lattice.dimension
    c = lattice.origin
    if d == 2:
        s = (np.arange(count) + 0.5) / count * 8.0 * radius
        side = np.minimum((s // (2.0 * radius)).astype(int), 3)
        r = s - 2.0 * radius * side - radius
        pts = np.empty((count, 2))
        pts[side == 0] = np.stack([r[side == 0], np.full((side == 0).sum(), -radius)], -1)
        pts[side == 1] = np.stack([np.full((side == 1).sum(), radius), r[side == 1]], -1)
        pts[side == 2] = np.stack([-r[side == 2], np.full((side == 2).sum(), radius)], -1)
        pts[side == 3] = np.stack([np.full((side == 3).sum(), -radius), -r[side == 3]], -1)
        return c + pts
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-radius, radius, size=(count, d))
    face = rng.integers(0, d, size=count)
    pts[np.arange(count), face] = np.where(rng.random(count) < 0.5, -radius, radius)
    return c + pts


def torus_boundedness_check(p: ScalarPotential, radii=(0.5, 1.0, 2.0, 4.0, 8.0), samples: int = 128,
                            cfg: FlowConfig | None = None, seed: int = 0) -> TorusVerdict:
    """Classify ``sup |w|`` over growing shells as bounded or unbounded.

    The slope of the per-shell supremum against the radius (in periods) is
    compared with the thresholds 0.05 (bounded) and 0.5 (unbounded).
    """
    cfg = (cfg or FlowConfig()).resolved(p)
    period = p.lattice.volume ** (1.0 / p.dimension)
    sups, fails, total = [], 0, 0
    for r in radii:
        pts = shell_points(p.lattice, r, samples, seed)
        _, _, w, _, _, status = equipotential_hits(p, pts, cfg)
        ok = status == "ok"
        fails += int((~ok).sum())
        total += len(pts)
        sups.append(float(np.max(np.abs(w[ok]))) if ok.any() else np.nan)
    sups_arr = np.array(sups)
    rr = np.asarray(radii, dtype=float) / period
    good = np.isfinite(sups_arr)
    if good.sum() >= 2:
        slope, icpt = np.polyfit(rr[good], sups_arr[good], 1)
        pred = slope * rr[good] + icpt
        ss = np.sum((sups_arr[good] - sups_arr[good].mean()) ** 2)
        r2 = 1.0 - np.sum((sups_arr[good] - pred) ** 2) / ss if ss > 0 else 1.0
    else:
        slope, r2 = np.nan, np.nan
    if total == 0 or fails > MAX_FAILURE_FRACTION * total or not np.isfinite(slope):
        verdict = "inconclusive"
    elif slope >= SLOPE_UNBOUNDED:
        verdict = "unbounded"
    elif slope <= SLOPE_BOUNDED:
        verdict = "bounded"
    else:
        verdict = "inconclusive"
    c_est = float(np.nanmax(sups_arr)) if good.any() else np.nan
    return TorusVerdict(verdict, c_est, float(slope), float(r2), list(radii), sups, fails, total)


def periodize(w0, n: int, lattice: PeriodLattice, points=None, cells: int = 32) -> ScalarConductivityField:
    """``sigma_n(x) = (2n+1)^{-d} sum_k sigma_0(x + k)`` over ``k`` in ``[-n, n]^d``.

    ``w0`` maps points ``(N, d)`` to ``log sigma_0``; the average is taken in
    log space.  The result is flagged when ``max sigma_n / min sigma_n``
    exceeds 1e3 on the sampled points.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    d = lattice.dimension
    if points is None:
        lo = lattice.origin
        hi = lattice.origin + np.diag(lattice.basis)
        pts, _, axes = midpoint_grid(np.minimum(lo, hi), np.maximum(lo, hi), cells)
    else:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        axes = [np.arange(len(pts))]
        lo, hi = pts.min(0), pts.max(0)
    flat = pts.reshape(-1, d)
    shifts = lattice.vectors(n)
    W = np.stack([np.asarray(w0(flat + k), dtype=float) for k in shifts])
    wn = logsumexp(W, axis=0) - np.log(len(shifts))
    spread = float(wn.max() - wn.min())
    meta = {
        "n": n,
        "log_dynamic_range": spread,
        "flagged": bool(spread > np.log(PERIODIZE_RANGE_LIMIT)),
    }
    shape = pts.shape[:-1] if points is None else (len(flat),)
    return ScalarConductivityField(np.asarray(lo, float), np.asarray(hi, float), axes, wn.reshape(shape), meta=meta)
