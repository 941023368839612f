"""Tensor-product midpoint grids, optionally aligned to interfaces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Interface:
    """Family of hyperplanes ``x[axis] = p + k * period`` for p in ``positions``."""

    axis: int
    positions: tuple[float, ...]
    period: float = 1.0

    def distance(self, x: np.ndarray) -> np.ndarray:
        c = np.asarray(x, dtype=float)[..., self.axis]
        best = np.full(c.shape, np.inf)
        for p in self.positions:
            r = np.mod(c - p, self.period)
            best = np.minimum(best, np.minimum(r, self.period - r))
        return best

    def crossings(self, lo: float, hi: float) -> list[float]:
        out = []
        for p in self.positions:
            k0 = int(np.ceil((lo - p) / self.period))
            k1 = int(np.floor((hi - p) / self.period))
            out.extend(p + k * self.period for k in range(k0, k1 + 1))
        return sorted(out)


def axis_breakpoints(lo: float, hi: float, n: int, cuts=()) -> np.ndarray:
    """Uniform partition of [lo, hi] into n cells, refined at the given cuts."""
    pts = np.linspace(lo, hi, n + 1)
    extra = [c for c in cuts if lo < c < hi]
    if extra:
        pts = np.union1d(pts, extra)
        # drop slivers produced by cuts that nearly coincide with grid nodes
        keep = np.concatenate([[True], np.diff(pts) > 1e-12 * (hi - lo)])
        pts = pts[keep]
        pts[-1] = hi
    return pts


def midpoint_grid(lo, hi, n, interfaces=()):
    """Midpoint rule on the box [lo, hi].

    Returns ``(points, weights, axes)`` where ``points`` has shape
    ``(n_1, ..., n_d, d)``, ``weights`` has shape ``(n_1, ..., n_d)`` and
    ``axes`` is the list of 1-d midpoint arrays.  Cell edges include every
    interface crossing inside the box.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    d = lo.size
    ns = np.broadcast_to(np.asarray(n), (d,))
    mids, widths = [], []
    for a in range(d):
        cuts = []
        for itf in interfaces:
            if itf.axis == a:
                cuts.extend(itf.crossings(lo[a], hi[a]))
        b = axis_breakpoints(lo[a], hi[a], int(ns[a]), cuts)
        mids.append(0.5 * (b[1:] + b[:-1]))
        widths.append(np.diff(b))
    mesh = np.meshgrid(*mids, indexing="ij")
    points = np.stack(mesh, axis=-1)
    wmesh = np.meshgrid(*widths, indexing="ij")
    weights = np.prod(np.stack(wmesh, axis=0), axis=0)
    return points, weights, mids


def node_grid(lo, hi, n):
    """Uniform node grid with ``n + 1`` nodes per axis (boxes included)."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    ns = np.broadcast_to(np.asarray(n), lo.shape)
    axes = [np.linspace(lo[a], hi[a], int(ns[a]) + 1) for a in range(lo.size)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1), axes
