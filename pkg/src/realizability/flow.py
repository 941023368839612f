"""Gradient flow ``dX/dt = grad u(X)``, hitting times and the Liouville determinant.

All integrators here are batched: a set of start points is marched together
with one step size per point.  The default scheme is classical RK4 with the
local error estimated by step doubling; a step whose estimate exceeds
``FlowConfig.local_tol`` is halved and retried.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import HittingError, RefinementRequired
from .potentials import ScalarPotential, check_gradient_nonvanishing

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowConfig:
    """Integrator and root-finding settings.

    ``t_max`` and ``m`` are filled in from the potential by :meth:`resolved`
    when left as ``None``: ``m`` is the sampled minimum of ``|grad u|^2`` and
    ``t_max = 10 * diam(Y) / m``.
    """

    h: float = 1e-3
    order: str = "rk4"
    t_max: float | None = None
    tol_root: float = 1e-10
    m: float | None = None
    local_tol: float | None = 1e-10
    max_halvings: int = 24
    recross_window: float = 0.5
    transversality: float = 1e-8
    stagnation_floor: float = 1e-14

    def __post_init__(self):
        if self.h <= 0 or self.tol_root <= 0:
            raise ValueError("h and tol_root must be positive")
        if self.t_max is not None and self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.m is not None and self.m < 0:
            raise ValueError("m must be nonnegative")
        if self.order != "rk4":
            raise ValueError(f"unsupported integrator {self.order!r}")

    def resolved(self, p: ScalarPotential) -> "FlowConfig":
        m = self.m
        if m is None:
            m = check_gradient_nonvanishing(p).min_norm ** 2
        t_max = self.t_max
        if t_max is None:
            t_max = 10.0 * p.lattice.diameter / m if m > 0 else np.inf
        return replace(self, m=m, t_max=t_max)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class Trajectory:
    start: np.ndarray
    t: np.ndarray
    X: np.ndarray
    steps: int = 0
    rejected: int = 0

    @property
    def end(self) -> np.ndarray:
        return self.X[-1]

    def write_csv(self, path) -> None:
        d = self.X.shape[1]
        with open(Path(path), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t"] + [f"x_{i + 1}" for i in range(d)])
            for ti, xi in zip(self.t, self.X):
                wr.writerow([repr(float(ti))] + [repr(float(v)) for v in xi])


@dataclass
class HittingResult:
    tau: float
    z: np.ndarray
    residual: float
    iterations: int
    crossings: int = 1
    w: float | None = None
    schedule: list = field(default_factory=list, repr=False)
    substep: float = 0.0


# ---------------------------------------------------------------------------
# stepping


def _rhs(p, X):
    _, g, H = p.jet_fn(X)
    return g, np.trace(H, axis1=-2, axis2=-1)


def _rk4(p, X, h, k1=None):
    """One RK4 step of signed size ``h`` (shape (N,)); also integrates the Laplacian."""
    hh = h[:, None]
    if k1 is None:
        k1 = _rhs(p, X)
    g1, l1 = k1
    g2, l2 = _rhs(p, X + 0.5 * hh * g1)
    g3, l3 = _rhs(p, X + 0.5 * hh * g2)
    g4, l4 = _rhs(p, X + hh * g3)
    Xn = X + hh * (g1 + 2.0 * g2 + 2.0 * g3 + g4) / 6.0
    dw = h * (l1 + 2.0 * l2 + 2.0 * l3 + l4) / 6.0
    return Xn, dw


def _attempt(p, X, h, tol):
    if tol is None:
        Xn, dw = _rk4(p, X, h)
        return Xn, dw, np.zeros(len(X))
    k1 = _rhs(p, X)
    Xfull, _ = _rk4(p, X, h, k1)
    Xa, dwa = _rk4(p, X, 0.5 * h, k1)
    Xb, dwb = _rk4(p, Xa, 0.5 * h)
    err = np.max(np.abs(Xb - Xfull), axis=-1)
    return Xb, dwa + dwb, err


class _Batch:
    """Marching state for a batch of trajectories."""

    def __init__(self, p, X, direction, cfg: FlowConfig):
        self.p = p
        self.cfg = cfg
        self.X = np.array(X, dtype=float)
        n = len(self.X)
        self.w = np.zeros(n)
        self.t = np.zeros(n)
        self.dir = np.broadcast_to(np.asarray(direction, dtype=float), (n,)).copy()
        self.h = np.full(n, cfg.h)
        self.steps = np.zeros(n, dtype=int)
        self.rejected = np.zeros(n, dtype=int)
        self.h_min = cfg.h * 0.5**cfg.max_halvings

    def step(self, idx, cap=None):
        """Advance the points ``idx`` by one accepted step of at most ``cap``.

        Returns the previous positions, previous ``w`` and the signed step used.
        """
        tol = self.cfg.local_tol
        X0 = self.X[idx]
        w0 = self.w[idx]
        h_work = self.h[idx]
        h = h_work.copy() if cap is None else np.minimum(h_work, cap)
        d = self.dir[idx]
        Xn = np.empty_like(X0)
        dw = np.empty(len(idx))
        err = np.zeros(len(idx))
        retried = np.zeros(len(idx), bool)
        pending = np.arange(len(idx))
        while pending.size:
            X1, dw1, e1 = _attempt(self.p, X0[pending], h[pending] * d[pending], tol)
            if tol is None:
                ok = np.ones(pending.size, bool)
            else:
                ok = (e1 <= tol) | (h[pending] <= self.h_min)
            good = pending[ok]
            Xn[good] = X1[ok]
            dw[good] = dw1[ok]
            err[good] = e1[ok]
            bad = pending[~ok]
            h[bad] *= 0.5
            retried[bad] = True
            self.rejected[idx[bad]] += 1
            pending = bad
        used = h * d
        self.X[idx] = Xn
        self.w[idx] = w0 + dw
        self.t[idx] += used
        self.steps[idx] += 1
        new_h = h.copy()
        if tol is not None:
            grow = (err < tol / 32.0) & (new_h < self.cfg.h)
            new_h[grow] = np.minimum(2.0 * new_h[grow], self.cfg.h)
        if cap is not None:
            # a step shortened only to land on the end time keeps the working size
            keep = (cap < h_work) & ~retried
            new_h[keep] = h_work[keep]
        self.h[idx] = new_h
        return X0, w0, used


def _refine(p, X0, w0, direction, span, target, target_grad, goal, tol, max_iter=80):
    """Find the substep ``s`` in ``[0, span]`` with ``target(RK4(X0, s * dir)) == goal``.

    Safeguarded Newton on a sign-change bracket; vectorized over rows of X0.
    Returns ``(s, Y, w, residual, iterations)``.
    """
    n = len(X0)
    lo = np.zeros(n)
    hi = span.copy()
    g_lo = target(X0) - goal
    Y_hi, _ = _rk4(p, X0, hi * direction)
    g_hi = target(Y_hi) - goal
    s = np.where(g_hi != g_lo, hi * g_lo / (g_lo - g_hi), 0.5 * hi)
    s = np.clip(s, 0.0, hi)
    done = np.zeros(n, bool)
    out_Y = np.empty_like(X0)
    out_dw = np.zeros(n)
    res = np.full(n, np.inf)
    iters = np.zeros(n, dtype=int)
    sign_lo = np.sign(g_lo)
    for it in range(max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        Y, dw = _rk4(p, X0[act], s[act] * direction[act])
        gv = target(Y) - goal[act]
        iters[act] += 1
        conv = (np.abs(gv) <= 0.25 * tol) | (hi[act] - lo[act] <= 4e-16 * np.maximum(1.0, hi[act]))
        out_Y[act] = Y
        out_dw[act] = dw
        res[act] = np.abs(gv)
        done[act[conv]] = True
        act, Y, gv = act[~conv], Y[~conv], gv[~conv]
        if act.size == 0:
            break
        same = np.sign(gv) == sign_lo[act]
        lo[act[same]] = s[act[same]]
        hi[act[~same]] = s[act[~same]]
        slope = np.sum(target_grad(Y) * p.gradient(Y), axis=-1) * direction[act]
        with np.errstate(divide="ignore", invalid="ignore"):
            sn = s[act] - gv / slope
        bad = ~np.isfinite(sn) | (sn <= lo[act]) | (sn >= hi[act])
        sn[bad] = 0.5 * (lo[act][bad] + hi[act][bad])
        s[act] = sn
    return s, out_Y, w0 + out_dw, res, iters


# ---------------------------------------------------------------------------
# public operations


def integrate_trajectory(p: ScalarPotential, x0, t_end: float, cfg: FlowConfig | None = None) -> Trajectory:
    """Integrate the gradient flow from ``x0`` for signed time ``t_end``.

    Every accepted step is recorded.  Raises ``HittingError("horizon")`` with
    the partial trajectory when ``|t_end|`` exceeds the configured horizon.
    """
    p.require_smooth("integrate_trajectory")
    cfg = (cfg or FlowConfig()).resolved(p)
    x0 = np.asarray(x0, dtype=float)
    target = min(abs(t_end), cfg.t_max)
    direction = 1.0 if t_end >= 0 else -1.0
    b = _Batch(p, x0[None, :], direction, cfg)
    ts, Xs = [0.0], [x0.copy()]
    idx = np.array([0])
    while True:
        remaining = target - abs(b.t[0])
        if remaining <= 1e-15 * max(1.0, target):
            break
        b.step(idx, cap=np.array([remaining]))
        ts.append(b.t[0])
        Xs.append(b.X[0].copy())
    traj = Trajectory(x0, np.array(ts), np.array(Xs), int(b.steps[0]), int(b.rejected[0]))
    if abs(t_end) > cfg.t_max:
        raise HittingError("horizon", f"|t_end| = {abs(t_end)} exceeds t_max = {cfg.t_max}", trajectory=traj)
    return traj


def flow_map(p: ScalarPotential, points, t, cfg: FlowConfig | None = None) -> np.ndarray:
    """``X(t, x)`` for a batch of points; ``t`` is a scalar or one time per point."""
    p.require_smooth("flow_map")
    cfg = (cfg or FlowConfig()).resolved(p)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(pts),))
    b = _Batch(p, pts, np.where(t >= 0, 1.0, -1.0), cfg)
    target = np.abs(t)
    while True:
        remaining = target - np.abs(b.t)
        act = np.flatnonzero(remaining > 1e-15 * np.maximum(1.0, target))
        if act.size == 0:
            break
        b.step(act, cap=remaining[act])
    return b.X


def equipotential_hits(p: ScalarPotential, points, cfg: FlowConfig | None = None, level: float = 0.0):
    """Batched hitting of ``{u = level}``.

    Returns ``(tau, z, w, residual, iterations, status)`` where ``w`` is the
    integral of the Laplacian along the path from 0 to ``tau`` and ``status``
    is an array of strings (``"ok"``, ``"horizon"`` or ``"stagnation"``).
    """
    p.require_smooth("hitting_time_equipotential")
    cfg = (cfg or FlowConfig()).resolved(p)
    X0 = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(X0)
    u0 = p.value(X0) - level
    tau = np.zeros(n)
    z = X0.copy()
    w = np.zeros(n)
    res = np.abs(u0)
    iters = np.zeros(n, dtype=int)
    status = np.full(n, "ok", dtype=object)
    if cfg.m <= cfg.stagnation_floor:
        status[:] = "stagnation"
        return tau, z, w, res, iters, status
    active = np.abs(u0) > cfg.tol_root
    limit = cfg.t_max + np.abs(u0) / cfg.m
    b = _Batch(p, X0, -np.sign(u0), cfg)
    u_prev = u0.copy()
    goal = np.full(n, level)
    while active.any():
        idx = np.flatnonzero(active)
        Xp, wp, used = b.step(idx)
        u_new = p.value(b.X[idx]) - level
        crossed = (np.sign(u_new) != np.sign(u_prev[idx])) | (np.abs(u_new) <= cfg.tol_root)
        if crossed.any():
            ci = idx[crossed]
            s, Y, wz, r, it = _refine(p, Xp[crossed], wp[crossed], b.dir[ci], np.abs(used[crossed]),
                                      p.value, p.gradient, goal[ci], cfg.tol_root)
            tau[ci] = b.t[ci] - used[crossed] + s * b.dir[ci]
            z[ci] = Y
            w[ci] = wz
            res[ci] = r
            iters[ci] = b.steps[ci] + it
            active[ci] = False
        rest = idx[~crossed]
        u_prev[rest] = u_new[~crossed]
        over = rest[np.abs(b.t[rest]) > limit[rest]]
        status[over] = "horizon"
        active[over] = False
        g2 = np.sum(p.gradient(b.X[rest]) ** 2, axis=-1)
        stalled = rest[g2 < cfg.stagnation_floor]
        status[stalled] = "stagnation"
        active[stalled] = False
    failed = status != "ok"
    z[failed] = b.X[failed]
    tau[failed] = b.t[failed]
    return tau, z, w, res, iters, status


def hitting_time_equipotential(p: ScalarPotential, x, cfg: FlowConfig | None = None) -> HittingResult:
    """Time ``tau`` at which the trajectory through ``x`` meets ``{u = 0}``."""
    tau, z, w, res, it, status = equipotential_hits(p, np.asarray(x, dtype=float)[None, :], cfg)
    if status[0] != "ok":
        raise HittingError(status[0], f"equipotential not reached from {x}: {status[0]}", points=z)
    return HittingResult(float(tau[0]), z[0], float(res[0]), int(it[0]), w=float(w[0]))


def _plane_target(nu, offset):
    def target(X):
        return X @ nu - offset

    def grad(X):
        return np.broadcast_to(nu, X.shape)

    return target, grad


def hitting_hyperplane(p: ScalarPotential, H, x, cfg: FlowConfig | None = None) -> HittingResult:
    """Crossing of the trajectory through ``x`` with ``H = {y : y . nu = offset}``.

    Both time directions are scanned.  After the first crossing is found the
    scan continues for ``recross_window`` time units beyond it; any further
    sign change of ``X . nu - offset`` is reported as ``"multivalued"``.
    """
    p.require_smooth("hitting_hyperplane")
    cfg = (cfg or FlowConfig()).resolved(p)
    nu = np.asarray(H[0], dtype=float)
    nu = nu / np.linalg.norm(nu)
    offset = float(H[1]) / np.linalg.norm(np.asarray(H[0], dtype=float))
    target, tgrad = _plane_target(nu, offset)
    x = np.asarray(x, dtype=float)
    g0 = float(target(x[None, :])[0])

    b = _Batch(p, np.stack([x, x]), np.array([1.0, -1.0]), cfg)
    schedules = [[], []]
    g_prev = np.array([g0, g0])
    found = []  # (|tau|, direction index, tau, z, residual, iters, schedule, substep)
    stop = np.array([cfg.t_max, cfg.t_max])
    if abs(g0) <= cfg.tol_root:
        found.append((0.0, 0, 0.0, x.copy(), abs(g0), 0, [], 0.0))
        stop[:] = cfg.recross_window
    crossings = len(found)
    active = np.array([True, True])
    while active.any():
        idx = np.flatnonzero(active)
        Xp, wp, used = b.step(idx)
        g_new = target(b.X[idx])
        for k, i in enumerate(idx):
            schedules[i].append(float(used[k]))
            if np.sign(g_new[k]) != np.sign(g_prev[i]) and g_prev[i] != 0.0:
                crossings += 1
                s, Y, _, r, it = _refine(p, Xp[k:k + 1], wp[k:k + 1], b.dir[i:i + 1], np.abs(used[k:k + 1]),
                                         target, tgrad, np.zeros(1), cfg.tol_root)
                t_hit = b.t[i] - used[k] + s[0] * b.dir[i]
                found.append((abs(t_hit), i, float(t_hit), Y[0], float(r[0]), int(b.steps[i] + it[0]),
                              schedules[i][:-1], float(s[0] * b.dir[i])))
                window = min(abs(t_hit) + cfg.recross_window, cfg.t_max)
                stop = np.minimum(stop, window)
            g_prev[i] = g_new[k]
        active = np.abs(b.t) < stop
    if not found:
        raise HittingError("no-crossing", f"no crossing of the hyperplane within t_max = {cfg.t_max}",
                           points=b.X)
    if crossings > 1:
        raise HittingError("multivalued", f"{crossings} crossings of the hyperplane detected", points=b.X)
    _, _, t_hit, z, r, it, sched, sub = found[0]
    if abs(p.gradient(z) @ nu) <= cfg.transversality:
        raise HittingError("tangential", "gradient is tangential to the hyperplane at the crossing")
    return HittingResult(t_hit, z, r, it, crossings=crossings, schedule=sched, substep=sub)


def hyperplane_map(p: ScalarPotential, H, points, ref: HittingResult, cfg: FlowConfig | None = None) -> np.ndarray:
    """Hitting points ``z_H`` for points close to the reference start point.

    Every point is flowed with the reference step schedule, then a single
    RK4 substep of Newton-adjusted length lands it on ``H``.  Using one
    schedule makes the computed map smooth in the start point, which is what
    finite differencing needs.
    """
    cfg = (cfg or FlowConfig()).resolved(p)
    nu = np.asarray(H[0], dtype=float)
    scale = np.linalg.norm(nu)
    nu = nu / scale
    offset = float(H[1]) / scale
    Y = np.atleast_2d(np.asarray(points, dtype=float)).copy()
    for h in ref.schedule:
        Y, _ = _rk4(p, Y, np.full(len(Y), h))
    s = np.full(len(Y), ref.substep)
    for _ in range(50):
        Z, _ = _rk4(p, Y, s)
        g = Z @ nu - offset
        if np.all(np.abs(g) <= 1e-15 * max(1.0, abs(offset)) + 1e-16):
            break
        slope = p.gradient(Z) @ nu
        step = g / slope
        s = s - step
        if np.all(np.abs(step) <= 1e-17):
            break
    Z, _ = _rk4(p, Y, s)
    return Z


# quintic Hermite basis on [0, 1]
def _hermite5(s):
    s2, s3, s4, s5 = s * s, s**3, s**4, s**5
    return (
        1 - 10 * s3 + 15 * s4 - 6 * s5,
        s - 6 * s3 + 8 * s4 - 3 * s5,
        0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5,
        0.5 * s3 - s4 + 0.5 * s5,
        -4 * s3 + 7 * s4 - 3 * s5,
        10 * s3 - 15 * s4 + 6 * s5,
    )


_GL3_NODES = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GL3_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


def liouville_log_det(p: ScalarPotential, traj: Trajectory, rtol: float = 1e-8) -> float:
    """``log det D_x X(t, x) = int_0^t lap u(X(s, x)) ds`` along a stored trajectory.

    Positions inside each step come from quintic Hermite interpolation
    (``X' = grad u``, ``X'' = hess u grad u``); the integral uses 3-point
    Gauss-Legendre per step and Simpson's rule as the error estimate.
    """
    X = traj.X
    if len(X) < 2:
        return 0.0
    _, g, Hs = p.jet_fn(X)
    d1 = g
    d2 = np.einsum("nij,nj->ni", Hs, g)
    dt = np.diff(traj.t)
    lap_nodes = np.trace(Hs, axis1=-2, axis2=-1)

    def interp(s):
        b = _hermite5(s)
        h = dt[:, None]
        return (b[0] * X[:-1] + b[1] * h * d1[:-1] + b[2] * h * h * d2[:-1]
                + b[3] * h * h * d2[1:] + b[4] * h * d1[1:] + b[5] * X[1:])

    gl = np.zeros_like(dt)
    for s, wq in zip(_GL3_NODES, _GL3_WEIGHTS):
        gl += wq * p.laplacian(interp(s))
    gl *= dt
    simpson = dt * (lap_nodes[:-1] + 4.0 * p.laplacian(interp(0.5)) + lap_nodes[1:]) / 6.0
    total = float(gl.sum())
    err = float(np.abs(gl - simpson).sum())
    if err > rtol * max(1.0, abs(total)):
        raise RefinementRequired(f"Liouville quadrature error estimate {err:.2e} too large; refine the trajectory")
    return total
