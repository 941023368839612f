"""Rank-n laminates: specification trees, rank-one checks and realizability.

A laminate node stacks its children in layers normal to ``xi`` at length
scale ``eps_k``; adjacent layers of a field laminate must be rank-one
connected, ``P - Q = xi (x) eta``.  For leaves with ``det P > 0`` the
conductivity ``det(P) P^-T P^-1`` has current ``sigma P = Cof(P)``, whose
normal component ``Cof(P)^T xi`` is continuous across such interfaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DeterminantSignError, LaminateSpecError, NotRankOneError
from .matrix import cofactor

RANK_TOL = 1e-10
PARALLEL_TOL = 1e-8
THETA_SUM_TOL = 1e-12


@dataclass
class Leaf:
    """Constant field value ``P`` (``kind="field"``) or conductivity (``kind="sigma"``)."""

    value: np.ndarray
    kind: str = "field"

    def __post_init__(self):
        self.value = np.atleast_2d(np.asarray(self.value, dtype=float))
        if self.kind not in ("field", "sigma"):
            raise LaminateSpecError(f"unknown leaf kind {self.kind!r}")


@dataclass
class Child:
    theta: float
    item: "Leaf | LaminateNode"


@dataclass
class LaminateNode:
    xi: np.ndarray
    scale: int
    children: list = field(default_factory=list)

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)


@dataclass
class LaminateSpec:
    root: "Leaf | LaminateNode"

    def __post_init__(self):
        problems = _validate(self.root, "root", 0, None)
        if problems:
            err = LaminateSpecError("; ".join(problems))
            err.problems = problems
            raise err

    @property
    def dimension(self) -> int:
        return next(self.leaves())[1].value.shape[-1]

    def leaves(self):
        """Yield ``(path, leaf)`` in layer order."""
        yield from _leaves(self.root, "root")

    def to_dict(self) -> dict:
        return _to_dict(self.root)

    @classmethod
    def from_dict(cls, data: dict) -> "LaminateSpec":
        return cls(_from_dict(data, "root"))

    @classmethod
    def load(cls, path) -> "LaminateSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _leaves(item, path):
    if isinstance(item, Leaf):
        yield path, item
        return
    for i, ch in enumerate(item.children):
        yield from _leaves(ch.item, f"{path}/{i}")


def _validate(item, path, parent_scale, dim):
    problems = []
    if isinstance(item, Leaf):
        v = item.value
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            problems.append(f"{path}: leaf must be a square matrix")
        elif dim is not None and v.shape[0] != dim:
            problems.append(f"{path}: leaf dimension {v.shape[0]} != {dim}")
        return problems
    if not isinstance(item, LaminateNode):
        return [f"{path}: expected a leaf or a node"]
    if not item.children:
        problems.append(f"{path}: node has no children")
    if item.xi.ndim != 1 or not np.all(np.isfinite(item.xi)) or np.linalg.norm(item.xi) == 0.0:
        problems.append(f"{path}: direction must be a nonzero vector")
    elif dim is not None and item.xi.size != dim:
        problems.append(f"{path}: direction has dimension {item.xi.size} != {dim}")
    if item.scale <= parent_scale:
        problems.append(f"{path}: scale index {item.scale} must exceed the parent's {parent_scale}")
    thetas = [c.theta for c in item.children]
    if any(t <= 0 for t in thetas):
        problems.append(f"{path}: volume fractions must be positive")
    if thetas and abs(sum(thetas) - 1.0) > THETA_SUM_TOL:
        problems.append(f"{path}: volume fractions sum to {sum(thetas)}")
    d = dim if dim is not None else (item.xi.size if item.xi.ndim == 1 else None)
    for i, ch in enumerate(item.children):
        problems += _validate(ch.item, f"{path}/{i}", item.scale, d)
    return problems


def _to_dict(item) -> dict:
    if isinstance(item, Leaf):
        return {"leaf": {"P" if item.kind == "field" else "sigma": item.value.tolist()}}
    kids = []
    for ch in item.children:
        entry = _to_dict(ch.item)
        kids.append({"theta": ch.theta, **entry})
    return {"node": {"xi": item.xi.tolist(), "scale": item.scale, "children": kids}}


def _from_dict(data, path):
    if not isinstance(data, dict):
        raise LaminateSpecError(f"{path}: expected an object")
    if "leaf" in data:
        leaf = data["leaf"]
        if isinstance(leaf, dict):
            if "P" in leaf:
                return Leaf(leaf["P"], "field")
            if "sigma" in leaf:
                return Leaf(leaf["sigma"], "sigma")
            raise LaminateSpecError(f"{path}: leaf needs 'P' or 'sigma'")
        return Leaf(leaf, "field")
    node = data.get("node", data)
    try:
        xi, scale, children = node["xi"], int(node["scale"]), node["children"]
    except (KeyError, TypeError, ValueError) as exc:
        raise LaminateSpecError(f"{path}: malformed node ({exc})") from None
    kids = []
    for i, ch in enumerate(children):
        if "theta" not in ch:
            raise LaminateSpecError(f"{path}/{i}: missing theta")
        kids.append(Child(float(ch["theta"]), _from_dict(ch, f"{path}/{i}")))
    return LaminateNode(xi, scale, kids)


def node_average(item) -> np.ndarray:
    """Volume-weighted average of the leaves below ``item``."""
    if isinstance(item, LaminateSpec):
        item = item.root
    if isinstance(item, Leaf):
        return item.value.copy()
    return sum(ch.theta * node_average(ch.item) for ch in item.children)


@dataclass
class RankOneConnection:
    xi: np.ndarray | None
    eta: np.ndarray
    residual: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "xi": None if self.xi is None else self.xi.tolist(),
            "eta": self.eta.tolist(),
            "residual": self.residual,
            "degenerate": self.degenerate,
        }


def check_rank_one(P, Q, tol: float = RANK_TOL) -> RankOneConnection:
    """Write ``P - Q = xi (x) eta`` with ``|xi| = 1``.

    Raises ``NotRankOneError`` when the second singular value of ``P - Q``
    exceeds ``tol`` times the first.  ``P == Q`` gives the degenerate
    connection with ``eta = 0`` and no direction.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise ValueError("P and Q must have the same shape")
    D = P - Q
    scale = max(np.linalg.norm(P), np.linalg.norm(Q), 1.0)
    U, s, Vt = np.linalg.svd(D)
    if s[0] <= 1e-14 * scale:
        return RankOneConnection(None, np.zeros(D.shape[1]), float(s[0]), degenerate=True)
    if len(s) > 1 and s[1] > tol * s[0]:
        raise NotRankOneError(f"P - Q has singular values {s.tolist()}")
    xi = U[:, 0]
    eta = s[0] * Vt[0]
    k = int(np.argmax(np.abs(xi)))
    if xi[k] < 0:
        xi, eta = -xi, -eta
    return RankOneConnection(xi, eta, float(np.linalg.norm(D - np.outer(xi, eta))))


def jump_residual(P, Q, xi) -> float:
    """``|(Cof P - Cof Q)^T xi|``."""
    return float(np.linalg.norm((cofactor(P) - cofactor(Q)).T @ np.asarray(xi, dtype=float)))


def quasi_affinity_check(P, Q, theta: float) -> float:
    """Frobenius norm of ``theta Cof P + (1 - theta) Cof Q - Cof(theta P + (1 - theta) Q)``."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    lhs = theta * cofactor(P) + (1 - theta) * cofactor(Q)
    return float(np.linalg.norm(lhs - cofactor(theta * P + (1 - theta) * Q)))


def laminate_sigma(leaves):
    """``det(P) P^-T P^-1`` for each field value; one matrix in, one out."""
    single = np.ndim(leaves) == 2
    mats = [np.asarray(leaves, dtype=float)] if single else [np.asarray(P, dtype=float) for P in leaves]
    out = []
    for i, P in enumerate(mats):
        det = np.linalg.det(P)
        if det <= 0:
            raise DeterminantSignError(f"determinant positivity: leaf {i} has det {det:.6g} <= 0")
        K = np.linalg.inv(P)
        S = det * K.T @ K
        out.append(0.5 * (S + S.T))
    return out[0] if single else out


def conductivity_spec(spec: LaminateSpec) -> LaminateSpec:
    """Same tree with every field leaf replaced by its conductivity."""

    def convert(item):
        if isinstance(item, Leaf):
            return item if item.kind == "sigma" else Leaf(laminate_sigma(item.value), "sigma")
        return LaminateNode(item.xi, item.scale, [Child(c.theta, convert(c.item)) for c in item.children])

    return LaminateSpec(convert(spec.root))


def _pairs(k: int):
    pairs = [(i, i + 1) for i in range(k - 1)]
    if k > 2:
        pairs.append((k - 1, 0))
    return pairs


@dataclass
class LaminateReport:
    verdict: str
    reasons: list
    leaves: list
    interfaces: list
    root_average: np.ndarray

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "reasons": self.reasons,
            "leaves": self.leaves,
            "interfaces": self.interfaces,
            "root_average": self.root_average.tolist(),
            "root_average_minus_identity": float(np.linalg.norm(self.root_average - np.eye(len(self.root_average)))),
        }


def laminate_realizability(spec: LaminateSpec) -> LaminateReport:
    """Check leaf determinants, rank-one connections and cofactor jumps.

    Within each node, consecutive children and the wrap-around pair are
    compared; sub-laminates enter through their averages.
    """
    leaves = []
    for path, leaf in spec.leaves():
        if leaf.kind != "field":
            raise LaminateSpecError(f"{path}: realizability needs field leaves, got a conductivity")
        det = float(np.linalg.det(leaf.value))
        leaves.append({"path": path, "det": det, "positive": det > 0})
    interfaces = []
    _interfaces(spec.root, "root", interfaces)
    reasons = []
    if not all(entry["positive"] for entry in leaves):
        reasons.append("determinant positivity")
    if not all(entry["rank_one"] and entry["parallel"] for entry in interfaces):
        reasons.append("rank-one connection")
    if not all(entry["jump_ok"] for entry in interfaces):
        reasons.append("jump condition")
    verdict = "not realizable" if reasons else "realizable"
    return LaminateReport(verdict, reasons, leaves, interfaces, node_average(spec.root))


def _interfaces(item, path, out):
    if isinstance(item, Leaf):
        return
    xi = item.xi / np.linalg.norm(item.xi)
    avgs = [node_average(ch.item) for ch in item.children]
    for i, j in _pairs(len(avgs)):
        P, Q = avgs[i], avgs[j]
        entry = {"node": path, "pair": [i, j]}
        try:
            conn = check_rank_one(P, Q)
            entry["rank_one"] = True
            entry["connection"] = conn.to_dict()
            entry["parallel"] = bool(conn.degenerate or abs(abs(conn.xi @ xi) - 1.0) <= PARALLEL_TOL)
        except NotRankOneError as exc:
            entry["rank_one"] = False
            entry["parallel"] = False
            entry["connection"] = str(exc)
        jr = jump_residual(P, Q, xi)
        scale = max(1.0, np.linalg.norm(cofactor(P)), np.linalg.norm(cofactor(Q)))
        entry["jump_residual"] = jr
        entry["jump_ok"] = bool(jr <= RANK_TOL * scale)
        out.append(entry)
    for k, ch in enumerate(item.children):
        _interfaces(ch.item, f"{path}/{k}", out)


def evaluate_laminate_field(spec: LaminateSpec, x, epsilons) -> np.ndarray:
    """Leaf value at the point(s) ``x``.

    A node of scale ``k`` picks its child from the fractional part of
    ``x . xi / eps_k`` against the cumulative fractions; ``epsilons[k - 1]``
    is the length of scale ``k``.
    """
    eps = np.asarray(epsilons, dtype=float)
    if np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ValueError("epsilons must be positive and strictly decreasing")
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, x.shape[-1])
    d = spec.dimension
    out = np.empty((len(flat), d, d))
    _fill(spec.root, flat, np.arange(len(flat)), eps, out)
    return out.reshape(x.shape[:-1] + (d, d))


def _fill(item, X, idx, eps, out):
    if isinstance(item, Leaf):
        out[idx] = item.value
        return
    if item.scale > len(eps):
        raise ValueError(f"no length given for scale {item.scale}")
    s = np.mod(X[idx] @ (item.xi / np.linalg.norm(item.xi)) / eps[item.scale - 1], 1.0)
    edges = np.cumsum([0.0] + [c.theta for c in item.children])
    which = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, len(item.children) - 1)
    for k, ch in enumerate(item.children):
        sel = idx[which == k]
        if sel.size:
            _fill(ch.item, X, sel, eps, out)
