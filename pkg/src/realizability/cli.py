"""Command-line entry point.

Examples::

    realizability realize-iso --potential drift_cosine --box -0.25 -0.25 0.25 0.25 --n 64 --out out/iso
    realizability check-torus --potential monotone_1d --out out/torus
    realizability check-laminate --laminate spec.json --out out/lam
    realizability verify --field out/iso/field.csv --out out/verify

Every command writes ``summary.json`` (config, config hash, package
versions, result) into ``--out``.  Exit status 0 means a verdict was
produced, whatever it is; ``verify`` returns 2 on fail and 3 when
inconclusive.  Operational failures exit 1 with an error JSON on stdout.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import iso, laminate, matrix, planar, verify
from .errors import HittingError, RealizabilityError
from .fields import TensorConductivityField
from .flow import FlowConfig, integrate_trajectory
from .grids import midpoint_grid
from .potentials import potential_from_config, vector_potential_from_config

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

COMMANDS = (
    "realize-iso",
    "realize-hyperplane",
    "realize-planar",
    "realize-matrix",
    "check-torus",
    "check-laminate",
    "trajectories",
    "verify",
)
DEFAULT_TOL = 1e-6
EXIT_OK, EXIT_ERROR, EXIT_FAIL, EXIT_INCONCLUSIVE = 0, 1, 2, 3


@dataclass
class RunConfig:
    command: str
    potential: dict | None = None
    partner: dict | None = None
    vector: dict | None = None
    weight: list | None = None
    laminate: dict | str | None = None
    box: list | None = None
    n: int = 32
    flow: dict = field(default_factory=dict)
    out: str = "out"
    seed: int = 0
    options: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if int(self.n) <= 0:
            raise ValueError("grid size n must be positive")
        if self.box is not None:
            lo, hi = self.box
            if len(lo) != len(hi) or any(a > b for a, b in zip(lo, hi)):
                raise ValueError(f"malformed box {self.box}")
        if isinstance(self.laminate, str) and not Path(self.laminate).exists():
            raise FileNotFoundError(f"laminate spec {self.laminate} not found")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def flow_config(self) -> FlowConfig:
        return FlowConfig(**self.flow)


def load_config_file(path) -> dict:
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    return json.loads(path.read_text())


def _named(name, params):
    if name is None:
        return None
    return {"name": name, "params": json.loads(params) if params else {}}


def _box(values):
    if values is None:
        return None
    if len(values) % 2:
        raise ValueError("--box takes lo_1 .. lo_d hi_1 .. hi_d")
    k = len(values) // 2
    return [list(values[:k]), list(values[k:])]


def config_from_args(args) -> RunConfig:
    data = load_config_file(args.config) if args.config else {}
    data["command"] = args.command
    flags = {
        "potential": _named(args.potential, args.params),
        "partner": _named(args.partner, args.partner_params),
        "vector": _named(args.vector, args.vector_params),
        "weight": json.loads(args.weight) if args.weight else None,
        "laminate": args.laminate,
        "box": _box(args.box),
        "n": args.n,
        "out": args.out,
        "seed": args.seed,
    }
    for key, val in flags.items():
        if val is not None:
            data[key] = val
    flow = dict(data.get("flow", {}))
    if args.h is not None:
        flow["h"] = args.h
    if args.t_max is not None:
        flow["t_max"] = args.t_max
    data["flow"] = flow
    opts = dict(data.get("options", {}))
    for key in ("tol", "radii", "samples", "plane", "points", "count", "t_end", "field"):
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = json.loads(val) if key in ("plane", "points") else val
    data["options"] = opts
    unknown = set(data) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    cfg = RunConfig(**data)
    cfg.validate()
    return cfg


def _versions() -> dict:
    return {"realizability": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def _clean(obj):
    """Make numpy scalars/arrays JSON-safe."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _require(cfg: RunConfig, key: str):
    val = getattr(cfg, key)
    if val is None:
        raise ValueError(f"{cfg.command} needs '{key}'")
    return val


def _lo_hi(cfg: RunConfig, d: int):
    if cfg.box is None:
        return np.zeros(d), np.ones(d)
    lo, hi = (np.asarray(b, dtype=float) for b in cfg.box)
    if lo.size != d:
        raise ValueError(f"box has dimension {lo.size}, expected {d}")
    return lo, hi


def _residual_verdict(report: verify.ResidualReport, tol: float) -> str:
    if not np.all(np.isfinite(report.weak)):
        return "inconclusive"
    return "pass" if report.passed(tol) else "fail"


# ---------------------------------------------------------------------------
# commands; each returns (result dict, exit code)


def run_realize_iso(cfg: RunConfig, out: Path):
    p = potential_from_config(_require(cfg, "potential"))
    lo, hi = _lo_hi(cfg, p.dimension)
    fld = iso.conductivity_field(p, lo, hi, cfg.n, cfg.flow_config())
    fld.meta.update(kind="iso", n=cfg.n, config_hash=cfg.digest())
    fld.write(out / "field.csv", out / "field.json")
    pts = fld.points
    # the residual is scale invariant, so shift w to keep exp finite
    J = np.exp(fld.w - fld.w.max())[..., None] * p.gradient(pts)
    tol = float(cfg.options.get("tol", DEFAULT_TOL))
    rep = verify.weak_divergence_residual(J, lo, hi, cfg.n)
    _write_json(out / "residual.json", rep.to_dict())
    return {"w_min": float(fld.w.min()), "w_max": float(fld.w.max()), "residual": rep.to_dict(),
            "tol": tol, "verdict": _residual_verdict(rep, tol)}, EXIT_OK


def run_realize_hyperplane(cfg: RunConfig, out: Path):
    p = potential_from_config(_require(cfg, "potential"))
    plane = cfg.options.get("plane", {"normal": [1.0] + [0.0] * (p.dimension - 1), "offset": 0.0})
    H = (np.asarray(plane["normal"], dtype=float), float(plane.get("offset", 0.0)))
    frame = plane.get("frame")
    if "points" in cfg.options:
        pts = np.asarray(cfg.options["points"], dtype=float).reshape(-1, p.dimension)
    else:
        lo, hi = _lo_hi(cfg, p.dimension)
        pts = midpoint_grid(lo, hi, cfg.n)[0].reshape(-1, p.dimension)
    flow = cfg.flow_config()
    rows, statuses = [], {}
    for x in pts:
        try:
            s = iso.hyperplane_conductivity(p, H, x, flow, frame=frame)
            rows.append((x, s, float(np.log(s)), "ok"))
        except RealizabilityError as exc:
            rows.append((x, float("nan"), float("nan"), exc.kind))
        statuses[rows[-1][3]] = statuses.get(rows[-1][3], 0) + 1
    with open(out / "hyperplane.csv", "w") as fh:
        fh.write(",".join([f"x_{i + 1}" for i in range(p.dimension)] + ["sigma_H", "log_sigma_H", "status"]) + "\n")
        for x, s, ls, st in rows:
            fh.write(",".join([repr(float(v)) for v in x] + [repr(s), repr(ls), st]) + "\n")
    return {"points": len(rows), "status_counts": statuses, "plane": plane}, EXIT_OK


def _planar_pair(cfg: RunConfig):
    u = potential_from_config(_require(cfg, "potential"))
    v = potential_from_config(_require(cfg, "partner"))
    return planar.PlanarPair(u, v)


def run_realize_planar(cfg: RunConfig, out: Path):
    pair = _planar_pair(cfg)
    lo, hi = _lo_hi(cfg, 2)
    orient = planar.orientation_condition(pair)
    result = {"orientation_min_det": orient.min_det, "orientation_positive": orient.positive}
    if not orient.positive:
        result["verdict"] = "orientation condition fails"
        return result, EXIT_OK
    fld = planar.planar_field(pair, lo, hi, cfg.n)
    fld.meta.update(kind="planar", n=cfg.n, config_hash=cfg.digest())
    fld.write(out / "field.csv", out / "field.json")
    pts = fld.points
    J = np.einsum("...ij,...j->...i", fld.sigma, pair.u.gradient(pts))
    tol = float(cfg.options.get("tol", DEFAULT_TOL))
    rep = verify.weak_divergence_residual(J, lo, hi, cfg.n, interfaces=pair.interfaces)
    _write_json(out / "residual.json", rep.to_dict())
    result.update(
        stream_residual=planar.stream_consistency_check(pair, pts, fld.sigma),
        field=fld.summary(),
        residual=rep.to_dict(),
        tol=tol,
        verdict=_residual_verdict(rep, tol),
    )
    return result, EXIT_OK


def run_realize_matrix(cfg: RunConfig, out: Path):
    U = vector_potential_from_config(_require(cfg, "vector"))
    weight = matrix.ConvexWeight(None if cfg.weight is None else np.asarray(cfg.weight, dtype=float))
    lo, hi = _lo_hi(cfg, U.dimension)
    fld = matrix.matrix_field(U, lo, hi, cfg.n, weight)
    fld.meta.update(kind="matrix", n=cfg.n, config_hash=cfg.digest())
    fld.write(out / "field.csv", out / "field.json")
    J = fld.sigma @ U.jacobian(fld.points)
    tol = float(cfg.options.get("tol", DEFAULT_TOL))
    rep = verify.weak_divergence_residual(J, lo, hi, cfg.n)
    _write_json(out / "residual.json", rep.to_dict())
    piola = matrix.piola_residual(U, lo, hi, cfg.n)
    return {"field": fld.summary(), "piola": piola.to_dict(), "residual": rep.to_dict(), "tol": tol,
            "verdict": _residual_verdict(rep, tol)}, EXIT_OK


def run_check_torus(cfg: RunConfig, out: Path):
    p = potential_from_config(_require(cfg, "potential"))
    radii = cfg.options.get("radii", [0.5, 1.0, 2.0, 4.0, 8.0])
    samples = int(cfg.options.get("samples", 128))
    v = iso.torus_boundedness_check(p, radii, samples, cfg.flow_config(), seed=cfg.seed)
    _write_json(out / "torus.json", v.to_dict())
    return v.to_dict(), EXIT_OK


def run_check_laminate(cfg: RunConfig, out: Path):
    src = _require(cfg, "laminate")
    spec = laminate.LaminateSpec.load(src) if isinstance(src, str) else laminate.LaminateSpec.from_dict(src)
    rep = laminate.laminate_realizability(spec).to_dict()
    _write_json(out / "laminate_report.json", rep)
    reason = ", ".join(rep["reasons"]) if rep["reasons"] else None
    return {"verdict": rep["verdict"], "reason": reason}, EXIT_OK


def run_trajectories(cfg: RunConfig, out: Path):
    p = potential_from_config(_require(cfg, "potential"))
    if "points" in cfg.options:
        pts = np.asarray(cfg.options["points"], dtype=float).reshape(-1, p.dimension)
    else:
        lo, hi = _lo_hi(cfg, p.dimension)
        rng = np.random.default_rng(cfg.seed)
        pts = rng.uniform(lo, hi, size=(int(cfg.options.get("count", 4)), p.dimension))
    t_end = float(cfg.options.get("t_end", 1.0))
    flow = cfg.flow_config()
    records = []
    for i, x in enumerate(pts):
        name = f"trajectory_{i:03d}.csv"
        try:
            tr = integrate_trajectory(p, x, t_end, flow)
            tr.write_csv(out / name)
            records.append({"start": x, "file": name, "steps": tr.steps, "end": tr.end, "status": "ok"})
        except HittingError as exc:
            if exc.trajectory is not None:
                exc.trajectory.write_csv(out / name)
            records.append({"start": x, "file": name, "status": exc.kind})
    return {"t_end": t_end, "trajectories": records}, EXIT_OK


def run_verify(cfg: RunConfig, out: Path):
    src = Path(cfg.options.get("field", ""))
    if not src.is_file():
        raise FileNotFoundError(f"field {src} not found")
    head_path = src.with_suffix(".json")
    head = json.loads(head_path.read_text())
    kind = head.get("kind")
    n = head.get("n")
    tol = float(cfg.options.get("tol", DEFAULT_TOL))
    if kind == "iso":
        fld = iso.ScalarConductivityField.read(src, head_path)
        p = potential_from_config(head["potential"])
        interfaces = ()
        J = np.exp(fld.w - fld.w.max())[..., None] * p.gradient(fld.points)
    elif kind == "planar":
        fld = TensorConductivityField.read(src, head_path)
        u = potential_from_config(head["u"])
        v = potential_from_config(head["v"])
        interfaces = planar.PlanarPair(u, v).interfaces
        J = np.einsum("...ij,...j->...i", fld.sigma, u.gradient(fld.points))
    elif kind == "matrix":
        fld = TensorConductivityField.read(src, head_path)
        U = vector_potential_from_config(head["U"])
        interfaces = ()
        J = fld.sigma @ U.jacobian(fld.points)
    else:
        raise ValueError(f"unknown field kind {kind!r}")
    lo, hi = np.asarray(head["box"][0], dtype=float), np.asarray(head["box"][1], dtype=float)
    grid = midpoint_grid(lo, hi, n, interfaces)[0]
    if grid.shape != fld.points.shape or not np.allclose(grid, fld.points, rtol=0, atol=1e-12):
        raise ValueError("stored sample points do not match the declared grid")
    rep = verify.weak_divergence_residual(J, lo, hi, n, interfaces=interfaces)
    _write_json(out / "residual.json", rep.to_dict())
    verdict = _residual_verdict(rep, tol)
    code = {"pass": EXIT_OK, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}[verdict]
    return {"kind": kind, "residual": rep.to_dict(), "tol": tol, "verdict": verdict}, code


RUNNERS = {
    "realize-iso": run_realize_iso,
    "realize-hyperplane": run_realize_hyperplane,
    "realize-planar": run_realize_planar,
    "realize-matrix": run_realize_matrix,
    "check-torus": run_check_torus,
    "check-laminate": run_check_laminate,
    "trajectories": run_trajectories,
    "verify": run_verify,
}


def dispatch(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    result, code = RUNNERS[cfg.command](cfg, out)
    summary = {
        "command": cfg.command,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "versions": _versions(),
        "result": result,
    }
    _write_json(out / "summary.json", summary)
    print(json.dumps(_clean({"command": cfg.command, "verdict": result.get("verdict"), "out": str(out)})))
    return code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML run config; flags override it")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--box", nargs="+", type=float, metavar="X", help="lo_1 .. lo_d hi_1 .. hi_d")
    common.add_argument("--n", type=int, help="cells per axis")
    common.add_argument("--h", type=float, help="initial flow step")
    common.add_argument("--t-max", type=float, dest="t_max")
    common.add_argument("--tol", type=float, help="weak residual tolerance")
    common.add_argument("--potential", help="catalog potential u")
    common.add_argument("--params", help="JSON parameters for --potential")
    common.add_argument("--partner", help="catalog potential v (planar)")
    common.add_argument("--partner-params", dest="partner_params")
    common.add_argument("--vector", help="catalog vector potential U")
    common.add_argument("--vector-params", dest="vector_params")
    common.add_argument("--weight", help="JSON matrix B of the convex weight")
    common.add_argument("--laminate", help="laminate spec JSON file")

    ap = argparse.ArgumentParser(prog="realizability", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("realize-iso", parents=[common], help="isotropic conductivity field from the flow")
    hp = sub.add_parser("realize-hyperplane", parents=[common], help="hyperplane first-integral conductivity")
    hp.add_argument("--plane", help='JSON {"normal": [...], "offset": c}')
    hp.add_argument("--points", help="JSON list of points")
    sub.add_parser("realize-planar", parents=[common], help="anisotropic planar conductivity from (u, v)")
    sub.add_parser("realize-matrix", parents=[common], help="cofactor conductivity for DU")
    tp = sub.add_parser("check-torus", parents=[common], help="boundedness test of log conductivity")
    tp.add_argument("--radii", nargs="+", type=float)
    tp.add_argument("--samples", type=int)
    sub.add_parser("check-laminate", parents=[common], help="realizability of a laminate spec")
    jp = sub.add_parser("trajectories", parents=[common], help="export flow trajectories as CSV")
    jp.add_argument("--points", help="JSON list of start points")
    jp.add_argument("--count", type=int, help="random start points in --box")
    jp.add_argument("--t-end", type=float, dest="t_end")
    vp = sub.add_parser("verify", parents=[common], help="re-run residuals on an exported field")
    vp.add_argument("--field", help="field CSV written by a realize command")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return dispatch(cfg)
    except RealizabilityError as exc:
        err = exc.to_dict()
    except (KeyError, ValueError, TypeError, FileNotFoundError, json.JSONDecodeError,
            tomllib.TOMLDecodeError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc).strip("'\"")}
    print(json.dumps(err, sort_keys=True))
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
