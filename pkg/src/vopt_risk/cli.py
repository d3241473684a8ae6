"""Command-line front end: ``vopt-risk generate|solve|verify|export``.

One JSON configuration file drives every command; command-line flags
override the matching configuration keys. Keys:

``instance``
    Instance file (written by ``generate``, read by ``solve`` and ``verify``).
``result``
    Result file (written by ``solve``, read by ``verify`` and ``export``).
``output``
    Target of ``export`` (``.svg`` for two objectives, ``.off`` stem for three).
``portfolio``
    Generator block: ``J``, ``I``, ``capital``, ``returns``, ``transaction``, ``rng_seed``.
``risk``
    ``{"kind": "cvar", "nu": [...]}`` or ``{"kind": "entropic", "delta": [...]}``,
    optionally with ``cone_generators`` or ``dual_cone_generators``.
``algorithm``, ``backend``, ``epsilon``, ``max_iter``, ``bundle``, ``plot``,
``rng_seed``, ``threads``, ``trace``
    Solver settings; ``bundle`` overrides :class:`BundleParams` fields.

Exit status is 0 on success, 1 when ``verify`` finds a failed check and 2 on
any error; errors are reported as a JSON record on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .benson import (CheckResult, SandwichReport, VectorSolveResult, WeakSolutionSet,
                     build_approximations, dual_benson, dual_box_halfspaces, image_recession_rays,
                     primal_benson, verify_sandwich)
from .bundle import BundleParams
from .model import (PortfolioSpec, TwoStageProblem, generate_portfolio, instance_hash,
                    problem_from_dict, save_problem)
from .polyhedra import Polyhedron
from .risk import RiskMeasure, make_risk
from .scalarization import ScalarizationError, solve_p1_direct

log = logging.getLogger(__name__)

COMMANDS = ("generate", "solve", "verify", "export")
_CONFIG_KEYS = {"command", "instance", "result", "output", "portfolio", "risk", "algorithm",
                "backend", "epsilon", "max_iter", "bundle", "plot", "rng_seed", "threads",
                "trace", "verify_tol"}
_PORTFOLIO_KEYS = {"J", "I", "capital", "theta", "returns", "transaction", "rng_seed"}
_RISK_KEYS = {"kind", "nu", "delta", "cone_generators", "dual_cone_generators"}
_BUNDLE_KEYS = {f.name for f in fields(BundleParams)} - {"trace"}


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class RunConfig:
    """Validated settings of one CLI run."""

    command: str
    instance: Optional[str] = None
    result: Optional[str] = None
    output: Optional[str] = None
    portfolio: dict = field(default_factory=dict)
    risk: Optional[dict] = None
    algorithm: str = "dual"
    backend: str = "auto"
    epsilon: float = 1e-3
    max_iter: int = 1000
    bundle: dict = field(default_factory=dict)
    plot: bool = False
    rng_seed: Optional[int] = None
    threads: int = 1
    trace: Optional[str] = None
    verify_tol: Optional[float] = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.algorithm not in ("primal", "dual"):
            raise ConfigError(f"algorithm must be primal or dual, got {self.algorithm!r}")
        if self.backend not in ("direct", "bundle", "auto"):
            raise ConfigError(f"backend must be direct, bundle or auto, got {self.backend!r}")
        if not (isinstance(self.epsilon, (int, float)) and self.epsilon > 0):
            raise ConfigError("epsilon must be positive")
        if int(self.threads) < 1:
            raise ConfigError("threads must be at least 1")
        for key in ("instance", "result", "output", "trace"):
            val = getattr(self, key)
            if val is not None and not str(val).strip():
                raise ConfigError(f"path {key!r} must be nonempty")
        _reject_unknown(self.portfolio, _PORTFOLIO_KEYS, "portfolio")
        _reject_unknown(self.bundle, _BUNDLE_KEYS, "bundle")
        if self.risk is not None:
            _reject_unknown(self.risk, _RISK_KEYS, "risk")
        needs = {"generate": ("instance",), "solve": ("instance", "result"),
                 "verify": ("instance", "result"), "export": ("result",)}[self.command]
        for key in needs:
            if getattr(self, key) is None:
                raise ConfigError(f"command {self.command!r} needs the {key!r} path")
        if self.command == "export" and self.output is None:
            self.output = str(Path(self.result).with_suffix(".svg"))

    def bundle_params(self) -> BundleParams:
        return BundleParams(trace=self.trace, **self.bundle)


def _reject_unknown(block, allowed: set, name: str) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{name} block must be an object")
    extra = set(block) - allowed
    if extra:
        raise ConfigError(f"unknown {name} keys {sorted(extra)}")


def load_config(path: Optional[str], command: str, overrides: dict) -> RunConfig:
    """Merge a JSON configuration file with command-line overrides."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config file: {exc}") from exc
        _reject_unknown(data, _CONFIG_KEYS, "config")
    data = dict(data)
    data.update({k: v for k, v in overrides.items() if v is not None})
    data["command"] = command
    return RunConfig(**data)


# --------------------------------------------------------------------------
# risk and instance plumbing
# --------------------------------------------------------------------------


def risk_from_dict(block: dict) -> RiskMeasure:
    _reject_unknown(block, _RISK_KEYS, "risk")
    kind = str(block.get("kind", "")).lower()
    key = {"cvar": "nu", "entropic": "delta"}.get(kind)
    if key is None:
        raise ConfigError(f"unknown risk kind {block.get('kind')!r}")
    if key not in block:
        raise ConfigError(f"risk kind {kind!r} needs {key!r}")
    params = [float(v) for v in block[key]]
    cone = block.get("cone_generators")
    dual = block.get("dual_cone_generators")
    to_arr = (lambda g: None if g is None else np.array(g, float))
    return make_risk(kind, params, to_arr(cone), to_arr(dual))


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed JSON in {path}: {exc}") from exc


def load_instance(cfg: RunConfig) -> tuple[TwoStageProblem, RiskMeasure, dict]:
    """Instance from file; the config's risk block wins over the one stored with the instance."""
    data = _read_json(cfg.instance)
    block = cfg.risk if cfg.risk is not None else data.get("risk")
    if block is None:
        raise ConfigError("no risk block in the config or the instance file")
    return problem_from_dict(data), risk_from_dict(block), block


def _spec_from_block(block: dict, seed: Optional[int]) -> PortfolioSpec:
    block = dict(block)
    if seed is not None:
        block["rng_seed"] = seed
    if "returns" in block:
        block["returns"] = tuple(tuple(r) for r in block["returns"])
    if "transaction" in block:
        trans = {}
        for key, rng in block["transaction"].items():
            j, k = (int(s) for s in str(key).split(","))
            trans[(j, k)] = tuple(rng)
        block["transaction"] = trans
    return PortfolioSpec(**block)


# --------------------------------------------------------------------------
# result files
# --------------------------------------------------------------------------


def _poly_dict(P: Polyhedron) -> dict:
    return {"dim": P.dim, "V": {"points": P.vertices.tolist(), "rays": P.rays.tolist(), "lines": P.lines.tolist()},
            "H": {"A": P.A.tolist(), "b": P.b.tolist()}}


def result_to_dict(result: VectorSolveResult, problem: TwoStageProblem, risk_block: dict,
                   backend: str) -> dict:
    sol = result.solution_set
    stats = {k: (float(v) if isinstance(v, (np.floating, float)) else v)
             for k, v in result.stats.items()}
    return {
        "instance_hash": instance_hash(problem),
        "epsilon": result.epsilon,
        "algorithm": result.algorithm,
        "backend": backend,
        "risk": risk_block,
        "Z": [{"x": e["x"].tolist(), "y": e["y"].tolist(), "z": e["z"].tolist()}
              for e in sol.entries],
        "W": [{"w": r["w"].tolist(), "P1": r["P1"]} for r in sol.weights],
        "P_in": _poly_dict(result.P_in),
        "P_out": _poly_dict(result.P_out),
        "D_in": _poly_dict(result.D_in),
        "D_out": _poly_dict(result.D_out),
        "stats": stats,
        "flagged": bool(result.flagged),
    }


def solution_set_from_dict(data: dict) -> WeakSolutionSet:
    sol = WeakSolutionSet()
    for e in data["Z"]:
        sol.entries.append({"x": np.array(e["x"], float), "y": np.array(e["y"], float),
                            "z": np.array(e["z"], float)})
    for r in data["W"]:
        sol.weights.append({"w": np.array(r["w"], float), "P1": float(r["P1"])})
    return sol


def _write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_generate(cfg: RunConfig) -> int:
    spec = _spec_from_block(cfg.portfolio, cfg.rng_seed)
    problem = generate_portfolio(spec)
    save_problem(problem, cfg.instance, risk=cfg.risk)
    print(json.dumps({"instance": cfg.instance, "instance_hash": instance_hash(problem),
                      "dims": problem.dims()}))
    return 0


def cmd_solve(cfg: RunConfig) -> int:
    problem, R, block = load_instance(cfg)
    algo = primal_benson if cfg.algorithm == "primal" else dual_benson
    result = algo(problem, R, cfg.epsilon, backend=cfg.backend, bundle_params=cfg.bundle_params(),
                  max_iter=cfg.max_iter)
    data = result_to_dict(result, problem, block, result.stats.get("backend", cfg.backend))
    data["stats"]["threads"] = int(cfg.threads)
    _write_json(cfg.result, data)
    report = verify_sandwich(result, problem=problem, R=R)
    print(report)
    print(json.dumps({"result": cfg.result, "vertices": data["stats"]["vertices"],
                      "scalar_solves": data["stats"]["scalar_solves"], "flagged": data["flagged"]}))
    if cfg.plot:
        export_result(data, cfg.output or str(Path(cfg.result).with_suffix(".svg")))
    return 0


def verify_result(problem: TwoStageProblem, R: RiskMeasure, data: dict,
                  tol: Optional[float] = None) -> SandwichReport:
    """Re-check a result file from the instance and the stored data alone.

    Memberships are re-evaluated from the stored decisions, ``P1`` is re-solved
    with the direct backend at every stored weight (stored values are lower
    bounds, so they may not exceed the recomputed optimum) and the four
    approximations are rebuilt from the stored points and weights.
    """
    eps = float(data["epsilon"])
    if tol is None:
        tol = 1e-7 + float(data.get("stats", {}).get("max_gap", 0.0))
    checks = []
    if data.get("instance_hash") != instance_hash(problem):
        checks.append(CheckResult("instance hash matches", False, float("nan")))
    sol = solution_set_from_dict(data)
    recession = image_recession_rays(R)
    box = dual_box_halfspaces(R)
    approx = build_approximations(sol, recession, box)
    rebuilt = VectorSolveResult(approx["P_in"], approx["P_out"], approx["D_in"], approx["D_out"],
                                sol, eps, data.get("algorithm", "?"), recession, box,
                                {"max_gap": tol - 1e-7})
    report = verify_sandwich(rebuilt, eps, problem=problem, R=R, tol=tol)
    checks.extend(report.checks)
    worst = -np.inf
    for r in sol.weights:
        try:
            ref = solve_p1_direct(problem, R, r["w"]).value
        except ScalarizationError as exc:
            checks.append(CheckResult("stored P1 values are valid lower bounds", False,
                                      float("nan"), f"({exc})"))
            break
        worst = max(worst, r["P1"] - ref)
    else:
        checks.append(CheckResult("stored P1 values are valid lower bounds", bool(worst <= tol),
                                  float(worst), f"({len(sol.weights)} weights)"))
    stored = np.array(data["P_out"]["V"]["points"], float)
    V = approx["P_out"].vertices
    same = stored.shape == V.shape and (V.size == 0 or all(
        np.min(np.abs(V - s).max(axis=1)) <= 1e-6 * (1 + np.abs(s).max()) for s in stored))
    checks.append(CheckResult("stored outer vertices match the rebuild", bool(same),
                              float(abs(stored.shape[0] - V.shape[0]))))
    return SandwichReport(checks, eps, tol)


def cmd_verify(cfg: RunConfig) -> int:
    problem, R, _ = load_instance(cfg)
    data = _read_json(cfg.result)
    report = verify_result(problem, R, data, cfg.verify_tol)
    print(report)
    return 0 if report.passed else 1


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------


def _clip(P: Polyhedron, upper: np.ndarray) -> Polyhedron:
    Q = P
    for j in range(upper.size):
        e = np.zeros(upper.size)
        e[j] = -1.0
        Q = Q.add_halfspace(e, -float(upper[j]))
    return Q


def _polygon(P: Polyhedron) -> np.ndarray:
    """Vertices of a bounded 2D polygon in counter-clockwise order."""
    V = P.vertices
    c = V.mean(axis=0)
    ang = np.arctan2(V[:, 1] - c[1], V[:, 0] - c[0])
    return V[np.argsort(ang)]


def _faces(P: Polyhedron, tol: float = 1e-7) -> tuple[np.ndarray, list]:
    """Vertices and ordered facets of a bounded 3D polytope."""
    V = P.vertices
    faces = []
    seen = set()
    for a, b in zip(P.A, P.b):
        idx = np.flatnonzero(np.abs(V @ a - b) <= tol * (1 + abs(b)))
        if idx.size < 3 or tuple(idx) in seen:
            continue
        seen.add(tuple(idx))
        pts = V[idx]
        c = pts.mean(axis=0)
        n = a / np.linalg.norm(a)
        e1 = pts[0] - c
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        ang = np.arctan2((pts - c) @ e2, (pts - c) @ e1)
        order = idx[np.argsort(ang)]
        faces.append(order[::-1].tolist())  # outward normal is -a
    return V, faces


def _bounding_upper(*arrays) -> np.ndarray:
    pts = np.vstack([a for a in arrays if a.size])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return hi + 0.25 * np.maximum(hi - lo, 1e-3)


def _poly_from_dict(block: dict) -> Polyhedron:
    A = np.array(block["H"]["A"], float)
    b = np.array(block["H"]["b"], float)
    return Polyhedron(A.reshape(-1, int(block["dim"])), b)


def _svg(inner: np.ndarray, outer: np.ndarray, Z: np.ndarray, size: int = 480) -> str:
    pts = np.vstack([inner, outer, Z])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    pad = 20

    def tr(P):
        X = pad + (P[:, 0] - lo[0]) / span[0] * (size - 2 * pad)
        Y = size - pad - (P[:, 1] - lo[1]) / span[1] * (size - 2 * pad)
        return np.column_stack([X, Y])

    def polyline(P, colour):
        P = tr(np.vstack([P, P[:1]]))
        coords = " ".join(f"{x:.3f},{y:.3f}" for x, y in P)
        return f'<polyline points="{coords}" fill="none" stroke="{colour}" stroke-width="1.5"/>'

    parts = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}">',
             polyline(outer, "#c0392b"), polyline(inner, "#2c3e50")]
    for x, y in tr(Z):
        parts.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="2.5" fill="#2c3e50"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _off(V: np.ndarray, faces: list) -> str:
    lines = ["OFF", f"{V.shape[0]} {len(faces)} 0"]
    lines += [" ".join(f"{v:.12g}" for v in row) for row in V]
    lines += [" ".join(map(str, [len(f)] + f)) for f in faces]
    return "\n".join(lines) + "\n"


def export_result(data: dict, output: str) -> list[str]:
    """Render the inner and outer approximations of the upper image.

    Both are clipped by a common box above all vertices. Two objectives give
    one SVG (outer and inner polylines plus the attained points); three give
    two OFF meshes ``<stem>_outer.off`` and ``<stem>_inner.off``.
    """
    P_in, P_out = _poly_from_dict(data["P_in"]), _poly_from_dict(data["P_out"])
    Z = np.array([e["z"] for e in data["Z"]], float)
    J = Z.shape[1]
    upper = _bounding_upper(Z, P_out.vertices, P_in.vertices)
    inner, outer = _clip(P_in, upper), _clip(P_out, upper)
    if J == 2:
        Path(output).write_text(_svg(_polygon(inner), _polygon(outer), Z))
        return [output]
    if J == 3:
        stem = Path(output).with_suffix("")
        paths = []
        for name, P in (("outer", outer), ("inner", inner)):
            path = f"{stem}_{name}.off"
            Path(path).write_text(_off(*_faces(P)))
            paths.append(path)
        return paths
    raise ValueError(f"export supports two or three objectives, got {J}")


def cmd_export(cfg: RunConfig) -> int:
    data = _read_json(cfg.result)
    paths = export_result(data, cfg.output)
    print(json.dumps({"written": paths}))
    return 0


_DISPATCH = {"generate": cmd_generate, "solve": cmd_solve, "verify": cmd_verify, "export": cmd_export}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vopt-risk", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON configuration file")
    ap.add_argument("--epsilon", type=float)
    ap.add_argument("--algorithm", choices=("primal", "dual"))
    ap.add_argument("--backend", choices=("direct", "bundle", "auto"))
    ap.add_argument("--threads", type=int)
    ap.add_argument("--trace", help="JSON-lines file receiving bundle iteration records")
    ap.add_argument("--instance")
    ap.add_argument("--result")
    ap.add_argument("--output")
    ap.add_argument("--rng-seed", dest="rng_seed", type=int)
    ap.add_argument("--max-iter", dest="max_iter", type=int)
    ap.add_argument("--plot", action="store_true", default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = load_config(args.config, args.command, overrides)
        return _DISPATCH[cfg.command](cfg)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
