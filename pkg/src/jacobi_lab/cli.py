"""Command line entry point.

Exit codes: 0 on success, 2 on invalid input, 3 on numerical degeneracy.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .glueing import glue, pair_lderivative
from .indices import LiftedPlane, kashiwara, leray, partition_index, positive_maslov
from .lderiv import jacobi_curve
from .linearization import BUILTINS, ProblemLinearization, builtin, lq, moving_frame
from .morse import conjugate_points, morse_verify
from .symplectic import (
    DimensionError,
    LinearSubspace,
    NumericalDegeneracy,
    SymplecticSpace,
    fiber_plane,
    is_lagrangian,
    plane_distance,
)

log = logging.getLogger("jacobi_lab")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
DEFAULT_GRID, SWEEP_GRID = 200, 64


class InputError(ValueError):
    """Malformed input file or arguments."""


@dataclass(frozen=True)
class RunConfig:
    command: str
    action: str
    problem_path: Optional[str] = None
    grid: int = DEFAULT_GRID
    t_max: Optional[float] = None
    tol: float = 1e-8
    seed: int = 0
    quadrature_order: int = 4
    output_path: Optional[str] = None
    format: str = "json"
    jobs: int = 1
    split: Optional[float] = None
    count: int = 50
    timing: bool = False

    def __post_init__(self):
        if self.grid < 1:
            raise InputError("grid must be at least 1")
        if not self.tol > 0:
            raise InputError("tol must be positive")
        if not 1 <= self.quadrature_order <= 10:
            raise InputError("quadrature order must lie in [1, 10]")
        if self.format not in ("json", "csv"):
            raise InputError("format must be json or csv")
        if self.t_max is not None and not self.t_max > 0:
            raise InputError("t-max must be positive")
        if self.jobs < 1:
            raise InputError("jobs must be at least 1")


# ------------------------------------------------------------------ input


def _matrix(value, what: str, shape=None) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f"{what}: expected a numeric matrix") from None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or not np.all(np.isfinite(arr)):
        raise InputError(f"{what}: expected a finite 2-D array")
    if shape is not None and arr.shape != shape:
        raise InputError(f"{what}: shape {arr.shape}, expected {shape}")
    return arr


def _field(value, what: str, shape):
    """Constant matrix or piecewise constant table {"times": [...], "values": [...]}."""
    if isinstance(value, dict):
        try:
            times = np.array(value["times"], dtype=float)
            values = [_matrix(v, f"{what} value", shape) for v in value["values"]]
        except KeyError as exc:
            raise InputError(f"{what}: table is missing {exc}") from None
        if times.ndim != 1 or len(values) != times.size or times.size == 0:
            raise InputError(f"{what}: times and values must have equal nonzero length")
        if np.any(np.diff(times) <= 0):
            raise InputError(f"{what}: table times must increase")
        stack = np.array(values)

        def sample(t, _times=times, _stack=stack):
            i = int(np.clip(np.searchsorted(_times, t, side="right") - 1, 0, _times.size - 1))
            return _stack[i]
        return sample
    return _matrix(value, what, shape)


def problem_from_dict(data: dict) -> ProblemLinearization:
    if not isinstance(data, dict):
        raise InputError("problem file must contain a JSON object")
    kind = data.get("type", "lq")
    T = float(data.get("T", 10.0))
    N0 = data.get("N0")
    try:
        if kind == "lq":
            missing = [key for key in ("A", "B", "W", "R") if key not in data]
            if missing:
                raise InputError(f"lq problem is missing {missing}")
            n = _matrix(data["A"], "A").shape[0]
            N0m = None if N0 is None else _matrix(N0, "N0").reshape(n, -1)
            return lq(data["A"], data["B"], data["W"], data["R"], T=T, N0=N0m,
                      name=str(data.get("name", "lq")))
        if kind == "builtin":
            return builtin(str(data.get("name")), T=T)
        if kind == "linear":
            n, k = int(data["n"]), int(data["k"])
            N0m = None if N0 is None else _matrix(N0, "N0").reshape(n, -1)
            P = data.get("P")
            return ProblemLinearization(
                n=n, k=k, C=_field(data["C"], "C", (2 * n, 2 * n)), D=_field(data["D"], "D", (2 * n, k)),
                b=_field(data["b"], "b", (k, k)), T=T, N0_tangent=N0m,
                P=None if P is None else _field(P, "P", (k, k)), name=str(data.get("name", "linear")))
    except KeyError as exc:
        raise InputError(f"problem is missing {exc}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None
    raise InputError(f"unknown problem type {kind!r}")


def load_problem(ref: Optional[str]) -> ProblemLinearization:
    """Problem from a JSON file or a built-in name."""
    if ref is None:
        raise InputError("--problem is required")
    if ref in BUILTINS and ref != "lq" and not Path(ref).exists():
        return builtin(ref)
    try:
        text = Path(ref).read_text()
    except OSError as exc:
        raise InputError(f"cannot read problem file: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed problem JSON: {exc}") from None
    return problem_from_dict(data)


def plane_from_json(obj, n: Optional[int] = None) -> LinearSubspace:
    if isinstance(obj, dict):
        n = int(obj.get("n", n or 0))
        basis = obj.get("basis")
    else:
        basis = obj
    arr = _matrix(basis, "plane basis")
    n = n or arr.shape[0] // 2
    if arr.shape[0] != 2 * n:
        raise InputError(f"plane basis needs {2 * n} rows")
    plane = LinearSubspace.span(SymplecticSpace(n), arr)
    if not is_lagrangian(plane, 1e-8):
        raise InputError("plane is not Lagrangian")
    return plane


def plane_to_json(plane: LinearSubspace) -> dict:
    return {"n": plane.space.n, "basis": _rounded(plane.basis)}


def _rounded(arr: np.ndarray):
    # fixed precision keeps repeated runs byte identical across BLAS paths
    return [[float(f"{x:.12e}") for x in row] for row in np.asarray(arr)]


# ---------------------------------------------------------------- commands


def _horizon(cfg: RunConfig, prob: ProblemLinearization) -> float:
    t = prob.T if cfg.t_max is None else cfg.t_max
    if t > prob.T * (1 + 1e-12):
        raise InputError(f"t-max {t} exceeds the problem horizon {prob.T}")
    return t


def _fields(cfg: RunConfig, prob: ProblemLinearization):
    t = _horizon(cfg, prob)
    return moving_frame(prob, np.linspace(0.0, t, cfg.grid + 1), cfg.quadrature_order)


def cmd_indices(cfg: RunConfig) -> dict:
    try:
        data = json.loads(Path(cfg.problem_path or "").read_text())
    except OSError as exc:
        raise InputError(f"cannot read index file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed index JSON: {exc}") from None
    op = data.get("op")
    planes = [plane_from_json(p) for p in data.get("planes", [])]
    if not planes:
        raise InputError("need at least one plane")
    pi = plane_from_json(data["pi"]) if "pi" in data else fiber_plane(planes[0].space)
    if op == "kashiwara":
        if len(planes) != 3:
            raise InputError("kashiwara needs three planes")
        value = kashiwara(*planes, tol=cfg.tol)
        return {"value": value, "halves": 2 * value}
    if op == "ind":
        if len(planes) < 2:
            raise InputError("ind needs at least two planes")
        if len(planes) == 2:
            h = positive_maslov(planes[0], pi, planes[1], cfg.tol)
        else:
            h = partition_index(planes, pi, cfg.tol)
        return {"value": h.value, "halves": h.doubled}
    if op == "leray":
        if len(planes) != 2:
            raise InputError("leray needs two planes")
        lifts = [int(v) for v in data.get("lifts", [0, 0])]
        value = leray(LiftedPlane(planes[0], lifts[0], pi), LiftedPlane(planes[1], lifts[1], pi), cfg.tol)
        return {"value": value, "halves": 2 * value}
    raise InputError(f"unknown index op {op!r}")


def cmd_jacobi(cfg: RunConfig) -> dict:
    prob = load_problem(cfg.problem_path)
    fields = _fields(cfg, prob)
    curve = jacobi_curve(fields, tol=cfg.tol)
    conj = conjugate_points(curve, fiber_plane(fields.space), cfg.tol)
    return {
        "times": [float(t) for t in curve.times],
        "planes": [plane_to_json(p) for p in curve.planes],
        "conjugate": [{"t": float(t), "mult": int(m)} for t, m in conj],
    }


def cmd_glue(cfg: RunConfig) -> dict:
    prob = load_problem(cfg.problem_path)
    t2 = _horizon(cfg, prob)
    t1 = t2 / 2 if cfg.split is None else cfg.split
    if not 0 < t1 < t2:
        raise InputError("split must lie strictly inside (0, t-max)")
    # split point placed on the grid, intervals shared proportionally
    n1 = max(1, min(cfg.grid - 1, int(round(cfg.grid * t1 / t2)))) if cfg.grid > 1 else 1
    grid = np.concatenate([np.linspace(0.0, t1, n1 + 1), np.linspace(t1, t2, max(cfg.grid - n1, 1) + 1)[1:]])
    fields = moving_frame(prob, grid, cfg.quadrature_order)
    p01 = pair_lderivative(fields, 0, n1)
    p12 = pair_lderivative(fields, n1, fields.intervals)
    p02 = pair_lderivative(fields)
    glued = glue(p01, p12)
    return {
        "split": float(t1), "t_max": float(t2),
        "pair_01": plane_to_json(p01.plane), "pair_12": plane_to_json(p12.plane),
        "pair_02": plane_to_json(p02.plane), "glued": plane_to_json(glued.plane),
        "residual": float(f"{plane_distance(glued.plane, p02.plane):.3e}"),
    }


def _report_dict(report, timing: bool) -> dict:
    out = report.as_dict()
    out["conjugate"] = [{"t": float(c["t"]), "mult": int(c["mult"])} for c in out["conjugate"]]
    if timing:
        out["timing"] = {k: float(v) for k, v in out["timing"].items()}
    else:
        out.pop("timing")
    return out


def cmd_morse_verify(cfg: RunConfig) -> dict:
    prob = load_problem(cfg.problem_path)
    report = morse_verify(_fields(cfg, prob), seed=cfg.seed, tol=cfg.tol)
    return _report_dict(report, cfg.timing)


def random_lq(seed) -> ProblemLinearization:
    """Seeded random LQ instance with n <= 3, k <= 2, R positive definite and random N0."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    k = int(rng.integers(1, 3))
    # moderate drift keeps the flow well conditioned over the horizon
    A = 0.25 * rng.standard_normal((n, n))
    B = rng.standard_normal((n, k))
    W = 0.5 * rng.standard_normal((n, n))
    W = 0.5 * (W + W.T)
    G = rng.standard_normal((k, k))
    R = G @ G.T / k + 0.5 * np.eye(k)
    d = int(rng.integers(0, n + 1))
    N0 = rng.standard_normal((n, d)) if d else None
    T = float(rng.uniform(1.0, 10.0))
    return lq(A, B, W, R, T=T, N0=N0, name="random_lq")


def _sweep_one(args):
    seed, grid, order, tol, lift_seed = args
    prob = random_lq(seed)
    fields = moving_frame(prob, np.linspace(0.0, prob.T, grid + 1), order)
    try:
        report = morse_verify(fields, seed=lift_seed, tol=tol)
    except NumericalDegeneracy as exc:
        return {"instance": int(seed.spawn_key[-1]), "error": str(exc)}
    out = _report_dict(report, False)
    out["instance"] = int(seed.spawn_key[-1])
    out["n"], out["k"] = prob.n, prob.k
    return out


def cmd_morse_sweep(cfg: RunConfig) -> dict:
    root = np.random.SeedSequence(cfg.seed)
    children = root.spawn(cfg.count)
    lift_seeds = [int(c.generate_state(1)[0]) for c in root.spawn(cfg.count)]
    jobs = [(c, cfg.grid, cfg.quadrature_order, cfg.tol, s) for c, s in zip(children, lift_seeds)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    agree = sum(1 for r in results if "error" not in r
                and r["indices"]["piecewise"] == r["indices"]["leray"] == r["indices"]["brute_force"])
    return {"instances": results, "agree": agree, "count": cfg.count}


def cmd_problems(cfg: RunConfig) -> dict:
    out = {}
    for name in sorted(BUILTINS):
        if name == "lq":
            continue
        prob = builtin(name)
        out[name] = {"n": prob.n, "k": prob.k, "T": prob.T}
    return {"problems": out}


COMMANDS = {
    ("indices", "compute"): cmd_indices,
    ("jacobi", "run"): cmd_jacobi,
    ("glue", "demo"): cmd_glue,
    ("morse", "verify"): cmd_morse_verify,
    ("morse", "sweep"): cmd_morse_sweep,
    ("problems", "list"): cmd_problems,
}


# ----------------------------------------------------------------- output


def _csv_rows(result: dict):
    if "conjugate" in result and "indices" not in result:
        yield ["t", "mult"]
        for c in result["conjugate"]:
            yield [repr(c["t"]), c["mult"]]
    elif "indices" in result:
        yield ["piecewise", "leray", "brute_force", "kernel_brute", "kernel_curve", "certificate"]
        ind, ker = result["indices"], result["kernel"]
        yield [ind["piecewise"], ind["leray"], ind["brute_force"], ker["brute_force"], ker["curve"],
               result["certificate"]]
        yield []
        yield ["t", "mult"]
        for c in result["conjugate"]:
            yield [repr(c["t"]), c["mult"]]
    elif "instances" in result:
        yield ["instance", "piecewise", "leray", "brute_force", "kernel_brute", "kernel_curve"]
        for r in result["instances"]:
            if "error" in r:
                yield [r["instance"], "", "", "", "", ""]
            else:
                yield [r["instance"], *r["indices"].values(), *r["kernel"].values()]
    elif "value" in result:
        yield ["value", "halves"]
        yield [result["value"], result["halves"]]
    else:
        raise InputError("this command has no CSV form; use --format json")


def render(result: dict, cfg: RunConfig) -> str:
    if cfg.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for row in _csv_rows(result):
            writer.writerow(row)
        return buf.getvalue()
    payload = {"config": asdict(cfg), "result": result}
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def run(cfg: RunConfig) -> int:
    handler = COMMANDS.get((cfg.command, cfg.action))
    try:
        if handler is None:
            raise InputError(f"unknown command {cfg.command} {cfg.action}")
        text = render(handler(cfg), cfg)
        if cfg.output_path:
            Path(cfg.output_path).write_text(text)
        else:
            sys.stdout.write(text)
    except (InputError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalDegeneracy as exc:
        print(f"numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jacobi-lab", description="Jacobi curves, Maslov indices and Morse counts.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", help="problem JSON file, built-in name, or index JSON for 'indices'")
    common.add_argument("--grid", type=int, default=None,
                        help=f"number of partition intervals (default {DEFAULT_GRID}, {SWEEP_GRID} for sweeps)")
    common.add_argument("--t-max", type=float, default=None, help="end time (defaults to the horizon)")
    common.add_argument("--tol", type=float, default=1e-8)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--quadrature-order", type=int, default=4)
    common.add_argument("--output", "--report", dest="output", default=None)
    common.add_argument("--format", choices=["json", "csv"], default="json")
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--timing", action="store_true", help="include wall-clock timing in reports")
    sub = parser.add_subparsers(dest="command", required=True)

    ind = sub.add_parser("indices", parents=[common], help="Kashiwara, positive Maslov and Leray indices")
    ind.set_defaults(action="compute")
    jac = sub.add_parser("jacobi").add_subparsers(dest="action", required=True)
    jac.add_parser("run", parents=[common], help="Jacobi curve and conjugate points")
    gl = sub.add_parser("glue").add_subparsers(dest="action", required=True)
    demo = gl.add_parser("demo", parents=[common], help="glue pair planes across a split time")
    demo.add_argument("--split", type=float, default=None)
    mo = sub.add_parser("morse").add_subparsers(dest="action", required=True)
    mo.add_parser("verify", parents=[common], help="three independent Morse index computations")
    sweep = mo.add_parser("sweep", parents=[common], help="Morse checks on seeded random LQ instances")
    sweep.add_argument("--count", type=int, default=50)
    pr = sub.add_parser("problems", parents=[common], help="list built-in problems")
    pr.set_defaults(action="list")
    return parser


def _default_grid(args) -> int:
    if args.grid is not None:
        return args.grid
    return SWEEP_GRID if (args.command, args.action) == ("morse", "sweep") else DEFAULT_GRID


def _configure_logging() -> None:
    level = os.environ.get("JACOBI_LAB_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = RunConfig(command=args.command, action=args.action, problem_path=args.problem,
                        grid=_default_grid(args), t_max=args.t_max, tol=args.tol, seed=args.seed,
                        quadrature_order=args.quadrature_order, output_path=args.output,
                        format=args.format, jobs=args.jobs, split=getattr(args, "split", None),
                        count=getattr(args, "count", 50), timing=args.timing)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    log.info("running %s %s", cfg.command, cfg.action)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
