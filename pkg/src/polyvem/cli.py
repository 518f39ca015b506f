"""Command-line front end: meshes, solves, element diagnostics, studies.

Exit codes: 0 success, 2 usage, 3 validation, 4 solver failure,
5 assertion failure. Acceptance checks run as shell invocations of the
``convergence`` command with ``--assert-slope``; the library itself
never asserts rates.

Artifacts: with ``--out`` results go to files and the human summary to
stdout; without it the artifact itself goes to stdout and the summary
moves to stderr. Every JSON artifact embeds the run configuration under
``"run_config"``. Mesh files keep the two-key vertices/cells format, so
their configuration echo lives on stdout instead. Convergence runs also
render figures next to the delimited output unless ``--no-figure``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass

import numpy as np

from .element import (ElementConfig, ElementError, build_element,
                      dump_matrices)
from .mesh import (MESH_KINDS, MeshError, PolygonalMesh, audit_quality,
                   generate_mesh, load_mesh, save_mesh)
from .poly import space_dim
from .system import SolverError, assemble, solve
from .verify import (CASE_NAMES, builtin_case, compute_errors,
                     run_convergence)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_SOLVER = 4
EXIT_ASSERTION = 5

RANK_RTOL = 1e-10  # singular values below RANK_RTOL * sigma_max are zero


@dataclass
class RunConfig:
    """Echo of one invocation, embedded in every JSON artifact."""

    command: str
    options: dict

    @classmethod
    def from_args(cls, command: str, args: argparse.Namespace) -> "RunConfig":
        options = {}
        for key in sorted(vars(args)):
            if key in ("func", "command"):
                continue
            value = getattr(args, key)
            if isinstance(value, tuple):
                value = list(value)
            elif isinstance(value, np.ndarray):
                value = value.tolist()
            options[key] = value
        return cls(command, options)

    def to_dict(self) -> dict:
        return {"command": self.command, **self.options}


def _echo(run: RunConfig, stream) -> None:
    print("run-config: " + json.dumps(run.to_dict(), sort_keys=True),
          file=stream)


def _write_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ----------------------------------------------------------- arg helpers


def _parse_domain(text: str) -> tuple[float, float, float, float]:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(
            f"domain wants x0,y0,x1,y1, got {text!r}")
    x0, y0, x1, y1 = (float(v) for v in parts)
    if x1 <= x0 or y1 <= y0:
        raise argparse.ArgumentTypeError(f"empty domain {text!r}")
    return (x0, y0, x1, y1)


def _parse_levels(text: str) -> tuple[int, ...]:
    try:
        levels = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}")
    return levels


def _parse_assert_slope(text: str) -> tuple[int, float, float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"assert-slope wants s:value:tol, got {text!r}")
    try:
        return (int(parts[0]), float(parts[1]), float(parts[2]))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"assert-slope wants s:value:tol, got {text!r}")


def _parse_polygon(text: str) -> np.ndarray:
    rows = []
    for chunk in text.split(";"):
        parts = chunk.split(",")
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(
                f"polygon wants x,y;x,y;... got chunk {chunk!r}")
        rows.append((float(parts[0]), float(parts[1])))
    if len(rows) < 3:
        raise argparse.ArgumentTypeError("polygon needs at least 3 vertices")
    return np.array(rows)


def _element_config(args, parser: argparse.ArgumentParser) -> ElementConfig:
    try:
        return ElementConfig(args.p, args.r, args.t,
                             orthonormalize=args.orthonormalize,
                             scale_mode=args.scale_mode)
    except ElementError as exc:
        parser.error(str(exc))


def _add_order_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--p", type=int, required=True,
                     help="conformity order (C^{p-1} elements)")
    sub.add_argument("--r", type=int, required=True,
                     help="polynomial degree, r >= 2p-1")
    sub.add_argument("--t", type=int, default=0,
                     help="operator reduction, 0 <= t <= p-1")
    sub.add_argument("--orthonormalize", action="store_true",
                     help="orthonormalized polynomial basis in projections")
    sub.add_argument("--scale-mode", choices=("hv", "hp"), default="hv",
                     help="vertex dof scaling: per-vertex or per-cell")


# ------------------------------------------------------------- commands


def cmd_mesh(args, parser: argparse.ArgumentParser) -> int:
    run = RunConfig.from_args("mesh", args)
    try:
        mesh = generate_mesh(args.kind, args.n, domain=args.domain,
                             seed=args.seed)
    except MeshError as exc:
        print(f"mesh validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    audit = audit_quality(mesh)
    if args.out:
        save_mesh(mesh, args.out)
        _echo(run, sys.stdout)
        print(audit.summary())
        print(f"wrote {args.out}")
    else:
        _echo(run, sys.stderr)
        print(audit.summary(), file=sys.stderr)
        json.dump({"vertices": [[float(x), float(y)]
                                for x, y in mesh.vertices],
                   "cells": [list(c) for c in mesh.cells]}, sys.stdout)
        sys.stdout.write("\n")
    return EXIT_OK


def _load_or_generate_mesh(args, parser) -> PolygonalMesh:
    if args.mesh:
        try:
            return load_mesh(args.mesh)
        except FileNotFoundError:
            parser.error(f"mesh file not found: {args.mesh}")
    return generate_mesh(args.kind, args.n, domain=args.domain,
                         seed=args.seed)


def cmd_solve(args, parser: argparse.ArgumentParser) -> int:
    run = RunConfig.from_args("solve", args)
    config = _element_config(args, parser)
    try:
        mesh = _load_or_generate_mesh(args, parser)
        case = builtin_case(args.p, args.r, args.t, args.case)
    except (MeshError, ValueError) as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        system = assemble(mesh, config, case.f, threads=args.threads)
        u, report = solve(system)
    except SolverError as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    errors = compute_errors(mesh, config, case, u)
    payload = {
        "run_config": run.to_dict(),
        "config": asdict(config),
        "mesh": {"path": args.mesh, "kind": None if args.mesh else args.kind,
                 "n": None if args.mesh else args.n,
                 "n_cells": mesh.n_cells},
        "solution": u.tolist(),
        "report": report.to_dict(),
        "errors": errors.to_dict(),
    }
    summary = (f"h={errors.h:.6e} dofs={errors.n_dofs} "
               + " ".join(f"e{s}={e:.6e}"
                          for s, e in enumerate(errors.errors)))
    stream = sys.stdout if args.out else sys.stderr
    _echo(run, stream)
    print(summary, file=stream)
    _write_json(payload, args.out)
    if args.out:
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_convergence(args, parser: argparse.ArgumentParser) -> int:
    run = RunConfig.from_args("convergence", args)
    config = _element_config(args, parser)
    if len(args.levels) < 3:
        parser.error(f"need at least 3 refinement levels, got {args.levels}")
    if any(b <= a for a, b in zip(args.levels, args.levels[1:])):
        parser.error(f"levels must be strictly increasing: {args.levels}")
    try:
        case = builtin_case(args.p, args.r, args.t, args.case)
    except ValueError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    table = run_convergence(config, case, mesh_kind=args.kind,
                            levels=args.levels, seed=args.seed,
                            threads=args.threads)

    csv_text = table.csv_text()
    payload = table.json_dict()
    payload["run_config"] = run.to_dict()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv_text)
        json_path = _sibling(args.out, ".json")
        _write_json(payload, json_path)
        written = [args.out, json_path]
        if not args.no_figure:
            from .plots import convergence_figure
            fig_path = convergence_figure(table, _sibling(args.out, ".png"))
            if fig_path:
                written.append(fig_path)
        _echo(run, sys.stdout)
        print(table.summary())
        print("wrote " + " ".join(written))
    else:
        _echo(run, sys.stderr)
        print(table.summary(), file=sys.stderr)
        sys.stdout.write(csv_text)

    if table.failure is not None:
        print(f"solver failed: {table.failure}", file=sys.stderr)
        return EXIT_SOLVER
    stream = sys.stdout if args.out else sys.stderr
    return _check_slope_assertions(args.assert_slope, table, stream)


def _sibling(path: str, suffix: str) -> str:
    stem = path[:-4] if path.endswith(".csv") else path
    return stem + suffix


def _check_slope_assertions(checks, table, stream) -> int:
    if not checks:
        return EXIT_OK
    fitted = table.fitted_slopes()
    failed = False
    for s, target, tol in checks:
        if fitted is None or s >= len(fitted):
            print(f"assert-slope {s}:{target}:{tol}: no fitted slope "
                  f"for order {s}", file=stream)
            failed = True
            continue
        got = fitted[s]
        ok = np.isfinite(got) and abs(got - target) <= tol
        status = "ok" if ok else "FAILED"
        print(f"assert-slope e{s}: got {got:.4f}, want {target} +- {tol}: "
              f"{status}", file=stream)
        failed = failed or not ok
    return EXIT_ASSERTION if failed else EXIT_OK


_SHAPES = {
    "square": np.array([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]),
    "hexagon": np.array([(np.cos(k * np.pi / 3.0), np.sin(k * np.pi / 3.0))
                         for k in range(6)]),
    "pentagon": np.array([(0.0, 0.0), (1.1, -0.1), (1.6, 0.8),
                          (0.6, 1.4), (-0.3, 0.9)]),
}


def _rank(mat: np.ndarray) -> int:
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > RANK_RTOL * sv[0]))


def _form_kernel_dim(p_eff: int, r: int) -> int:
    # kernel of the order-2*p_eff form on P_r: for even powers the
    # (p_eff/2)-harmonic polynomials, for odd powers those plus the
    # radial solution of the constant-laplacian equation
    k = p_eff // 2
    dim = space_dim(r) - space_dim(r - 2 * k)
    if p_eff % 2 == 1:
        dim += 1
    return dim


def cmd_element_info(args, parser: argparse.ArgumentParser) -> int:
    run = RunConfig.from_args("element-info", args)
    config = _element_config(args, parser)
    polygon = args.polygon if args.polygon is not None else _SHAPES[args.shape]
    try:
        ws = build_element(config, polygon)
    except ElementError as exc:
        print(f"element build failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    n = ws.layout.n_dofs
    rank_d = _rank(ws.D)
    rank_k = _rank(ws.K)
    n_poly = space_dim(config.r)
    preservation = float(np.abs(ws.Pi_poly @ ws.D - np.eye(n_poly)).max())
    idempotency = float(np.abs(ws.Pi_dof @ ws.Pi_dof - ws.Pi_dof).max())

    _echo(run, sys.stdout)
    print(f"dofs={n}, rank(D)={rank_d}, rank(K)={rank_k}")
    print(f"dim P_r={n_poly}, expected rank(K)="
          f"{n - _form_kernel_dim(config.p_eff, config.r)}")
    print(f"polynomial-preservation residual: {preservation:.3e}")
    print(f"idempotency residual: {idempotency:.3e}")
    print(f"sigma={ws.sigma:.6e}")

    if args.out:
        payload = {
            "run_config": run.to_dict(),
            "config": asdict(config),
            "n_dofs": n,
            "rank_D": rank_d,
            "rank_K": rank_k,
            "preservation_residual": preservation,
            "idempotency_residual": idempotency,
            "sigma": ws.sigma,
            "matrices": dump_matrices(ws),
        }
        _write_json(payload, args.out)
        print(f"wrote {args.out}")

    if rank_d != n_poly:
        print(f"rank failure: rank(D)={rank_d} != dim P_r={n_poly}",
              file=sys.stderr)
        return EXIT_VALIDATION
    if rank_k != n - _form_kernel_dim(config.p_eff, config.r):
        print(f"rank failure: rank(K)={rank_k}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


# --------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyvem",
        description="Conforming virtual elements for polyharmonic problems.")
    subs = parser.add_subparsers(dest="command", required=True)

    mesh_p = subs.add_parser("mesh", help="generate and audit a mesh")
    mesh_p.add_argument("--kind", choices=MESH_KINDS, default="square-grid")
    mesh_p.add_argument("--n", type=int, default=4,
                        help="subdivisions per side")
    mesh_p.add_argument("--seed", type=int, default=0)
    mesh_p.add_argument("--domain", type=_parse_domain,
                        default=(0.0, 0.0, 1.0, 1.0))
    mesh_p.add_argument("--out", default=None, help="mesh JSON path")
    mesh_p.set_defaults(func=cmd_mesh)

    solve_p = subs.add_parser("solve", help="solve one manufactured case")
    _add_order_flags(solve_p)
    solve_p.add_argument("--case", choices=CASE_NAMES, default="poly-bubble")
    solve_p.add_argument("--mesh", default=None, help="mesh JSON to load")
    solve_p.add_argument("--kind", choices=MESH_KINDS, default="square-grid")
    solve_p.add_argument("--n", type=int, default=4)
    solve_p.add_argument("--seed", type=int, default=0)
    solve_p.add_argument("--domain", type=_parse_domain,
                         default=(0.0, 0.0, 1.0, 1.0))
    solve_p.add_argument("--threads", type=int, default=None)
    solve_p.add_argument("--out", default=None, help="solution JSON path")
    solve_p.set_defaults(func=cmd_solve)

    conv_p = subs.add_parser("convergence", help="refinement study")
    _add_order_flags(conv_p)
    conv_p.add_argument("--case", choices=CASE_NAMES, default="poly-bubble")
    conv_p.add_argument("--kind", choices=MESH_KINDS, default="square-grid")
    conv_p.add_argument("--levels", type=_parse_levels, default=(4, 8, 16, 32),
                        help="comma-separated subdivision counts")
    conv_p.add_argument("--seed", type=int, default=0)
    conv_p.add_argument("--threads", type=int, default=None)
    conv_p.add_argument("--out", default=None,
                        help="CSV path; JSON and PNG go next to it")
    conv_p.add_argument("--no-figure", action="store_true",
                        help="skip the PNG next to the CSV")
    conv_p.add_argument("--assert-slope", type=_parse_assert_slope,
                        action="append", dest="assert_slope", default=[],
                        metavar="S:VALUE:TOL",
                        help="fail (exit 5) unless fitted slope of e_S "
                             "is VALUE within TOL; repeatable")
    conv_p.set_defaults(func=cmd_convergence)

    info_p = subs.add_parser("element-info",
                             help="single-element diagnostics")
    _add_order_flags(info_p)
    info_p.add_argument("--shape", choices=sorted(_SHAPES), default="square")
    info_p.add_argument("--polygon", type=_parse_polygon, default=None,
                        metavar="X,Y;X,Y;...",
                        help="explicit vertex list, overrides --shape")
    info_p.add_argument("--out", default=None, help="diagnostics JSON path")
    info_p.set_defaults(func=cmd_element_info)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, parser)
    except SystemExit as exc:
        if exc.code is None:
            return EXIT_OK
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
