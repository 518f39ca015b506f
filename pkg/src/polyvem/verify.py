"""Manufactured solutions, error norms, and convergence studies.

Errors are always measured against the cellwise polynomial projection of
the discrete solution. Virtual functions are only known through their
dofs, so the projection is the computable surrogate; the reported
quantities are the broken seminorms

    e_s = (sum_P |u - Pi u_h|_{s,P}^2)^{1/2},   s = 0 .. p_eff,

integrated with quadrature of degree >= 2r + 2 on every cell.

Sign convention: the assembled bilinear form is positive definite, so the
strong operator it discretizes is (-lap)^{p_eff}. Builtin cases therefore
pair u with f = (-1)^{p_eff} lap^{p_eff} u; with the unsigned power the
solver would converge to -u whenever p_eff is odd.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .element import ElementConfig, build_element, cell_geometry_from_mesh
from .mesh import generate_mesh
from .poly import Poly2, laplacian_power, mi_position, multi_indices, space_dim
from .quad import polygon_rule
from .system import GlobalDofMap, SolveReport, SolverError, assemble, solve

log = logging.getLogger(__name__)

CASE_NAMES = ("poly-bubble", "trig", "zero")


# ---------------------------------------------------------------- solutions

class PolynomialSolution:
    """Exact solution that is a polynomial in global coordinates."""

    def __init__(self, poly: Poly2):
        self.poly = poly

    @classmethod
    def from_terms(cls, terms: dict[tuple[int, int], float]) -> "PolynomialSolution":
        return cls(Poly2.from_dict(terms))

    def __call__(self, points) -> np.ndarray:
        return self.poly.eval(np.atleast_2d(np.asarray(points, dtype=float)))

    def derivatives(self, points, order: int) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.poly.eval_derivatives(pts, order).T


class FourierSolution:
    """Real combination of plane waves exp(i pi (a x + b y)).

    Closed under differentiation, so the derivative oracle stays exact for
    trigonometric products of any order.
    """

    def __init__(self, freqs: np.ndarray, coeffs: np.ndarray):
        self.freqs = np.asarray(freqs, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=complex)

    @classmethod
    def sin_product_power(cls, m: int) -> "FourierSolution":
        """(sin pi x * sin pi y)^m via the binomial expansion of sin^m."""
        c1 = np.array([math.comb(m, k) * (-1.0) ** (m - k) for k in range(m + 1)],
                      dtype=complex) / (2.0j) ** m
        a = np.arange(m + 1) * 2.0 - m
        freqs = np.array([(ax, by) for ax in a for by in a])
        return cls(freqs, np.outer(c1, c1).ravel())

    def _phases(self, pts: np.ndarray) -> np.ndarray:
        return np.exp(1j * np.pi * (pts @ self.freqs.T))

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (self._phases(pts) @ self.coeffs).real

    def derivatives(self, points, order: int) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ph = self._phases(pts)
        da = 1j * np.pi * self.freqs[:, 0]
        db = 1j * np.pi * self.freqs[:, 1]
        cols = [(ph @ (self.coeffs * da ** n1 * db ** n2)).real
                for (n1, n2) in multi_indices(order)]
        return np.stack(cols, axis=1)

    def neg_laplacian_power(self, n: int) -> "FourierSolution":
        """(-lap)^n of this function, again a plane-wave combination."""
        factor = (np.pi ** 2 * (self.freqs ** 2).sum(axis=1)) ** n
        return FourierSolution(self.freqs, self.coeffs * factor)


class ZeroSolution:
    """Identically zero; drives the homogeneous sanity runs."""

    def __call__(self, points) -> np.ndarray:
        return np.zeros(np.atleast_2d(np.asarray(points, dtype=float)).shape[0])

    def derivatives(self, points, order: int) -> np.ndarray:
        npts = np.atleast_2d(np.asarray(points, dtype=float)).shape[0]
        return np.zeros((npts, space_dim(order)))


def _bubble_terms(m: int) -> dict[tuple[int, int], float]:
    """Exponent dict of (x(1-x) y(1-y))^m."""
    out: dict[tuple[int, int], float] = {}
    for i in range(m + 1):
        for j in range(m + 1):
            out[(m + i, m + j)] = (math.comb(m, i) * math.comb(m, j)
                                   * (-1.0) ** (i + j))
    return out


# ---------------------------------------------------------------- cases

@dataclass(frozen=True)
class ManufacturedCase:
    """Exact solution plus matching forcing on a rectangle domain.

    ``u`` needs ``__call__(points)`` and ``derivatives(points, order)``,
    ``f`` only ``__call__``. The essential data of u must vanish: every
    case has d_n^j u = 0 on the boundary for j <= p_eff - 1, which
    ``boundary_residual`` verifies by sampling, so convergence runs keep
    the constrained dofs at zero.
    """

    name: str
    p: int
    r: int
    t: int
    u: object
    f: object
    domain: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)

    @property
    def p_eff(self) -> int:
        return self.p - self.t

    def boundary_residual(self, samples: int = 101) -> float:
        """Largest sampled |d_n^j u| on the boundary, j = 0 .. p_eff - 1."""
        x0, y0, x1, y1 = self.domain
        s = np.linspace(0.0, 1.0, samples)
        ones = np.ones_like(s)
        sides = [
            (np.column_stack([x0 * ones, y0 + (y1 - y0) * s]), 0),
            (np.column_stack([x1 * ones, y0 + (y1 - y0) * s]), 0),
            (np.column_stack([x0 + (x1 - x0) * s, y0 * ones]), 1),
            (np.column_stack([x0 + (x1 - x0) * s, y1 * ones]), 1),
        ]
        worst = 0.0
        for pts, axis in sides:
            tab = self.u.derivatives(pts, self.p_eff - 1)
            for j in range(self.p_eff):
                nu = (j, 0) if axis == 0 else (0, j)
                worst = max(worst, float(np.abs(tab[:, mi_position(nu)]).max()))
        return worst


def builtin_case(p: int, r: int, t: int = 0,
                 name: str = "poly-bubble") -> ManufacturedCase:
    """Stock verification problems on the unit square.

    poly-bubble: u = (x(1-x) y(1-y))^p_eff, polynomial of degree 4 p_eff.
    trig:        u = (sin pi x sin pi y)^(p_eff + 1).
    zero:        u = 0 with f = 0.
    """
    config = ElementConfig(p, r, t)
    m = config.p_eff
    if name == "poly-bubble":
        u = PolynomialSolution.from_terms(_bubble_terms(m))
        f = PolynomialSolution(laplacian_power(u.poly, m) * (-1.0) ** m)
    elif name == "trig":
        u = FourierSolution.sin_product_power(m + 1)
        f = u.neg_laplacian_power(m)
    elif name == "zero":
        u = ZeroSolution()
        f = ZeroSolution()
    else:
        raise ValueError(f"unknown case {name!r}; expected one of {CASE_NAMES}")
    case = ManufacturedCase(name, p, r, t, u, f)
    resid = case.boundary_residual()
    if resid > 1e-10:
        raise ValueError(f"case {name!r}: essential data is not homogeneous "
                         f"(boundary residual {resid:.3e})")
    return case


# ---------------------------------------------------------------- errors

@dataclass(frozen=True)
class ErrorReport:
    """Broken seminorm errors e_s, s = 0 .. p_eff, on one mesh."""

    h: float
    n_dofs: int
    errors: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"h": self.h, "dofs": self.n_dofs, "errors": list(self.errors)}


def compute_errors(mesh, config: ElementConfig, case: ManufacturedCase,
                   solution, workspaces=None,
                   quad_degree: int | None = None) -> ErrorReport:
    """Broken seminorms of u - Pi u_h from a full global dof vector.

    The quadrature degree defaults to 2r + 2 and never drops below it;
    pass a larger ``quad_degree`` when the integrand warrants.
    """
    deg = max(quad_degree or 0, 2 * config.r + 2)
    dof_map = GlobalDofMap(mesh, config)
    nus = multi_indices(config.p_eff)
    # |.|_s sums D^nu with the multinomial weight s! / (nu1! nu2!)
    weight = np.array([math.comb(a + b, a) for (a, b) in nus], dtype=float)
    acc = np.zeros(config.p_eff + 1)
    solution = np.asarray(solution, dtype=float)
    for ci in range(mesh.n_cells):
        ws = workspaces[ci] if workspaces is not None else build_element(
            config, cell_geometry_from_mesh(mesh, ci, config))
        local = solution[dof_map.cell_to_global(ci, ws.layout)]
        proj = ws.projection(local)
        rule = polygon_rule(mesh.vertices[list(mesh.cells[ci])], deg)
        diff = (case.u.derivatives(rule.points, config.p_eff).T
                - proj.eval_derivatives(rule.points, config.p_eff))
        sq = (diff ** 2) @ rule.weights
        for pos, (a, b) in enumerate(nus):
            acc[a + b] += weight[pos] * sq[pos]
    errors = np.sqrt(np.maximum(acc, 0.0))
    return ErrorReport(float(mesh.h), dof_map.n_dofs,
                       tuple(float(e) for e in errors))


# ---------------------------------------------------------------- studies

@dataclass
class ConvergenceTable:
    """Refinement study: one ErrorReport per solved level.

    Fitted slopes come from a least-squares line through the last three
    (log h, log e_s) points and are None until three levels have solved.
    CSV rows instead carry incremental slopes between consecutive levels
    (blank in the first row) so the raw table stays self-contained; the
    JSON mirror holds both plus the full run configuration.
    """

    config: ElementConfig
    case_name: str
    mesh_kind: str
    levels: tuple[int, ...]
    rows: list[ErrorReport] = field(default_factory=list)
    reports: list[SolveReport] = field(default_factory=list)
    failure: str | None = None

    def fitted_slopes(self) -> tuple[float, ...] | None:
        if len(self.rows) < 3:
            return None
        tail = self.rows[-3:]
        logh = np.log([row.h for row in tail])
        out = []
        for s in range(len(tail[0].errors)):
            es = [row.errors[s] for row in tail]
            if min(es) <= 0.0:
                out.append(float("nan"))
            else:
                out.append(float(np.polyfit(logh, np.log(es), 1)[0]))
        return tuple(out)

    def incremental_slopes(self) -> list[tuple[float, ...] | None]:
        if not self.rows:
            return []
        out: list[tuple[float, ...] | None] = [None]
        for prev, cur in zip(self.rows, self.rows[1:]):
            denom = math.log(prev.h / cur.h)
            out.append(tuple(
                math.log(ep / ec) / denom if ep > 0.0 and ec > 0.0
                else float("nan")
                for ep, ec in zip(prev.errors, cur.errors)))
        return out

    def csv_text(self) -> str:
        ne = self.config.p_eff + 1
        header = ("h,dofs,"
                  + ",".join(f"e{s}" for s in range(ne)) + ","
                  + ",".join(f"slope{s}" for s in range(ne)))
        lines = [header]
        for row, inc in zip(self.rows, self.incremental_slopes()):
            cells = [f"{row.h:.16e}", str(row.n_dofs)]
            cells += [f"{e:.16e}" for e in row.errors]
            if inc is None:
                cells += [""] * ne
            else:
                cells += [f"{sl:.6f}" if math.isfinite(sl) else ""
                          for sl in inc]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def json_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "case": self.case_name,
            "mesh_kind": self.mesh_kind,
            "levels": list(self.levels),
            "rows": [row.to_dict() for row in self.rows],
            "incremental_slopes": [_finite_or_none(x)
                                   for x in self.incremental_slopes()],
            "fitted_slopes": _finite_or_none(self.fitted_slopes()),
            "solver": [rep.to_dict() for rep in self.reports],
            "failure": self.failure,
        }

    def json_text(self) -> str:
        return json.dumps(self.json_dict(), indent=2) + "\n"

    def summary(self) -> str:
        lines = [f"case={self.case_name} p={self.config.p} r={self.config.r} "
                 f"t={self.config.t} mesh={self.mesh_kind}"]
        for row in self.rows:
            err = " ".join(f"e{s}={e:.4e}" for s, e in enumerate(row.errors))
            lines.append(f"  h={row.h:.4e} dofs={row.n_dofs} {err}")
        fitted = self.fitted_slopes()
        if fitted is not None:
            lines.append("  fitted slopes: " + " ".join(
                f"slope{s}={v:.3f}" for s, v in enumerate(fitted)))
        if self.failure:
            lines.append(f"  FAILED: {self.failure}")
        return "\n".join(lines)


def _finite_or_none(values):
    if values is None:
        return None
    return [v if math.isfinite(v) else None for v in values]


def run_convergence(config: ElementConfig, case: ManufacturedCase,
                    mesh_kind: str = "square-grid",
                    levels=(4, 8, 16, 32), *, seed: int = 0,
                    threads: int | None = None,
                    on_level=None) -> ConvergenceTable:
    """Solve the case on a refinement sequence and fit rates.

    Needs at least three levels so the fitted slope is defined. A solver
    failure stops the sweep and leaves the partial table with ``failure``
    set rather than raising. ``on_level`` (if given) receives each
    ErrorReport as it lands, for progress printing.
    """
    levels = tuple(int(n) for n in levels)
    if len(levels) < 3:
        raise ValueError(f"need at least 3 refinement levels, got {len(levels)}")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be strictly increasing, got {levels}")
    table = ConvergenceTable(config, case.name, mesh_kind, levels)
    for n in levels:
        mesh = generate_mesh(mesh_kind, n, domain=case.domain, seed=seed)
        try:
            system = assemble(mesh, config, case.f, threads=threads)
            u, report = solve(system)
        except SolverError as exc:
            table.failure = f"level n={n}: {exc}"
            log.error("convergence sweep aborted: %s", table.failure)
            break
        row = compute_errors(mesh, config, case, u)
        if table.rows and row.h >= table.rows[-1].h:
            raise ValueError(f"mesh size did not decrease at level n={n}")
        table.rows.append(row)
        table.reports.append(report)
        log.info("level n=%d: h=%.3e dofs=%d errors=%s", n, row.h, row.n_dofs,
                 " ".join(f"{e:.3e}" for e in row.errors))
        if on_level is not None:
            on_level(row)
    return table


def run_t_variant(p: int, t: int, r: int,
                  case: str | ManufacturedCase = "poly-bubble",
                  mesh_kind: str = "square-grid",
                  levels=(4, 8, 16, 32), *, seed: int = 0,
                  threads: int | None = None,
                  on_level=None) -> ConvergenceTable:
    """Convergence of the order-2(p-t) problem solved with C^{p-1} elements.

    t > 0 keeps the smooth space but lowers the operator, so the energy
    norm is the order-p_eff seminorm and the expected rate r - p_eff + 1.
    """
    if not 0 < t <= p - 1:
        raise ValueError(f"t must satisfy 0 < t <= p-1, got t={t} with p={p}")
    config = ElementConfig(p, r, t)
    if not isinstance(case, ManufacturedCase):
        case = builtin_case(p, r, t, case)
    return run_convergence(config, case, mesh_kind, levels, seed=seed,
                           threads=threads, on_level=on_level)
