"""Global assembly and solve on a polygonal mesh.

Global dofs are numbered vertex blocks first, then edge blocks, then cell
blocks, matching the local layout order inside each block. Every edge dof
is defined in the edge's global frame (smaller vertex index first), which
both adjacent cells use, so local dof values equal global dof values with
no sign bookkeeping.

Essential boundary conditions are imposed by symmetric elimination: the
constrained dofs carry interpolated boundary values and the reduced system
keeps only the free ones.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .element import (
    BulkMoment,
    EdgeMoment,
    EdgeNormalMoment,
    ElementConfig,
    ElementError,
    ElementWorkspace,
    VertexDeriv,
    build_element,
    cell_geometry_from_mesh,
    dof_layout,
    interpolate_dofs,
    local_load,
)
from .mesh import PolygonalMesh
from .poly import frame_coefficients, multi_indices, space_dim

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Factorization or backsolve failure of the reduced system."""


# ---------------------------------------------------------------- numbering

class GlobalDofMap:
    """Deterministic global numbering plus the essential-constraint set."""

    def __init__(self, mesh: PolygonalMesh, config: ElementConfig):
        self.mesh = mesh
        self.config = config
        p, r = config.p, config.r
        self.per_vertex = p * (p + 1) // 2
        self.per_edge = sum(r - 2 * p + j + 1 for j in range(p))
        self.per_cell = space_dim(config.bulk_degree)
        self.edge_base = mesh.n_vertices * self.per_vertex
        self.cell_base = self.edge_base + mesh.n_edges * self.per_edge
        self.n_dofs = self.cell_base + mesh.n_cells * self.per_cell
        self._nu_offset = {nu: i for i, nu in enumerate(multi_indices(p - 1))}
        self._edge_offset: dict[tuple[int, int], int] = {}
        off = 0
        for k in range(r - 2 * p + 1):
            self._edge_offset[(0, k)] = off
            off += 1
        for j in range(1, p):
            for k in range(r - 2 * p + j + 1):
                self._edge_offset[(j, k)] = off
                off += 1
        self._bulk_offset = {alpha: i for i, alpha
                             in enumerate(multi_indices(config.bulk_degree))}
        self._constrained: np.ndarray | None = None

    def vertex_dof(self, v: int, nu: tuple[int, int]) -> int:
        return v * self.per_vertex + self._nu_offset[nu]

    def edge_dof(self, eid: int, j: int, k: int) -> int:
        return self.edge_base + eid * self.per_edge + self._edge_offset[(j, k)]

    def cell_dof(self, ci: int, alpha: tuple[int, int]) -> int:
        return self.cell_base + ci * self.per_cell + self._bulk_offset[alpha]

    def cell_to_global(self, ci: int, layout) -> np.ndarray:
        """Global index of each local slot, in local layout order."""
        cell = self.mesh.cells[ci]
        edge_ids = [eid for (eid, _) in self.mesh.cell_edges[ci]]
        idx = np.empty(layout.n_dofs, dtype=np.int64)
        for slot, entry in enumerate(layout.entries):
            if isinstance(entry, VertexDeriv):
                idx[slot] = self.vertex_dof(cell[entry.vertex], entry.nu)
            elif isinstance(entry, EdgeMoment):
                idx[slot] = self.edge_dof(edge_ids[entry.edge], 0, entry.k)
            elif isinstance(entry, EdgeNormalMoment):
                idx[slot] = self.edge_dof(edge_ids[entry.edge], entry.j, entry.k)
            else:
                assert isinstance(entry, BulkMoment)
                idx[slot] = self.cell_dof(ci, entry.alpha)
        return idx

    # ------------------------------------------------------------ constraints

    def _vertex_constrained_orders(self, v: int, frames) -> list[tuple[int, int]]:
        """Constrained derivative indices at one boundary vertex.

        The essential data prescribes normal derivatives up to order
        p_eff - 1 along each incident boundary edge. Per total order m this
        spans some subspace of the order-m derivatives; a Cartesian dof is
        constrained when its dual direction lies in that span. When the
        span cuts across the Cartesian axes the whole order is constrained
        and a warning records the over-constraint.
        """
        cfg = self.config
        out: list[tuple[int, int]] = []
        for m in range(cfg.p):
            nus = [(m - i, i) for i in range(m + 1)]
            rows = []
            for (n_vec, t_vec) in frames:
                for j in range(min(m, cfg.p_eff - 1) + 1):
                    coeff = frame_coefficients(n_vec, t_vec, j, m - j)
                    rows.append([coeff.get(nu, 0.0) for nu in nus])
            if not rows:
                continue
            F = np.asarray(rows)
            U, sv, Vt = np.linalg.svd(F)
            rank = int((sv > 1e-10 * sv[0]).sum()) if sv.size and sv[0] > 0 else 0
            if rank == m + 1:
                out.extend(nus)
                continue
            span = Vt[:rank]
            picked, clean = [], True
            for i, nu in enumerate(nus):
                proj = span.T @ span[:, i] if rank else np.zeros(m + 1)
                e_i = np.zeros(m + 1)
                e_i[i] = 1.0
                if np.abs(proj - e_i).max() <= 1e-10:
                    picked.append(nu)
                elif np.abs(proj).max() > 1e-10:
                    clean = False
            if clean:
                out.extend(picked)
            else:
                log.warning(
                    "vertex %d: order-%d boundary span is not axis-aligned; "
                    "constraining the full block", v, m)
                out.extend(nus)
        return out

    def constrained_dofs(self) -> np.ndarray:
        """Sorted global indices of the essentially constrained dofs."""
        if self._constrained is not None:
            return self._constrained
        mesh, cfg = self.mesh, self.config
        out: list[int] = []
        if cfg.t == 0:
            for v in range(mesh.n_vertices):
                if mesh.boundary_vertex[v]:
                    for nu in multi_indices(cfg.p - 1):
                        out.append(self.vertex_dof(v, nu))
            for eid in range(mesh.n_edges):
                if mesh.boundary_edge[eid]:
                    for (j, k) in self._edge_offset:
                        out.append(self.edge_dof(eid, j, k))
        else:
            incident: dict[int, list] = {}
            for eid, (lo, hi) in enumerate(mesh.edges):
                if not mesh.boundary_edge[eid]:
                    continue
                a, b = mesh.vertices[lo], mesh.vertices[hi]
                tau = (b - a) / np.hypot(*(b - a))
                frame = (np.array([tau[1], -tau[0]]), tau)
                incident.setdefault(lo, []).append(frame)
                incident.setdefault(hi, []).append(frame)
                for (j, k) in self._edge_offset:
                    if j <= cfg.p_eff - 1:
                        out.append(self.edge_dof(eid, j, k))
            for v, frames in incident.items():
                for nu in self._vertex_constrained_orders(v, frames):
                    out.append(self.vertex_dof(v, nu))
        self._constrained = np.unique(np.asarray(out, dtype=np.int64))
        return self._constrained

    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained_dofs()] = False
        return np.flatnonzero(mask)


# ---------------------------------------------------------------- boundary data

class BoundaryData:
    """Values of the constrained dofs."""

    def __init__(self, values: np.ndarray):
        self.values = np.asarray(values, dtype=float)

    @classmethod
    def homogeneous(cls, dof_map: GlobalDofMap) -> "BoundaryData":
        return cls(np.zeros(dof_map.constrained_dofs().size))

    @classmethod
    def from_function(cls, dof_map: GlobalDofMap, u) -> "BoundaryData":
        """Interpolate the constrained dof values of a smooth function."""
        full = interpolate_global(dof_map.mesh, dof_map.config, u)
        return cls(full[dof_map.constrained_dofs()])


# ---------------------------------------------------------------- assembly

@dataclass
class GlobalSystem:
    """Assembled operator before elimination, plus the constraint data."""

    mesh: PolygonalMesh
    config: ElementConfig
    dof_map: GlobalDofMap
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray
    constrained_values: np.ndarray
    free: np.ndarray

    def reduced(self) -> tuple[sp.csc_matrix, np.ndarray]:
        """Eliminate constraints symmetrically: A_ff u_f = b_f - A_fc g."""
        A_ff = self.matrix[self.free][:, self.free].tocsc()
        lift = self.matrix[self.free][:, self.constrained] @ self.constrained_values
        return A_ff, self.rhs[self.free] - lift


def _build_cell(mesh: PolygonalMesh, config: ElementConfig, ci: int, f):
    try:
        cell = cell_geometry_from_mesh(mesh, ci, config)
        ws = build_element(config, cell)
        b_loc = local_load(config, ws.cell, ws.layout, ws.basis, f, ws.Pi_poly)
    except ElementError as exc:
        raise ElementError(f"cell {ci}: {exc}") from exc
    return ws, b_loc


def assemble(mesh: PolygonalMesh, config: ElementConfig, f,
             boundary: BoundaryData | None = None,
             threads: int | None = None) -> GlobalSystem:
    """Assemble stiffness and load over all cells.

    Element builds may run on a thread pool; the scatter happens serially
    in cell order either way, so the assembled arrays are bit-identical
    run to run.
    """
    dof_map = GlobalDofMap(mesh, config)
    n = dof_map.n_dofs
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            built = list(pool.map(lambda ci: _build_cell(mesh, config, ci, f),
                                  range(mesh.n_cells)))
    else:
        built = [_build_cell(mesh, config, ci, f) for ci in range(mesh.n_cells)]

    rows, cols, data = [], [], []
    rhs = np.zeros(n)
    for ci, (ws, b_loc) in enumerate(built):
        gidx = dof_map.cell_to_global(ci, ws.layout)
        rows.append(np.repeat(gidx, gidx.size))
        cols.append(np.tile(gidx, gidx.size))
        data.append(ws.K.ravel())
        np.add.at(rhs, gidx, b_loc)
    A = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()
    A.sum_duplicates()

    constrained = dof_map.constrained_dofs()
    if boundary is None:
        boundary = BoundaryData.homogeneous(dof_map)
    values = boundary.values
    if values.shape != constrained.shape:
        raise ElementError(
            f"boundary data carries {values.size} values for "
            f"{constrained.size} constrained dofs")
    return GlobalSystem(mesh, config, dof_map, A, rhs, constrained,
                        values, dof_map.free_dofs())


# ---------------------------------------------------------------- solve

@dataclass
class SolveReport:
    n_dofs: int
    n_free: int
    residual: float
    cond_estimate: float | None

    def to_dict(self) -> dict:
        return {"n_dofs": self.n_dofs, "n_free": self.n_free,
                "residual": self.residual, "cond_estimate": self.cond_estimate}


def _condition_estimate(A_ff: sp.csc_matrix) -> float | None:
    """Extreme Ritz values; logged by callers, never asserted."""
    n = A_ff.shape[0]
    try:
        if n <= 400:
            lam = np.linalg.eigvalsh(A_ff.toarray())
            lo, hi = float(lam[0]), float(lam[-1])
        else:
            hi = float(spla.eigsh(A_ff, k=1, which="LA",
                                  return_eigenvectors=False)[0])
            lo = float(spla.eigsh(A_ff, k=1, sigma=0, which="LM",
                                  return_eigenvectors=False)[0])
        if lo <= 0:
            return None
        return hi / lo
    except Exception:  # estimate only; never block the solve
        return None


def solve(system: GlobalSystem,
          estimate_condition: bool = True) -> tuple[np.ndarray, SolveReport]:
    """Direct sparse solve of the reduced system with the residual reported."""
    A_ff, b_f = system.reduced()
    try:
        lu = spla.splu(A_ff)
        u_f = lu.solve(b_f)
    except (RuntimeError, ValueError) as exc:
        raise SolverError(
            f"sparse factorization failed: {exc}; an orthonormalized "
            f"polynomial basis (orthonormalize=True) may help") from exc
    if not np.all(np.isfinite(u_f)):
        raise SolverError(
            "sparse solve produced non-finite values; an orthonormalized "
            "polynomial basis (orthonormalize=True) may help")
    denom = max(float(np.linalg.norm(b_f)), np.finfo(float).tiny)
    residual = float(np.linalg.norm(A_ff @ u_f - b_f)) / denom
    cond = _condition_estimate(A_ff) if estimate_condition else None
    if cond is not None:
        log.info("reduced system: n=%d, cond estimate %.3e", A_ff.shape[0], cond)
    u = np.zeros(system.dof_map.n_dofs)
    u[system.free] = u_f
    u[system.constrained] = system.constrained_values
    report = SolveReport(system.dof_map.n_dofs, int(system.free.size),
                         residual, cond)
    return u, report


# ---------------------------------------------------------------- evaluation

def interpolate_global(mesh: PolygonalMesh, config: ElementConfig, u) -> np.ndarray:
    """Global dof vector of a smooth function.

    Shared dofs are written once per adjacent cell; the values agree
    because every dof is defined in its global frame.
    """
    dof_map = GlobalDofMap(mesh, config)
    out = np.zeros(dof_map.n_dofs)
    for ci in range(mesh.n_cells):
        cell = cell_geometry_from_mesh(mesh, ci, config)
        layout = dof_layout(config, cell)
        chi = interpolate_dofs(config, cell, layout, u)
        out[dof_map.cell_to_global(ci, layout)] = chi
    return out


def _point_in_cell(vertices: np.ndarray, pt: np.ndarray, tol: float) -> bool:
    # winding by half-plane test; mesh cells are convex by construction
    n = vertices.shape[0]
    for k in range(n):
        a, b = vertices[k], vertices[(k + 1) % n]
        edge = b - a
        if (edge[0] * (pt[1] - a[1]) - edge[1] * (pt[0] - a[0])) < -tol:
            return False
    return True


def evaluate_solution(mesh: PolygonalMesh, config: ElementConfig,
                      dofs: np.ndarray, points,
                      nu: tuple[int, int] = (0, 0),
                      workspaces: list[ElementWorkspace] | None = None) -> np.ndarray:
    """Evaluate D^nu of the cellwise polynomial projection of a dof vector."""
    dofs = np.asarray(dofs, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dof_map = GlobalDofMap(mesh, config)
    out = np.full(points.shape[0], np.nan)
    todo = np.arange(points.shape[0])
    for ci in range(mesh.n_cells):
        if todo.size == 0:
            break
        verts = mesh.vertices[list(mesh.cells[ci])]
        tol = 1e-12 * mesh.cell_diameter[ci]
        inside = [i for i in todo if _point_in_cell(verts, points[i], tol)]
        if not inside:
            continue
        ws = workspaces[ci] if workspaces is not None else build_element(
            config, cell_geometry_from_mesh(mesh, ci, config))
        local = dofs[dof_map.cell_to_global(ci, ws.layout)]
        coeffs = ws.Pi_poly @ local
        table = ws.basis.derivative_table(points[inside], nu)
        out[inside] = coeffs @ table
        todo = np.array([i for i in todo if i not in set(inside)], dtype=int)
    if todo.size:
        raise ElementError(
            f"{todo.size} evaluation points lie outside the mesh")
    return out


def number_dofs(mesh: PolygonalMesh, config: ElementConfig) -> tuple[int, int]:
    """Total and free dof counts, the shape of the solve."""
    dof_map = GlobalDofMap(mesh, config)
    return dof_map.n_dofs, int(dof_map.free_dofs().size)
