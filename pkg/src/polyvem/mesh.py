"""Polygonal meshes: container, generators, JSON round-trip, quality audit.

A mesh is immutable once built. Cells are CCW vertex cycles; edges are
derived, oriented from the lower to the higher global vertex index, and
that orientation is the one shared quantity every element computation
agrees on (tangent along the edge, normal = tangent rotated by -90
degrees).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .quad import QuadratureError, validate_simple_polygon


class MeshError(ValueError):
    pass


class PolygonalMesh:
    """A 2D mesh of simple CCW polygons.

    Stored:
        vertices : (nv, 2) float array, read-only
        cells    : tuple of tuples of vertex indices, CCW

    Derived:
        edges           : (ne, 2) int array, lo < hi per row
        cell_edges      : per cell, list of (edge_id, forward) where forward
                          is True when the cell traverses lo -> hi
        edge_cells      : (ne, 2) int array, -1 marks a missing neighbor
        boundary_edge   : (ne,) bool mask
        boundary_vertex : (nv,) bool mask
        cell_diameter   : (nc,) max pairwise vertex distance (h_P)
        cell_centroid   : (nc, 2) polygon centroids
        cell_area       : (nc,)
        vertex_h        : (nv,) average diameter of incident cells (h_v)
        h               : max cell diameter
    """

    def __init__(self, vertices: np.ndarray, cells):
        vertices = np.array(vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError(f"vertices must be (nv, 2), got {vertices.shape}")
        cells = tuple(tuple(int(i) for i in c) for c in cells)
        nv = vertices.shape[0]
        seen = np.zeros(nv, dtype=bool)
        for ci, cell in enumerate(cells):
            if len(cell) < 3:
                raise MeshError(f"cell {ci}: needs at least 3 vertices, got {len(cell)}")
            for vi in cell:
                if not 0 <= vi < nv:
                    raise MeshError(f"cell {ci}: vertex index {vi} out of range [0, {nv})")
                seen[vi] = True
            if len(set(cell)) != len(cell):
                raise MeshError(f"cell {ci}: repeated vertex index")
            try:
                validate_simple_polygon(vertices[list(cell)], label=f"cell {ci}")
            except QuadratureError as exc:
                raise MeshError(str(exc)) from exc
        if not seen.all():
            orphan = int(np.flatnonzero(~seen)[0])
            raise MeshError(f"vertex {orphan} is not referenced by any cell")

        vertices.setflags(write=False)
        self.vertices = vertices
        self.cells = cells
        self._build_topology()
        self._build_geometry()

    def _build_topology(self) -> None:
        edge_ids: dict[tuple[int, int], int] = {}
        edges: list[tuple[int, int]] = []
        cell_edges: list[list[tuple[int, bool]]] = []
        edge_cells: list[list[int]] = []
        for ci, cell in enumerate(self.cells):
            entry = []
            n = len(cell)
            for k in range(n):
                a, b = cell[k], cell[(k + 1) % n]
                key = (min(a, b), max(a, b))
                if key not in edge_ids:
                    edge_ids[key] = len(edges)
                    edges.append(key)
                    edge_cells.append([])
                eid = edge_ids[key]
                if len(edge_cells[eid]) >= 2:
                    raise MeshError(f"edge {key} is shared by more than two cells")
                edge_cells[eid].append(ci)
                entry.append((eid, a == key[0]))
            cell_edges.append(entry)
        self.edges = np.asarray(edges, dtype=int)
        self.cell_edges = cell_edges
        ec = np.full((len(edges), 2), -1, dtype=int)
        for eid, owners in enumerate(edge_cells):
            ec[eid, : len(owners)] = owners
        self.edge_cells = ec
        self.boundary_edge = ec[:, 1] < 0
        self.boundary_vertex = np.zeros(self.vertices.shape[0], dtype=bool)
        for eid in np.flatnonzero(self.boundary_edge):
            self.boundary_vertex[self.edges[eid]] = True

    def _build_geometry(self) -> None:
        nc = len(self.cells)
        self.cell_diameter = np.zeros(nc)
        self.cell_centroid = np.zeros((nc, 2))
        self.cell_area = np.zeros(nc)
        for ci, cell in enumerate(self.cells):
            v = self.vertices[list(cell)]
            diff = v[:, None, :] - v[None, :, :]
            self.cell_diameter[ci] = np.sqrt((diff ** 2).sum(axis=2)).max()
            x, y = v[:, 0], v[:, 1]
            xn, yn = np.roll(x, -1), np.roll(y, -1)
            cross = x * yn - xn * y
            area = 0.5 * cross.sum()
            self.cell_area[ci] = area
            self.cell_centroid[ci, 0] = ((x + xn) * cross).sum() / (6.0 * area)
            self.cell_centroid[ci, 1] = ((y + yn) * cross).sum() / (6.0 * area)
        self.h = float(self.cell_diameter.max())
        acc = np.zeros(self.vertices.shape[0])
        cnt = np.zeros(self.vertices.shape[0])
        for ci, cell in enumerate(self.cells):
            for vi in cell:
                acc[vi] += self.cell_diameter[ci]
                cnt[vi] += 1
        self.vertex_h = acc / cnt

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def edge_length(self, eid: int) -> float:
        a, b = self.edges[eid]
        return float(np.hypot(*(self.vertices[b] - self.vertices[a])))


# ---------------------------------------------------------------- generators

MESH_KINDS = ("square-grid", "triangle-grid", "perturbed-grid", "hex-dominant")


def _scale_to_domain(unit_vertices: np.ndarray, domain) -> np.ndarray:
    x0, y0, x1, y1 = domain
    out = np.empty_like(unit_vertices)
    out[:, 0] = x0 + (x1 - x0) * unit_vertices[:, 0]
    out[:, 1] = y0 + (y1 - y0) * unit_vertices[:, 1]
    return out


def rectangle_grid(nx: int, ny: int, domain=(0.0, 0.0, 1.0, 1.0)) -> PolygonalMesh:
    """nx-by-ny grid of axis-aligned quads."""
    xs = np.arange(nx + 1) / nx
    ys = np.arange(ny + 1) / ny
    verts = np.array([(x, y) for y in ys for x in xs])
    cells = []
    for j in range(ny):
        for i in range(nx):
            v00 = j * (nx + 1) + i
            cells.append((v00, v00 + 1, v00 + nx + 2, v00 + nx + 1))
    return PolygonalMesh(_scale_to_domain(verts, domain), cells)


def triangle_grid(n: int, domain=(0.0, 0.0, 1.0, 1.0)) -> PolygonalMesh:
    """n-by-n grid of quads each split along the SW-NE diagonal."""
    xs = np.arange(n + 1) / n
    verts = np.array([(x, y) for y in xs for x in xs])
    cells = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return PolygonalMesh(_scale_to_domain(verts, domain), cells)


def perturbed_grid(n: int, domain=(0.0, 0.0, 1.0, 1.0), seed: int = 0,
                   amplitude: float = 0.2) -> PolygonalMesh:
    """Square grid with interior vertices displaced by at most amplitude/n."""
    base = rectangle_grid(n, n)
    verts = np.array(base.vertices)
    rng = np.random.default_rng(seed)
    shifts = rng.uniform(-amplitude / n, amplitude / n, size=verts.shape)
    interior = ~base.boundary_vertex
    verts[interior] += shifts[interior]
    return PolygonalMesh(_scale_to_domain(verts, domain), base.cells)


def hex_dominant(n: int, domain=(0.0, 0.0, 1.0, 1.0)) -> PolygonalMesh:
    """Stretched-honeycomb cover of the rectangle.

    Interior cells are hexagons; rows and columns whose cells straddle
    the boundary are clamped onto it, which leaves half-hexagons there.
    Vertices live on an exact integer lattice so shared edges coincide
    bitwise.
    """
    m = max(1, round(2 * n / np.sqrt(3.0)))
    # lattice units: x in multiples of 1/(2n), y in multiples of 1/(3m)
    key_coord: dict[tuple[int, int], int] = {}
    verts: list[tuple[float, float]] = []

    def vid(kx: int, ky: int) -> int:
        kx = min(max(kx, 0), 2 * n)
        ky = min(max(ky, 0), 3 * m)
        key = (kx, ky)
        if key not in key_coord:
            key_coord[key] = len(verts)
            verts.append((kx / (2 * n), ky / (3 * m)))
        return key_coord[key]

    raw_cells: list[list[int]] = []
    for j in range(m + 1):
        cy = 3 * j
        cols = range(n + 1) if j % 2 == 0 else range(n)
        for i in cols:
            cx = 2 * i + (j % 2)
            ring = [(cx, cy + 2), (cx - 1, cy + 1), (cx - 1, cy - 1),
                    (cx, cy - 2), (cx + 1, cy - 1), (cx + 1, cy + 1)]
            ids = [vid(*k) for k in ring]
            cell = [v for k, v in enumerate(ids) if v != ids[(k - 1) % len(ids)]]
            if len(set(cell)) < 3:
                continue
            raw_cells.append(cell)

    coords = np.asarray(verts)
    # drop vertices that are collinear in every incident cell (single-cell
    # flats left over from clamping)
    incident: dict[int, list[tuple[int, int]]] = {}
    for ci, cell in enumerate(raw_cells):
        for k, v in enumerate(cell):
            incident.setdefault(v, []).append((ci, k))
    removable = set()
    for v, occ in incident.items():
        flat = True
        for ci, k in occ:
            cell = raw_cells[ci]
            a = coords[cell[(k - 1) % len(cell)]]
            b = coords[cell[k]]
            c = coords[cell[(k + 1) % len(cell)]]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if abs(cross) > 1e-14:
                flat = False
                break
        if flat:
            removable.add(v)
    cells = [tuple(v for v in cell if v not in removable) for cell in raw_cells]
    used = sorted({v for cell in cells for v in cell})
    remap = {v: k for k, v in enumerate(used)}
    cells = [tuple(remap[v] for v in cell) for cell in cells]
    return PolygonalMesh(_scale_to_domain(coords[used], domain), cells)


def generate_mesh(kind: str, n: int, domain=(0.0, 0.0, 1.0, 1.0), seed: int = 0) -> PolygonalMesh:
    """Build one of the stock mesh families on a rectangle."""
    if n < 1:
        raise MeshError(f"subdivision count must be positive, got {n}")
    if kind == "square-grid":
        return rectangle_grid(n, n, domain)
    if kind == "triangle-grid":
        return triangle_grid(n, domain)
    if kind == "perturbed-grid":
        return perturbed_grid(n, domain, seed)
    if kind == "hex-dominant":
        return hex_dominant(n, domain)
    raise MeshError(f"unknown mesh kind {kind!r}; expected one of {MESH_KINDS}")


# ------------------------------------------------------------------- file IO

def save_mesh(mesh: PolygonalMesh, path: str) -> None:
    """Write the two-key JSON mesh format (vertices, then cells)."""
    payload = {
        "vertices": [[float(x), float(y)] for x, y in mesh.vertices],
        "cells": [list(cell) for cell in mesh.cells],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_mesh(path: str) -> PolygonalMesh:
    with open(path) as fh:
        data = json.load(fh)
    for key in ("vertices", "cells"):
        if key not in data:
            raise MeshError(f"mesh file {path}: missing key {key!r}")
    return PolygonalMesh(np.asarray(data["vertices"], dtype=float), data["cells"])


# -------------------------------------------------------------------- audits

@dataclass
class MeshQualityReport:
    edge_ratio: np.ndarray       # per cell: max h_e / h_P
    inscribed_ratio: np.ndarray  # per cell: estimated largest-ball radius / h_P
    gamma_estimate: float        # min over cells of min(inscribed, shortest edge / h_P)
    flagged: np.ndarray          # cell indices violating the threshold
    threshold: float

    def summary(self) -> str:
        lines = [
            f"cells={self.edge_ratio.size}",
            f"max edge/diameter ratio: {self.edge_ratio.max():.6g}",
            f"min inscribed-ball ratio: {self.inscribed_ratio.min():.6g}",
            f"regularity constant estimate: {self.gamma_estimate:.6g}",
        ]
        if self.flagged.size:
            lines.append(f"flagged cells (inscribed ratio < {self.threshold:g}): "
                         + ", ".join(str(c) for c in self.flagged))
        else:
            lines.append(f"no cells below inscribed-ratio threshold {self.threshold:g}")
        return "\n".join(lines)


def _point_in_polygon(pt: np.ndarray, verts: np.ndarray) -> bool:
    x, y = pt
    inside = False
    n = verts.shape[0]
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xint:
                inside = not inside
    return inside


def _dist_to_boundary(pt: np.ndarray, verts: np.ndarray) -> float:
    n = verts.shape[0]
    best = np.inf
    for i in range(n):
        a = verts[i]
        b = verts[(i + 1) % n]
        ab = b - a
        t = np.clip(np.dot(pt - a, ab) / np.dot(ab, ab), 0.0, 1.0)
        best = min(best, float(np.hypot(*(pt - (a + t * ab)))))
    return best


_BALL_OFFSETS = np.array([(dx, dy)
                          for dx in (-0.25, -0.1, 0.0, 0.1, 0.25)
                          for dy in (-0.25, -0.1, 0.0, 0.1, 0.25)])


def audit_quality(mesh: PolygonalMesh, threshold: float = 0.1) -> MeshQualityReport:
    """Shape-regularity audit: reports ratios, never rejects a mesh."""
    nc = mesh.n_cells
    edge_ratio = np.zeros(nc)
    short_ratio = np.zeros(nc)
    ball_ratio = np.zeros(nc)
    for ci, cell in enumerate(mesh.cells):
        v = mesh.vertices[list(cell)]
        hp = mesh.cell_diameter[ci]
        lens = np.hypot(*(np.roll(v, -1, axis=0) - v).T)
        edge_ratio[ci] = lens.max() / hp
        short_ratio[ci] = lens.min() / hp
        span = v.max(axis=0) - v.min(axis=0)
        candidates = mesh.cell_centroid[ci] + _BALL_OFFSETS * span
        best = 0.0
        for c in candidates:
            if _point_in_polygon(c, v):
                best = max(best, _dist_to_boundary(c, v))
        ball_ratio[ci] = best / hp
    gamma = float(np.minimum(ball_ratio, short_ratio).min())
    flagged = np.flatnonzero(ball_ratio < threshold)
    return MeshQualityReport(edge_ratio=edge_ratio, inscribed_ratio=ball_ratio,
                             gamma_estimate=gamma, flagged=flagged, threshold=threshold)
