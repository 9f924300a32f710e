"""Conforming triangle meshes with the edge data H(div) elements need.

Conventions
-----------
* cells are counterclockwise vertex triples;
* local edge ``i`` of a cell is the edge opposite local vertex ``i``, and is
  traversed counterclockwise from local vertex ``(i+1) % 3`` to ``(i+2) % 3``;
* a global edge is stored as ``(low, high)`` vertex indices, its tangent
  points from low to high and its normal is the tangent rotated 90 degrees
  clockwise;
* ``cell_edge_signs[c, i]`` is +1 iff the outward normal of cell ``c`` on
  local edge ``i`` equals the global normal of that edge.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    cell_edges: np.ndarray
    cell_edge_signs: np.ndarray
    boundary_edges: np.ndarray
    n: int | None = None

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def jacobians(self) -> np.ndarray:
        """Affine-map Jacobians ``J = [v1 - v0, v2 - v0]``, shape (nc, 2, 2)."""
        v = self.vertices[self.cells]
        return np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)

    @cached_property
    def dets(self) -> np.ndarray:
        J = self.jacobians
        return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * self.dets

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Global unit normals (clockwise-rotated low-to-high tangents)."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        t = d / self.edge_lengths[:, None]
        return np.column_stack([t[:, 1], -t[:, 0]])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def map_to_physical(self, ref_points: np.ndarray) -> np.ndarray:
        """Map reference points (nq, 2) to physical points (nc, nq, 2)."""
        v0 = self.vertices[self.cells[:, 0]]
        return v0[:, None, :] + np.einsum("cij,qj->cqi", self.jacobians, ref_points)

    def edge_cells(self) -> list[list[tuple[int, int]]]:
        """Per edge, the incident ``(cell, sign)`` pairs."""
        out: list[list[tuple[int, int]]] = [[] for _ in range(self.num_edges)]
        for c in range(self.num_cells):
            for i in range(3):
                out[self.cell_edges[c, i]].append((c, int(self.cell_edge_signs[c, i])))
        return out


def build_entities(vertices, cells, n: int | None = None) -> Mesh:
    """Derive edges, incidence signs and boundary flags from vertices/cells.

    Clockwise cells are reoriented. Raises ``ValueError`` for degenerate
    cells or when an edge is shared by more than two cells.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    cells = np.array(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise ValueError("only 2D meshes are supported (vertices must be (nv, 2))")
    if cells.ndim != 2 or cells.shape[1] != 3:
        raise ValueError("only triangle cells are supported (cells must be (nc, 3))")
    if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
        raise ValueError("cell vertex index out of range")

    v = vertices[cells]
    det = (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1]) - (
        v[:, 1, 1] - v[:, 0, 1]
    ) * (v[:, 2, 0] - v[:, 0, 0])
    if np.any(det == 0):
        raise ValueError(f"degenerate cell {int(np.flatnonzero(det == 0)[0])}")
    flip = det < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]

    a = cells[:, [1, 2, 0]]  # ccw start of local edge i
    b = cells[:, [2, 0, 1]]  # ccw end
    pairs = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=2).reshape(-1, 2)
    edges, inverse, counts = np.unique(
        pairs, axis=0, return_inverse=True, return_counts=True
    )
    if np.any(counts > 2):
        bad = edges[np.flatnonzero(counts > 2)[0]]
        raise ValueError(f"non-manifold mesh: edge {tuple(bad)} has >2 incident cells")
    cell_edges = inverse.reshape(-1, 3)
    signs = np.where(a < b, 1, -1).astype(np.int64)
    boundary = np.flatnonzero(counts == 1)
    return Mesh(vertices, cells, edges, cell_edges, signs, boundary, n)


def build_unit_square_mesh(n: int) -> Mesh:
    """Structured ``n x n`` mesh of (0, 1)^2, squares cut lower-left to upper-right."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return build_entities(vertices, cells, n=n)


def mesh_size(mesh: Mesh) -> float:
    """Largest cell diameter (longest edge over all cells)."""
    return float(mesh.edge_lengths.max())


def read_mesh(path) -> Mesh:
    """Read the plain-text ``nv nc`` / ``x y`` / ``i j k`` format."""
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or len(lines[0]) != 2:
        raise ValueError("mesh header must be 'nv nc'")
    nv, nc = (int(t) for t in lines[0])
    body = lines[1:]
    if len(body) != nv + nc:
        raise ValueError(f"expected {nv + nc} data lines, found {len(body)}")
    vrows, crows = body[:nv], body[nv:]
    if any(len(r) != 2 for r in vrows):
        raise ValueError("vertex lines must hold exactly 'x y' (3D meshes are not supported)")
    if any(len(r) != 3 for r in crows):
        raise ValueError("cell lines must hold exactly 'i j k' (only triangles are supported)")
    vertices = np.array(vrows, dtype=float)
    cells = np.array(crows, dtype=np.int64)
    return build_entities(vertices, cells)


def write_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{mesh.num_vertices} {mesh.num_cells}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for i, j, k in mesh.cells:
            fh.write(f"{i} {j} {k}\n")
