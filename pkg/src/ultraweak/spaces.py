"""Discontinuous P_k and Raviart-Thomas RT_k spaces (k = 0, 1) on triangles.

RT degrees of freedom are normal-flux moments on edges,

    l_{e,j}(tau) = int_e (tau . n_e) q_j(s) ds,   q_0 = 1,  q_1 = 2s - 1,

with ``s`` running from the low to the high vertex of ``e`` and ``n_e`` the
global edge normal, plus (k = 1) the interior moments ``int_T tau_d``
taken on the reference cell.  Reference basis functions are the dual basis
of these functionals and are mapped by the contravariant Piola transform

    tau(x) = J tau_hat(x_hat) / det J,   div tau = div_hat tau_hat / det J.

The Piola map preserves the edge moments against the outward normal, so a
global basis function restricted to a cell is ``sign * Piola(local)``.
Reversing the edge direction flips both the normal and the odd weight
``q_1``, hence only the ``q_0`` moments carry the incidence sign.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .mesh import Mesh
from .quadrature import segment_rule, simplex_rule

DG_SCALAR = "DG_SCALAR"
RT_VECTOR = "RT_VECTOR"

_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
# local edge i is opposite vertex i, traversed ccw from (i+1)%3 to (i+2)%3
_REF_EDGE_START = _REF_VERTS[[1, 2, 0]]
_REF_EDGE_END = _REF_VERTS[[2, 0, 1]]
_REF_EDGE_LEN = np.linalg.norm(_REF_EDGE_END - _REF_EDGE_START, axis=1)
_REF_NORMALS = np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
_REF_NORMALS /= np.linalg.norm(_REF_NORMALS, axis=1)[:, None]


def _check_degree(k):
    if k not in (0, 1):
        raise ValueError(f"unsupported polynomial degree k={k!r}; only 0 and 1")


def _edge_weight(j, s):
    return np.ones_like(s) if j == 0 else 2.0 * s - 1.0


# ---------------------------------------------------------------- reference RT


def _rt_prime(k, pts):
    """Monomial spanning set of RT_k: values (np, nq, 2), divergence (np, nq)."""
    x, y = pts[:, 0], pts[:, 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    if k == 0:
        vals = [(one, zero), (zero, one), (x, y)]
        divs = [zero, zero, 2 * one]
    else:
        vals = [
            (one, zero), (x, zero), (y, zero),
            (zero, one), (zero, x), (zero, y),
            (x * x, x * y), (x * y, y * y),
        ]
        divs = [zero, one, zero, zero, zero, one, 3 * x, 3 * y]
    V = np.array([np.stack(v, axis=-1) for v in vals])
    return V, np.array(divs)


def _ref_edge_points(i, s):
    return _REF_EDGE_START[i] + s[:, None] * (_REF_EDGE_END[i] - _REF_EDGE_START[i])


def reference_rt_dofs(k, field_on_ref, degree=None):
    """Apply the reference RT_k functionals to a field on the reference cell.

    ``field_on_ref(points)`` returns values of shape (..., nq, 2); the result
    has shape (..., ndof) with the local ordering [edge 0, edge 1, edge 2,
    interior].  ``degree`` sets the quadrature exactness (default: exact for
    RT_k fields).
    """
    if degree is None:
        degree = 2 * k + 3
    s, w = segment_rule(degree)
    out = []
    for i in range(3):
        vals = field_on_ref(_ref_edge_points(i, s))
        flux = vals @ _REF_NORMALS[i]
        for j in range(k + 1):
            out.append(flux @ (w * _edge_weight(j, s)) * _REF_EDGE_LEN[i])
    if k == 1:
        rule = simplex_rule(degree) if degree <= 12 else _high_rule(degree)
        vals = field_on_ref(rule.points)
        out.append(np.tensordot(vals[..., 0], rule.weights, axes=([-1], [0])))
        out.append(np.tensordot(vals[..., 1], rule.weights, axes=([-1], [0])))
    return np.stack(out, axis=-1)


@lru_cache(maxsize=None)
def _rt_dual_coefficients(k):
    V = reference_rt_dofs(k, lambda p: _rt_prime(k, p)[0])  # (np, ndof)
    # column b of C expresses basis b in the monomials: dofs(V^T C) = I
    return np.linalg.inv(V.T)


def reference_rt_basis(k, pts):
    """Reference RT_k basis: values (ndof, nq, 2), divergences (ndof, nq)."""
    C = _rt_dual_coefficients(k)
    V, D = _rt_prime(k, pts)
    return np.einsum("pb,pqi->bqi", C, V), np.einsum("pb,pq->bq", C, D)


def reference_dg_basis(k, pts):
    """Reference P_k basis (1 for k = 0, vertex hat functions for k = 1)."""
    x, y = pts[:, 0], pts[:, 1]
    if k == 0:
        return np.ones((1, len(x)))
    return np.array([1.0 - x - y, x, y])


# ---------------------------------------------------------------------- spaces


@dataclass(frozen=True, eq=False)
class FESpace:
    """A discrete space on ``mesh`` with its DoF map.

    ``cell_dofs[c]`` lists the global DoFs of cell ``c`` in local order and
    ``cell_signs[c]`` their orientation signs (all +1 for DG).
    """

    kind: str
    degree: int
    mesh: Mesh
    dofs_per_edge: int
    dofs_per_cell_interior: int
    total_dofs: int
    cell_dofs: np.ndarray
    cell_signs: np.ndarray
    constrained_boundary_dofs: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64)
    )

    @property
    def local_dim(self) -> int:
        return self.cell_dofs.shape[1]

    @property
    def is_rt(self) -> bool:
        return self.kind == RT_VECTOR

    def eval_basis(self, cell: int, ref_points):
        """Basis functions of one cell at reference points.

        RT: returns (values (nloc, nq, 2), divergences (nloc, nq)), signs
        applied.  DG: returns (values (nloc, nq), None).
        """
        if not 0 <= cell < self.mesh.num_cells:
            raise IndexError(f"cell {cell} out of range")
        pts = np.atleast_2d(np.asarray(ref_points, dtype=float))
        if self.kind == DG_SCALAR:
            return reference_dg_basis(self.degree, pts), None
        vals, divs = reference_rt_basis(self.degree, pts)
        J, det = self.mesh.jacobians[cell], self.mesh.dets[cell]
        sg = self.cell_signs[cell]
        vals = np.einsum("ij,bqj->bqi", J, vals) / det * sg[:, None, None]
        return vals, divs / det * sg[:, None]

    @lru_cache(maxsize=None)
    def tabulate(self, degree: int):
        """Cached tabulation on all cells for a quadrature of given degree.

        Returns ``(rule, weights, values, divergences)`` where ``weights``
        includes |det J| (nc, nq); RT values are (nc, nloc, nq, 2) and
        divergences (nc, nloc, nq); DG values are (nc, nloc, nq) with
        divergences None.
        """
        rule = simplex_rule(degree) if degree <= 12 else _high_rule(degree)
        mesh = self.mesh
        wdet = mesh.dets[:, None] * rule.weights[None, :]
        if self.kind == DG_SCALAR:
            ref = reference_dg_basis(self.degree, rule.points)
            vals = np.broadcast_to(ref, (mesh.num_cells,) + ref.shape)
            return rule, wdet, vals, None
        rv, rd = reference_rt_basis(self.degree, rule.points)
        sg = self.cell_signs.astype(float)
        inv_det = 1.0 / mesh.dets
        vals = np.einsum("cij,bqj->cbqi", mesh.jacobians, rv)
        vals *= (sg * inv_det[:, None])[:, :, None, None]
        divs = rd[None, :, :] * (sg * inv_det[:, None])[:, :, None]
        return rule, wdet, vals, divs

    def evaluate(self, coeffs, degree: int = 10):
        """Discrete field at the quadrature points of ``tabulate(degree)``.

        Returns (rule, weights, values, divergences) with values
        (nc, nq) [DG] or (nc, nq, 2) [RT].
        """
        rule, wdet, vals, divs = self.tabulate(degree)
        loc = np.asarray(coeffs)[self.cell_dofs]
        if self.kind == DG_SCALAR:
            return rule, wdet, np.einsum("cb,cbq->cq", loc, vals), None
        return (
            rule,
            wdet,
            np.einsum("cb,cbqi->cqi", loc, vals),
            np.einsum("cb,cbq->cq", loc, divs),
        )


def _high_rule(degree):
    from .quadrature import collapsed_gauss_rule

    return collapsed_gauss_rule(degree)


def build_dg_space(mesh: Mesh, k: int) -> FESpace:
    _check_degree(k)
    nloc = 1 if k == 0 else 3
    nc = mesh.num_cells
    dofs = np.arange(nc * nloc, dtype=np.int64).reshape(nc, nloc)
    return FESpace(DG_SCALAR, k, mesh, 0, nloc, nc * nloc, dofs, np.ones_like(dofs))


def build_rt_space(mesh: Mesh, k: int, zero_normal_trace: bool = False) -> FESpace:
    _check_degree(k)
    ne, nc = mesh.num_edges, mesh.num_cells
    per_edge = k + 1
    interior = 2 if k == 1 else 0
    edge_dofs = mesh.cell_edges[:, :, None] * per_edge + np.arange(per_edge)
    edge_signs = np.repeat(mesh.cell_edge_signs[:, :, None], per_edge, axis=2).copy()
    if k == 1:
        edge_signs[:, :, 1] = 1  # odd weight flips together with the normal
    dofs = [edge_dofs.reshape(nc, -1)]
    signs = [edge_signs.reshape(nc, -1)]
    if interior:
        dofs.append(ne * per_edge + np.arange(nc * interior).reshape(nc, interior))
        signs.append(np.ones((nc, interior), dtype=np.int64))
    cell_dofs = np.hstack(dofs).astype(np.int64)
    cell_signs = np.hstack(signs).astype(np.int64)
    total = ne * per_edge + nc * interior
    constrained = np.zeros(0, dtype=np.int64)
    if zero_normal_trace:
        constrained = (
            mesh.boundary_edges[:, None] * per_edge + np.arange(per_edge)
        ).ravel()
    return FESpace(
        RT_VECTOR, k, mesh, per_edge, interior, total, cell_dofs, cell_signs, constrained
    )


# ----------------------------------------------------- projection/interpolation


def _call(f, x, y, t):
    return f(x, y) if t is None else f(x, y, t)


def project_l2(space: FESpace, f, t=None, degree: int = 16) -> np.ndarray:
    """L2 projection of a scalar function onto a DG space (cellwise solves).

    The default quadrature is well beyond the polynomial degree so that
    smooth non-polynomial data are integrated to round-off on moderate meshes.
    """
    if space.kind != DG_SCALAR:
        raise ValueError("project_l2 needs a DG_SCALAR space")
    rule, wdet, vals, _ = space.tabulate(degree)
    pts = space.mesh.map_to_physical(rule.points)
    fv = np.broadcast_to(_call(f, pts[..., 0], pts[..., 1], t), wdet.shape)
    rhs = np.einsum("cq,cbq,cq->cb", wdet, vals, fv)
    M = np.einsum("cq,caq,cbq->cab", wdet, vals, vals)
    coeffs = np.linalg.solve(M, rhs[..., None])[..., 0]
    out = np.empty(space.total_dofs)
    out[space.cell_dofs] = coeffs
    return out


def interpolate_rt(space: FESpace, f, t=None, degree: int = 20) -> np.ndarray:
    """Canonical (Fortin) RT interpolant: the DoF functionals of ``f``.

    ``f(x, y)`` returns the two components stacked on the first axis.  The
    commuting identity ``div F_h f = P_h div f`` holds up to the accuracy of
    the moment quadrature, hence the high default ``degree``.
    """
    if space.kind != RT_VECTOR:
        raise ValueError("interpolate_rt needs an RT_VECTOR space")
    mesh = space.mesh
    J, det = mesh.jacobians, mesh.dets
    Jinv = np.linalg.inv(J)

    def pulled_back(ref_pts):
        pts = mesh.map_to_physical(ref_pts)
        fx, fy = _call(f, pts[..., 0], pts[..., 1], t)
        vals = np.stack(np.broadcast_arrays(fx, fy), axis=-1)
        return det[:, None, None] * np.einsum("cij,cqj->cqi", Jinv, vals)

    local = reference_rt_dofs(space.degree, pulled_back, degree) * space.cell_signs
    out = np.zeros(space.total_dofs)
    out[space.cell_dofs] = local
    return out
