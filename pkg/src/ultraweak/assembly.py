"""Global sparse operators and the block saddle-point system.

Forms assembled here (``u``, ``v`` in the DG space, ``sigma``, ``tau``,
``phi``, ``psi`` in RT spaces)::

    A[i, j]   = (div phi_j, div phi_i)               divdiv
    C[i, j]   = (phi_j, phi_i)                       vector mass
    Bm[i, q]  = (tau_q, psi_i)                       psi rows, sigma columns
    Bd[i, p]  = (v_p, div psi_i)                     psi rows, u columns
    Mu[p, q]  = (v_q, v_p)                           scalar mass

Unknowns are ordered ``[u | sigma | phi | (mu)]``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.sparse.linalg import splu

from .spaces import DG_SCALAR, RT_VECTOR, FESpace

SIMPLY_SUPPORTED = "SIMPLY_SUPPORTED"
CAHN_HILLIARD = "CAHN_HILLIARD"

NEAR_SINGULAR_PIVOT_RATIO = 1e-12


class SingularSystemError(RuntimeError):
    """Raised when the global matrix cannot be factorised."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class NearSingularWarning(RuntimeWarning):
    pass


def assembly_degree(k: int) -> int:
    """Quadrature exactness used for the bilinear and nonlinear forms."""
    return 2 * k + 4


LOAD_DEGREE = 10


def _scatter(row_space: FESpace, col_space: FESpace, local: np.ndarray) -> sp.csr_matrix:
    """Triplet accumulation with duplicate summation on compression."""
    rs = row_space.cell_signs[:, :, None] * col_space.cell_signs[:, None, :]
    vals = local * rs
    nr, nc_ = row_space.local_dim, col_space.local_dim
    rows = np.repeat(row_space.cell_dofs, nc_, axis=1).ravel()
    cols = np.tile(col_space.cell_dofs, (1, nr)).ravel()
    A = sp.coo_matrix(
        (vals.ravel(), (rows, cols)),
        shape=(row_space.total_dofs, col_space.total_dofs),
    )
    return A.tocsr()


def _unsigned(space: FESpace, degree: int):
    """Tabulation with the orientation signs removed (re-applied in _scatter)."""
    rule, wdet, vals, divs = space.tabulate(degree)
    if space.kind == DG_SCALAR:
        return wdet, vals, None
    sg = space.cell_signs.astype(float)
    return wdet, vals * sg[:, :, None, None], divs * sg[:, :, None]


def _require(space, kind, what):
    if space.kind != kind:
        raise ValueError(f"{what} needs a {kind} space, got {space.kind}")


def assemble_divdiv(space_sigma: FESpace) -> sp.csr_matrix:
    _require(space_sigma, RT_VECTOR, "assemble_divdiv")
    w, _, d = _unsigned(space_sigma, assembly_degree(space_sigma.degree))
    local = np.einsum("cq,caq,cbq->cab", w, d, d)
    return _scatter(space_sigma, space_sigma, local)


def assemble_vector_mass(space_sigma: FESpace, space_psi: FESpace | None = None) -> sp.csr_matrix:
    """Vector mass; with ``space_psi`` the rectangular (psi rows, sigma cols) version."""
    _require(space_sigma, RT_VECTOR, "assemble_vector_mass")
    rows = space_sigma if space_psi is None else space_psi
    if rows.mesh is not space_sigma.mesh:
        raise ValueError("spaces live on different meshes")
    deg = assembly_degree(max(space_sigma.degree, rows.degree))
    w, vc, _ = _unsigned(space_sigma, deg)
    _, vr, _ = _unsigned(rows, deg)
    local = np.einsum("cq,caqi,cbqi->cab", w, vr, vc)
    return _scatter(rows, space_sigma, local)


def assemble_coupling(space_u: FESpace, space_m: FESpace):
    """Blocks of ``b((v, tau), psi) = (tau, psi) + (v, div psi)``.

    Returns ``(Bm, Bd)`` with rows indexed by ``psi`` in ``space_m``;
    ``Bm`` has the sigma-space columns (``space_m`` layout) and ``Bd`` the
    ``space_u`` columns.
    """
    _require(space_u, DG_SCALAR, "assemble_coupling")
    _require(space_m, RT_VECTOR, "assemble_coupling")
    if space_u.mesh is not space_m.mesh:
        raise ValueError("mismatched meshes in assemble_coupling")
    Bm = assemble_vector_mass(space_m)
    deg = assembly_degree(max(space_u.degree, space_m.degree))
    w, _, d = _unsigned(space_m, deg)
    _, v, _ = _unsigned(space_u, deg)
    local = np.einsum("cq,caq,cbq->cab", w, d, v)
    Bd = _scatter(space_m, space_u, local)
    return Bm, Bd


def assemble_scalar_mass(space_u: FESpace) -> sp.csr_matrix:
    _require(space_u, DG_SCALAR, "assemble_scalar_mass")
    w, v, _ = _unsigned(space_u, assembly_degree(space_u.degree))
    local = np.einsum("cq,caq,cbq->cab", w, v, v)
    return _scatter(space_u, space_u, local)


def _gather(space: FESpace, local: np.ndarray) -> np.ndarray:
    out = np.zeros(space.total_dofs)
    np.add.at(out, space.cell_dofs, local)
    return out


def assemble_load(space_u: FESpace, f, t=None, degree: int = LOAD_DEGREE) -> np.ndarray:
    """Load vector ``int f v_p``; ``f(x, y)`` or ``f(x, y, t)`` when ``t`` is given."""
    _require(space_u, DG_SCALAR, "assemble_load")
    rule, w, v, _ = space_u.tabulate(degree)
    pts = space_u.mesh.map_to_physical(rule.points)
    x, y = pts[..., 0], pts[..., 1]
    fv = np.broadcast_to(f(x, y) if t is None else f(x, y, t), w.shape)
    return _gather(space_u, np.einsum("cq,cbq->cb", w * fv, v))


def assemble_mean_vector(space_u: FESpace) -> np.ndarray:
    _require(space_u, DG_SCALAR, "assemble_mean_vector")
    _, w, v, _ = space_u.tabulate(assembly_degree(space_u.degree))
    return _gather(space_u, np.einsum("cq,cbq->cb", w, v))


def g(u):
    return u**3 - u


def dg(u):
    return 3.0 * u**2 - 1.0


def assemble_nonlinear(space_u: FESpace, u_coeffs: np.ndarray):
    """Residual ``int g(u_h) v_p`` and Jacobian ``int g'(u_h) v_q v_p``."""
    _require(space_u, DG_SCALAR, "assemble_nonlinear")
    rule, w, v, _ = space_u.tabulate(assembly_degree(space_u.degree))
    uq = np.einsum("cb,cbq->cq", np.asarray(u_coeffs)[space_u.cell_dofs], v)
    res = _gather(space_u, np.einsum("cq,cbq->cb", w * g(uq), v))
    local = np.einsum("cq,caq,cbq->cab", w * dg(uq), v, v)
    return res, _scatter(space_u, space_u, local)


# ------------------------------------------------------------- block system


@dataclass
class BlockSystem:
    """Assembled blocks of the (time-discrete) three-field saddle problem.

    ``dt = inf`` denotes the stationary biharmonic problem, for which the
    scalar mass and the vector mass ``C`` drop out and ``gamma`` is 1.
    """

    A: sp.csr_matrix
    C: sp.csr_matrix
    Bm: sp.csr_matrix
    Bd: sp.csr_matrix
    Mu: sp.csr_matrix
    m: np.ndarray | None
    gamma: float
    dt: float
    bc: str
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def stationary(self) -> bool:
        return bool(np.isinf(self.dt))

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return (self.Mu.shape[0], self.A.shape[0], self.Bm.shape[0], 0 if self.m is None else 1)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    @property
    def size(self) -> int:
        return int(sum(self.sizes))

    def split(self, x):
        o = self.offsets
        mu = float(x[o[3]]) if self.m is not None else None
        return x[o[0]:o[1]], x[o[1]:o[2]], x[o[2]:o[3]], mu

    def eliminated(self) -> np.ndarray:
        """Global indices of the eliminated sigma and phi DoFs."""
        o = self.offsets
        return np.concatenate([o[1] + self.constrained, o[2] + self.constrained])

    def matrix(self, uu_extra=None) -> sp.csr_matrix:
        """Compose the global matrix (constraint row scaled by gamma).

        ``uu_extra`` is added to the u-u block (e.g. the nonlinear Jacobian).
        """
        nu = self.sizes[0]
        if self.stationary:
            gam = 1.0
            Kuu = sp.csr_matrix((nu, nu))
            Kss = self.A
        else:
            gam = self.gamma
            Kuu = self.Mu / self.dt
            Kss = gam * self.A + self.C
        if uu_extra is not None:
            Kuu = Kuu + uu_extra
        blocks = [
            [Kuu, None, gam * self.Bd.T],
            [None, Kss, gam * self.Bm.T],
            [gam * self.Bd, gam * self.Bm, None],
        ]
        if self.m is not None:
            col = sp.csr_matrix(self.m[:, None])
            for row in blocks:
                row.append(None)
            blocks[0][3] = col
            blocks.append([col.T, None, None, None])
        K = sp.bmat(blocks, format="csr")
        return self._eliminate(K)

    def _eliminate(self, K):
        idx = self.eliminated()
        if idx.size == 0:
            return K
        keep = np.ones(K.shape[0])
        keep[idx] = 0.0
        D = sp.diags(keep)
        return (D @ K @ D + sp.diags(1.0 - keep)).tocsr()

    def constrain_vector(self, r):
        """Zero the eliminated entries of a residual or right-hand side."""
        r = np.array(r, dtype=float)
        r[self.eliminated()] = 0.0
        return r


def apply_zero_normal_trace(system: BlockSystem, constrained_dofs) -> BlockSystem:
    """Mark RT DoFs for symmetric elimination in both sigma and phi."""
    system.constrained = np.asarray(constrained_dofs, dtype=np.int64)
    return system


def assemble_block_system(space_u, space_sigma, space_phi, gamma=1.0, dt=np.inf, bc=SIMPLY_SUPPORTED,
                          mean_constraint=None) -> BlockSystem:
    """Assemble every block; the mean constraint defaults to on for CH."""
    if mean_constraint is None:
        mean_constraint = bc == CAHN_HILLIARD
    A = assemble_divdiv(space_sigma)
    C = assemble_vector_mass(space_sigma)
    Bm = assemble_vector_mass(space_sigma, space_phi)
    _, Bd = assemble_coupling(space_u, space_phi)
    Mu = assemble_scalar_mass(space_u)
    m = assemble_mean_vector(space_u) if mean_constraint else None
    system = BlockSystem(A, C, Bm, Bd, Mu, m, float(gamma), float(dt), bc)
    if bc == CAHN_HILLIARD:
        apply_zero_normal_trace(system, space_sigma.constrained_boundary_dofs)
    return system


# --------------------------------------------------------------- factorisation


PIVOT_THRESHOLD = 1e-4
SADDLE_PIVOT_THRESHOLD = 0.1
RESIDUAL_RTOL = 1e-10


@dataclass
class Factorization:
    lu: object
    matrix: sp.csc_matrix
    pivot_ratio: float
    robust: bool = False

    def solve(self, b, max_refine=3):
        """Solve with iterative refinement.

        If the relative residual stays above ``RESIDUAL_RTOL`` the matrix is
        refactorised once with full partial pivoting and the solve repeated.
        """
        b = np.asarray(b, dtype=float)
        nb = np.linalg.norm(b)
        if nb == 0:
            return np.zeros_like(b)
        x = self.lu.solve(b)
        for _ in range(max_refine):
            r = b - self.matrix @ x
            if np.linalg.norm(r) <= 1e-2 * RESIDUAL_RTOL * nb:
                break
            x += self.lu.solve(r)
        if np.linalg.norm(b - self.matrix @ x) > RESIDUAL_RTOL * nb and not self.robust:
            self.lu = _splu(self.matrix, robust=True)
            self.robust = True
            return self.solve(b, max_refine)
        return x

    def residual(self, x, b) -> float:
        """Relative residual ``|Kx - b| / |b|``."""
        nb = np.linalg.norm(b)
        r = np.linalg.norm(self.matrix @ x - b)
        return r / nb if nb else r


def _structural_defect(K: sp.csc_matrix):
    match = maximum_bipartite_matching(K.astype(bool).astype(np.int8).tocsr(), perm_type="column")
    bad = np.flatnonzero(match < 0)
    return int(bad[0]) if bad.size else None


class _PermutedLU:
    """SuperLU factors of ``K[order][:, order]`` behind the ``SuperLU`` solve API."""

    def __init__(self, lu, order):
        self._lu = lu
        self.order = order
        self.L, self.U = lu.L, lu.U
        self.perm_c = np.empty_like(order)
        self.perm_c[order] = lu.perm_c

    def solve(self, b):
        x = np.empty_like(b)
        x[self.order] = self._lu.solve(b[self.order])
        return x


def _dense_lines(K: sp.csc_matrix) -> np.ndarray:
    n = K.shape[0]
    limit = max(64, int(10 * np.sqrt(n)))
    col = np.diff(K.indptr)
    row = np.bincount(K.indices, minlength=n)
    return np.flatnonzero((col > limit) | (row > limit))


def _core_order(K: sp.csc_matrix, dense: np.ndarray, normal: bool) -> np.ndarray:
    # Minimum degree on the sparse core only; a bordered row/column (such as
    # the mean constraint) would otherwise make the ordering graph dense.
    n = K.shape[0]
    core = np.setdiff1d(np.arange(n), dense)
    Kc = abs(K[core][:, core])
    S = (Kc.T @ Kc if normal else Kc + Kc.T).tocsc()
    S.data[:] = 1.0
    S = S + sp.diags(np.asarray(S.sum(axis=1)).ravel() + 1.0)
    lu = splu(sp.csc_matrix(S), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0)
    return np.concatenate([core[np.argsort(lu.perm_c)], dense])


def _splu(K, robust=False):
    if robust:
        return splu(K, permc_spec="COLAMD", diag_pivot_thresh=1.0)
    # Mostly-zero diagonal (stationary problem, or u block cancelling at
    # u = 0 with dt = 1): order on K^T K with firmer pivoting.  Otherwise a
    # symmetric order with weak threshold pivoting keeps the fill close to
    # that of a symmetric factorisation.
    saddle = np.count_nonzero(K.diagonal() == 0) > K.shape[0] // 2
    thresh = SADDLE_PIVOT_THRESHOLD if saddle else PIVOT_THRESHOLD
    dense = _dense_lines(K)
    if dense.size == 0:
        spec = "MMD_ATA" if saddle else "MMD_AT_PLUS_A"
        return splu(K, permc_spec=spec, diag_pivot_thresh=thresh)
    order = _core_order(K, dense, normal=saddle)
    Kp = sp.csc_matrix(K[order][:, order])
    lu = splu(Kp, permc_spec="NATURAL", diag_pivot_thresh=thresh)
    return _PermutedLU(lu, order)


def factorize(K: sp.spmatrix) -> Factorization:
    """Sparse LU with threshold partial pivoting; reports singular pivots.

    Structural singularity is located with a maximum bipartite matching
    (the reported row has no admissible pivot).  A ``NearSingularWarning``
    is issued when the ratio of smallest to largest |diag U| falls below
    ``NEAR_SINGULAR_PIVOT_RATIO``.
    """
    K = sp.csc_matrix(K)
    K.eliminate_zeros()
    row = _structural_defect(K)
    if row is not None:
        raise SingularSystemError(f"structurally singular matrix: no pivot for row {row}", row)
    try:
        lu = _splu(K)
    except RuntimeError as exc:
        raise SingularSystemError(f"numerically singular matrix: {exc}") from exc
    d = np.abs(lu.U.diagonal())
    if np.any(d == 0):
        col = int(np.argsort(lu.perm_c)[np.flatnonzero(d == 0)[0]])
        raise SingularSystemError(f"zero pivot at column {col}", col)
    ratio = float(d.min() / d.max())
    if ratio < NEAR_SINGULAR_PIVOT_RATIO:
        warnings.warn(
            f"near-singular system: pivot ratio {ratio:.2e}", NearSingularWarning, stacklevel=2
        )
    return Factorization(lu, K, ratio)


def compose_and_factor(system: BlockSystem, uu_extra=None) -> Factorization:
    return factorize(system.matrix(uu_extra))


def write_matrix(A: sp.spmatrix, path) -> None:
    """Coordinate text export, 0-based ``i j v`` lines."""
    A = sp.coo_matrix(A)
    with open(path, "w") as fh:
        fh.write(f"%%MatrixMarket-like: {A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")


def read_matrix(path) -> sp.csr_matrix:
    with open(path) as fh:
        head = fh.readline().split()
        nr, nc, nnz = (int(t) for t in head[-3:])
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(nr, nc))
