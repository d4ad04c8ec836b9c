"""Discrete Dirichlet solver for div(A grad u) = 0 and the Poisson problem.

Two mesh families:

* simplicial meshes (intervals in 1d, structured polar discs in 2d) with
  conforming P1 elements and interior barycentric quadrature;
* uniform tensor grids in any dimension with trilinear (Q1) elements and
  2^n-point Gauss quadrature per cell, plus a classical face-averaged
  difference scheme for diagonal coefficient fields.

Assembly always yields a symmetric operator, positive definite on the
subspace vanishing at the fixed nodes; systems are solved by conjugate
gradients with a diagonal preconditioner to a relative residual of 1e-10.
Quadrature points are interior to cells, so coefficient evaluators with a
discontinuity at the origin are never sampled there.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay

from .coefficients import CoefficientField, MetricField

__all__ = [
    "SolverError",
    "ResolutionError",
    "SimplexMesh",
    "BoxGrid",
    "DiscreteField",
    "interval_mesh",
    "disc_mesh",
    "box_grid",
    "assemble",
    "assemble_fd",
    "load_vector",
    "pcg",
    "solve_on_nodes",
    "solve_dirichlet",
    "solve_poisson_dirichlet",
    "field_energy",
    "l2_error",
    "gradient_energy_average",
]

PCG_TOL = 1e-10


class SolverError(RuntimeError):
    """Linear solve did not reach the requested residual, or the operator
    failed positive definiteness (a near-null direction is attached as the
    witness)."""

    def __init__(self, message: str, residual: float | None = None, witness=None):
        super().__init__(message)
        self.residual = residual
        self.witness = witness


class ResolutionError(ValueError):
    """A requested radius or time is below the mesh resolution."""

    def __init__(self, message: str, minimum: float | None = None):
        super().__init__(message)
        self.minimum = minimum


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------


class SimplexMesh:
    """Conforming simplicial mesh with precomputed P1 data.

    Attributes: ``vertices`` (V, n), ``cells`` (C, n+1), ``boundary`` boolean
    node mask, ``h`` characteristic size.  Quadrature uses interior
    barycentric points (2-point Gauss on intervals, the degree-2 3-point rule
    on triangles), so cell vertices are never sampled.
    """

    def __init__(self, vertices: np.ndarray, cells: np.ndarray, boundary: np.ndarray, h: float):
        self.dimension = vertices.shape[1]
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.cells = np.ascontiguousarray(cells, dtype=np.int32)
        self.boundary = np.asarray(boundary, dtype=bool)
        self.h = float(h)
        self._build()

    def _build(self):
        n = self.dimension
        X = self.vertices[self.cells]  # (C, n+1, n)
        E = X[:, 1:, :] - X[:, :1, :]  # (C, n, n)
        det = np.linalg.det(E)
        if np.any(det == 0):
            raise ValueError("degenerate cell in mesh")
        self.volumes = np.abs(det) / math.factorial(n)
        # P1 barycentric gradients: rows of inv(E) give grad lambda_1..n
        invE = np.linalg.inv(E)
        grads = np.swapaxes(invE, 1, 2)  # (C, n, n): grad of lambda_k, k=1..n
        g0 = -grads.sum(axis=1, keepdims=True)
        self.grads = np.concatenate([g0, grads], axis=1)  # (C, n+1, n)
        if n == 1:
            bary = np.array([[0.5 - 0.5 / math.sqrt(3), 0.5 + 0.5 / math.sqrt(3)]]).T
            bary = np.column_stack([1 - bary, bary])
            self.qweights_ref = np.array([0.5, 0.5])
        elif n == 2:
            bary = np.array(
                [
                    [2 / 3, 1 / 6, 1 / 6],
                    [1 / 6, 2 / 3, 1 / 6],
                    [1 / 6, 1 / 6, 2 / 3],
                ]
            )
            self.qweights_ref = np.array([1 / 3, 1 / 3, 1 / 3])
        else:
            raise ValueError("simplicial meshes implemented for n in {1, 2}")
        self.qbasis = bary  # (Q, n+1) P1 values at the quadrature points
        self.qpoints = np.einsum("qk,ckn->cqn", bary, X)  # (C, Q, n)
        self.qweights = self.volumes[:, None] * self.qweights_ref[None, :]

    @property
    def num_nodes(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    def field_at_quadrature(self, values: np.ndarray) -> np.ndarray:
        return np.einsum("qk,ck->cq", self.qbasis, values[self.cells])

    def gradient_at_quadrature(self, values: np.ndarray) -> np.ndarray:
        g = np.einsum("ck,ckn->cn", values[self.cells], self.grads)
        return np.broadcast_to(g[:, None, :], self.qpoints.shape)


def interval_mesh(a: float, b: float, cells: int) -> SimplexMesh:
    x = np.linspace(a, b, cells + 1)[:, None]
    c = np.column_stack([np.arange(cells), np.arange(1, cells + 1)])
    bnd = np.zeros(cells + 1, dtype=bool)
    bnd[[0, -1]] = True
    return SimplexMesh(x, c, bnd, (b - a) / cells)


def disc_mesh(radius: float = 1.0, rings: int = 16, cache: bool = True) -> SimplexMesh:
    """Structured polar triangulation of the disc.

    Ring j carries 6j equally spaced vertices at radius j*radius/rings, so
    boundary vertices lie exactly on the circle and the mesh is invariant
    under rotations by multiples of 60 degrees.
    """
    path = None
    if cache:
        cachedir = os.environ.get("LAB_CACHE_DIR", "")
        if cachedir:
            os.makedirs(cachedir, exist_ok=True)
            path = os.path.join(cachedir, f"disc_{radius:g}_{rings}.npz")
            if os.path.exists(path):
                data = np.load(path)
                return SimplexMesh(data["v"], data["c"], data["b"], float(data["h"]))
    pts = [np.zeros((1, 2))]
    for j in range(1, rings + 1):
        ang = 2 * math.pi * np.arange(6 * j) / (6 * j)
        r = radius * j / rings
        pts.append(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))
    verts = np.vstack(pts)
    tri = Delaunay(verts)
    cells = tri.simplices
    # drop degenerate slivers produced by co-circular points
    X = verts[cells]
    area = np.abs(np.linalg.det(X[:, 1:, :] - X[:, :1, :])) / 2
    cells = cells[area > 1e-14 * radius**2]
    bnd = np.linalg.norm(verts, axis=1) >= radius * (1 - 1e-12)
    mesh = SimplexMesh(verts, cells, bnd, radius / rings)
    if path is not None:
        np.savez(path, v=mesh.vertices, c=mesh.cells, b=mesh.boundary, h=mesh.h)
    return mesh


class BoxGrid:
    """Uniform tensor grid on a centered cube, Q1 cells.

    ``cells`` cells per side, ``halfwidth`` half side length; node spacing
    h = 2 * halfwidth / cells.  Node ids follow C order of the (cells+1)^n
    lattice.
    """

    def __init__(self, halfwidth: float, cells: int, n: int, center: np.ndarray | None = None):
        self.dimension = n
        self.halfwidth = float(halfwidth)
        self.cells_per_side = int(cells)
        self.center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        self.h = 2 * self.halfwidth / self.cells_per_side
        self.axis = np.linspace(-halfwidth, halfwidth, cells + 1)
        self.shape = (cells + 1,) * n
        corners = np.stack(np.meshgrid(*[[0, 1]] * n, indexing="ij"), axis=-1).reshape(-1, n)
        self.local_offsets = corners  # (2^n, n) in {0,1}
        # 2-point Gauss per axis, interior to the cell (never a node)
        gauss = np.array([0.5 - 0.5 / math.sqrt(3), 0.5 + 0.5 / math.sqrt(3)])
        qp = np.stack(np.meshgrid(*[gauss] * n, indexing="ij"), axis=-1).reshape(-1, n)
        self.qref = qp  # (Q, n) in the unit cell
        self.qweight = self.h**n / len(qp)
        # Q1 gradients at each reference quadrature point: (Q, 2^n, n)
        G = np.empty((len(qp), len(corners), n))
        for q, xq in enumerate(qp):
            for i, c in enumerate(corners):
                val = np.where(c == 1, xq, 1 - xq)
                for d in range(n):
                    others = np.prod(np.delete(val, d))
                    G[q, i, d] = (1.0 if c[d] == 1 else -1.0) / self.h * others
        self.qgrads = G
        B = np.empty((len(qp), len(corners)))
        for q, xq in enumerate(qp):
            for i, c in enumerate(corners):
                B[q, i] = np.prod(np.where(c == 1, xq, 1 - xq))
        self.qbasis = B

    @property
    def num_nodes(self) -> int:
        return (self.cells_per_side + 1) ** self.dimension

    @property
    def num_cells(self) -> int:
        return self.cells_per_side**self.dimension

    def node_coords(self) -> np.ndarray:
        grids = np.meshgrid(*[self.axis + self.center[d] for d in range(self.dimension)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    @property
    def boundary(self) -> np.ndarray:
        m = self.cells_per_side
        idx = np.stack(
            np.meshgrid(*[np.arange(m + 1)] * self.dimension, indexing="ij"), axis=-1
        ).reshape(-1, self.dimension)
        return np.any((idx == 0) | (idx == m), axis=1)

    def cell_origin_index(self, cell_ids: np.ndarray) -> np.ndarray:
        m = self.cells_per_side
        return np.stack(np.unravel_index(cell_ids, (m,) * self.dimension), axis=-1)

    def cell_nodes(self, cell_ids: np.ndarray) -> np.ndarray:
        """Global node ids of the 2^n corners of each cell."""
        base = self.cell_origin_index(cell_ids)  # (C, n)
        idx = base[:, None, :] + self.local_offsets[None, :, :]
        return np.ravel_multi_index(np.moveaxis(idx, -1, 0), self.shape).astype(np.int64)

    def cell_quad_points(self, cell_ids: np.ndarray) -> np.ndarray:
        base = self.cell_origin_index(cell_ids) * self.h - self.halfwidth
        pts = base[:, None, :] + self.qref[None, :, :] * self.h
        return pts + self.center

    def field_at_quadrature(self, values: np.ndarray, cell_ids: np.ndarray) -> np.ndarray:
        nodal = values[self.cell_nodes(cell_ids)]  # (C, 2^n)
        return nodal @ self.qbasis.T  # (C, Q)

    def gradient_at_quadrature(self, values: np.ndarray, cell_ids: np.ndarray) -> np.ndarray:
        nodal = values[self.cell_nodes(cell_ids)]
        return np.einsum("ck,qkn->cqn", nodal, self.qgrads)


def box_grid(halfwidth: float, cells: int, n: int, center=None) -> BoxGrid:
    return BoxGrid(halfwidth, cells, n, center)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def _coeff_at(A: CoefficientField, pts: np.ndarray) -> np.ndarray:
    a = A(pts)
    return a


def assemble(A: CoefficientField, mesh, chunk: int = 65536) -> sp.csr_matrix:
    """Stiffness matrix of the bilinear form  int <A grad u, grad v>  dx.

    Chunked over cells to bound memory; entries are accumulated exactly once
    per (cell, i, j) and summed by the sparse constructor, which keeps the
    result symmetric up to roundoff.
    """
    if isinstance(mesh, SimplexMesh):
        return _assemble_simplex(A, mesh, chunk)
    return _assemble_grid(A, mesh, chunk)


def _assemble_simplex(A, mesh: SimplexMesh, chunk: int) -> sp.csr_matrix:
    V = mesh.num_nodes
    nloc = mesh.dimension + 1
    K = sp.csr_matrix((V, V))
    for lo in range(0, mesh.num_cells, chunk):
        hi = min(lo + chunk, mesh.num_cells)
        cells = mesh.cells[lo:hi]
        grads = mesh.grads[lo:hi]  # (C, nloc, n)
        local = np.zeros((hi - lo, nloc, nloc))
        for q in range(len(mesh.qweights_ref)):
            aq = _coeff_at(A, mesh.qpoints[lo:hi, q, :])
            w = mesh.qweights[lo:hi, q]
            local += w[:, None, None] * np.einsum("cin,cnm,cjm->cij", grads, aq, grads)
        rows = np.repeat(cells, nloc, axis=1).ravel()
        cols = np.tile(cells, (1, nloc)).ravel()
        K = K + sp.coo_matrix((local.ravel(), (rows, cols)), shape=(V, V)).tocsr()
    return K


def _assemble_grid(A, mesh: BoxGrid, chunk: int) -> sp.csr_matrix:
    V = mesh.num_nodes
    nloc = 2**mesh.dimension
    K = sp.csr_matrix((V, V))
    all_cells = np.arange(mesh.num_cells)
    for lo in range(0, mesh.num_cells, chunk):
        ids = all_cells[lo : min(lo + chunk, mesh.num_cells)]
        qpts = mesh.cell_quad_points(ids)  # (C, Q, n)
        local = np.zeros((len(ids), nloc, nloc))
        for q in range(qpts.shape[1]):
            aq = _coeff_at(A, qpts[:, q, :])
            G = mesh.qgrads[q]  # (nloc, n)
            local += mesh.qweight * np.einsum("in,cnm,jm->cij", G, aq, G)
        nodes = mesh.cell_nodes(ids)
        rows = np.repeat(nodes, nloc, axis=1).ravel()
        cols = np.tile(nodes, (1, nloc)).ravel()
        K = K + sp.coo_matrix((local.ravel(), (rows, cols)), shape=(V, V)).tocsr()
    return K


def assemble_fd(A: CoefficientField, mesh: BoxGrid) -> sp.csr_matrix:
    """Face-averaged difference scheme on a tensor grid, h^n-scaled so the
    quadratic form approximates  int <A grad u, grad u>  dx.

    Only diagonal coefficient fields are admissible; the operator is then a
    weighted graph Laplacian (symmetric, positive semidefinite, discrete
    maximum principle).  Face midpoints never coincide with grid nodes, so
    a discontinuity at the origin is not sampled.
    """
    n, m = mesh.dimension, mesh.cells_per_side
    coords = mesh.node_coords()
    probe = A(coords[:1] + mesh.h * 0.3)
    off = np.abs(probe[0] - np.diag(np.diag(probe[0]))).max()
    if off > 1e-12 * np.abs(probe).max():
        raise ValueError("the difference scheme needs a diagonal coefficient field")
    V = mesh.num_nodes
    scale = mesh.h ** (n - 2)
    rows, cols, vals = [], [], []
    idx = np.arange(V).reshape(mesh.shape)
    for d in range(n):
        sl_lo = [slice(None)] * n
        sl_hi = [slice(None)] * n
        sl_lo[d] = slice(0, m)
        sl_hi[d] = slice(1, m + 1)
        i_lo = idx[tuple(sl_lo)].ravel()
        i_hi = idx[tuple(sl_hi)].ravel()
        mid = (coords[i_lo] + coords[i_hi]) / 2.0
        a_face = A(mid)[:, d, d] * scale
        rows += [i_lo, i_hi, i_lo, i_hi]
        cols += [i_lo, i_hi, i_hi, i_lo]
        vals += [a_face, a_face, -a_face, -a_face]
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(V, V)
    )
    return K.tocsr()


def load_vector(f, mesh, cell_ids: np.ndarray | None = None) -> np.ndarray:
    """Quadrature of  int f phi_i dx  for every P1/Q1 basis function."""
    b = np.zeros(mesh.num_nodes)
    if isinstance(mesh, SimplexMesh):
        fv = f(mesh.qpoints.reshape(-1, mesh.dimension)).reshape(mesh.qpoints.shape[:2])
        contrib = np.einsum("cq,qk,cq->ck", fv, mesh.qbasis, mesh.qweights)
        np.add.at(b, mesh.cells.ravel(), contrib.ravel())
    else:
        ids = np.arange(mesh.num_cells) if cell_ids is None else cell_ids
        qpts = mesh.cell_quad_points(ids)
        fv = f(qpts.reshape(-1, mesh.dimension)).reshape(qpts.shape[:2])
        contrib = mesh.qweight * np.einsum("cq,qk->ck", fv, mesh.qbasis)
        np.add.at(b, mesh.cell_nodes(ids).ravel(), contrib.ravel())
    return b


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


def pcg(
    K: sp.csr_matrix,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float = PCG_TOL,
    maxiter: int | None = None,
) -> tuple[np.ndarray, dict]:
    """Conjugate gradients with the diagonal (Jacobi) preconditioner.

    Stops at ||b - K x|| <= tol * ||b||; raises :class:`SolverError` at the
    iteration cap.  Fixed summation order, deterministic for a fixed matrix.
    """
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), {"iterations": 0, "residual": 0.0}
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    d = K.diagonal()
    d = np.where(d > 0, d, 1.0)
    r = b - K @ x
    z = r / d
    p = z.copy()
    rz = float(r @ z)
    if maxiter is None:
        maxiter = max(2000, 30 * int(math.isqrt(len(b))))
    for it in range(1, maxiter + 1):
        Kp = K @ p
        pKp = float(p @ Kp)
        if pKp <= 0.0:
            raise SolverError(
                f"operator is singular or indefinite (p^T K p = {pKp:g})", witness=p.copy()
            )
        alpha = rz / pKp
        x += alpha * p
        r -= alpha * Kp
        res = float(np.linalg.norm(r))
        if res <= tol * bnorm:
            return x, {"iterations": it, "residual": res / bnorm}
        z = r / d
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"pcg did not reach {tol:g} within {maxiter} iterations", residual=res / bnorm
    )


@dataclass
class DiscreteField:
    """Nodal values over a mesh (P1 on simplices, Q1 on grids)."""

    mesh: object
    values: np.ndarray
    solve_info: dict | None = None

    def boundary_trace(self) -> np.ndarray:
        return self.values[self.mesh.boundary]


def submatrix(K: sp.csr_matrix, idx: np.ndarray) -> sp.csr_matrix:
    """Principal submatrix K[idx, idx] via a single COO pass."""
    V = K.shape[0]
    pos = np.full(V, -1, dtype=np.int64)
    pos[idx] = np.arange(idx.size)
    coo = K.tocoo()
    keep = (pos[coo.row] >= 0) & (pos[coo.col] >= 0)
    return sp.csr_matrix(
        (coo.data[keep], (pos[coo.row[keep]], pos[coo.col[keep]])),
        shape=(idx.size, idx.size),
    )


def solve_on_nodes(
    K: sp.csr_matrix,
    interior: np.ndarray,
    fixed_values: np.ndarray,
    tol: float = PCG_TOL,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, dict]:
    """Solve K u = 0 on ``interior`` nodes with the remaining nodes pinned.

    ``fixed_values`` supplies every node; entries at interior nodes are used
    only as the initial guess (with ``x0`` overriding).  Returns the full
    nodal vector.
    """
    interior = np.asarray(interior, dtype=bool)
    u = np.array(fixed_values, dtype=float)
    idx = np.flatnonzero(interior)
    if idx.size == 0:
        return u, {"iterations": 0, "residual": 0.0}
    ub = u.copy()
    ub[idx] = 0.0
    rhs = -(K @ ub)[idx]
    Kii = submatrix(K, idx)
    guess = (u if x0 is None else np.asarray(x0, dtype=float))[idx]
    sol, info = pcg(Kii, rhs, x0=guess, tol=tol)
    u[idx] = sol
    return u, info


def solve_dirichlet(
    A: CoefficientField,
    mesh,
    boundary_data,
    tol: float = PCG_TOL,
    K: sp.csr_matrix | None = None,
    scheme: str = "fem",
) -> DiscreteField:
    """Discrete energy minimizer with the given boundary trace.

    ``boundary_data`` is a callable on points or a full nodal array; callables
    are also evaluated at interior nodes to warm-start the iteration.
    """
    if K is None:
        K = assemble_fd(A, mesh) if scheme == "fd" else assemble(A, mesh)
    coords = mesh.vertices if isinstance(mesh, SimplexMesh) else mesh.node_coords()
    if callable(boundary_data):
        g = np.asarray(boundary_data(coords), dtype=float)
    else:
        g = np.asarray(boundary_data, dtype=float)
    interior = ~mesh.boundary
    u, info = solve_on_nodes(K, interior, g, tol=tol)
    return DiscreteField(mesh, u, info)


def solve_poisson_dirichlet(
    A: CoefficientField,
    f,
    mesh,
    tol: float = PCG_TOL,
    K: sp.csr_matrix | None = None,
    scheme: str = "fem",
) -> DiscreteField:
    """Zero-trace solution of  int <A grad w, grad phi> = -int f phi  for all
    interior basis functions phi (so w solves Delta_A w = f weakly)."""
    if K is None:
        K = assemble_fd(A, mesh) if scheme == "fd" else assemble(A, mesh)
    if scheme == "fd":
        coords = mesh.node_coords()
        b = -np.asarray(f(coords), dtype=float) * mesh.h**mesh.dimension
    else:
        b = -load_vector(f, mesh)
    interior = ~mesh.boundary
    idx = np.flatnonzero(interior)
    Kii = submatrix(K, idx)
    sol, info = pcg(Kii, b[idx], tol=tol)
    u = np.zeros(mesh.num_nodes)
    u[idx] = sol
    return DiscreteField(mesh, u, info)


def field_energy(K: sp.csr_matrix, values: np.ndarray) -> float:
    """Quadratic form  v^T K v  (the discrete Dirichlet energy)."""
    return float(values @ (K @ values))


def l2_error(u: DiscreteField, exact, mesh=None) -> float:
    """Quadrature L2 distance between the discrete field and a callable."""
    mesh = u.mesh if mesh is None else mesh
    if isinstance(mesh, SimplexMesh):
        uh = mesh.field_at_quadrature(u.values)
        ue = exact(mesh.qpoints.reshape(-1, mesh.dimension)).reshape(uh.shape)
        return math.sqrt(float(np.sum(mesh.qweights * (uh - ue) ** 2)))
    ids = np.arange(mesh.num_cells)
    uh = mesh.field_at_quadrature(u.values, ids)
    qp = mesh.cell_quad_points(ids)
    ue = exact(qp.reshape(-1, mesh.dimension)).reshape(uh.shape)
    return math.sqrt(float(mesh.qweight * np.sum((uh - ue) ** 2)))


def gradient_energy_average(
    u: DiscreteField,
    r: float,
    weight: MetricField | None = None,
    center: np.ndarray | None = None,
    distance: np.ndarray | None = None,
    min_cells: int = 8,
    chunk: int = 65536,
) -> float:
    """Mean of the squared gradient over a ball of radius r.

    Unweighted: (1 / vol) int_{B_r} |grad u|^2 dx with membership decided per
    quadrature point (partial cells contribute their inside points; O(h)
    boundary error).  Weighted: the Riemannian energy
    (1 / vol_g) int g^{ij} d_i u d_j u sqrt(G) dx over the metric ball, with
    membership from a nodal ``distance`` field (Q1-interpolated to the
    quadrature points) when given, else from the Euclidean distance.
    """
    mesh = u.mesh
    n = mesh.dimension
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    num = 0.0
    vol = 0.0
    cells_hit = 0
    if isinstance(mesh, SimplexMesh):
        qp = mesh.qpoints
        gq = mesh.gradient_at_quadrature(u.values)
        if distance is not None:
            d = np.einsum("qk,ck->cq", mesh.qbasis, distance[mesh.cells])
        else:
            d = np.linalg.norm(qp - c, axis=-1)
        inside = d <= r
        if weight is None:
            dens = np.einsum("cqn,cqn->cq", gq, gq)
            w = mesh.qweights
        else:
            gl = weight(qp.reshape(-1, n))
            gi = np.linalg.inv(gl).reshape(qp.shape[0], qp.shape[1], n, n)
            sq = np.sqrt(np.linalg.det(gl)).reshape(qp.shape[:2])
            dens = np.einsum("cqn,cqnm,cqm->cq", gq, gi, gq)
            w = mesh.qweights * sq
        num += float(np.sum(w * dens * inside))
        vol += float(np.sum(w * inside))
        cells_hit += int(np.count_nonzero(inside.any(axis=1)))
    else:
        all_ids = np.arange(mesh.num_cells)
        for lo in range(0, mesh.num_cells, chunk):
            ids = all_ids[lo : min(lo + chunk, mesh.num_cells)]
            qp = mesh.cell_quad_points(ids)
            gq = mesh.gradient_at_quadrature(u.values, ids)
            if distance is not None:
                d = mesh.field_at_quadrature(distance, ids)
            else:
                d = np.linalg.norm(qp - c, axis=-1)
            inside = d <= r
            if not inside.any():
                continue
            if weight is None:
                dens = np.einsum("cqn,cqn->cq", gq, gq)
                w = np.full(dens.shape, mesh.qweight)
            else:
                pts = qp.reshape(-1, n)
                gl = weight(pts)
                gi = np.linalg.inv(gl).reshape(qp.shape[0], qp.shape[1], n, n)
                sq = np.sqrt(np.linalg.det(gl)).reshape(qp.shape[:2])
                dens = np.einsum("cqn,cqnm,cqm->cq", gq, gi, gq)
                w = mesh.qweight * sq
            num += float(np.sum(w * dens * inside))
            vol += float(np.sum(w * inside))
            cells_hit += int(np.count_nonzero(inside.any(axis=1)))
    if cells_hit < min_cells:
        raise ResolutionError(
            f"ball of radius {r:g} meets only {cells_hit} cells (need {min_cells})",
            minimum=min_cells ** (1.0 / n) * mesh.h,
        )
    return num / vol
