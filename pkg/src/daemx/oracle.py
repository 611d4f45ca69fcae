"""Global trapezoidal solution of the Euler-Lagrange boundary-value systems.

This module is deliberately independent of the recursive filters: no
Riccati equation and no RK4 step is involved.  Both boundary-value
problems are written at every grid node, assembled into one sparse linear
system and solved directly.  Agreement with :mod:`daemx.estimator` is
therefore evidence rather than shared bias.

Regularized system (canonical coordinates, ``eps > 0``)::

    p1' = C1 p1 + C2 p2 + eps (Q1 z1 + Q2 z2)
    z1' = -C1' z1 - C3' z2 + p1 + (S1 p1 + S2 p2) / eps
    0   = C3 p1 + C4 p2 + eps (Q2' z1 + Q4 z2)
    0   = -eps (C2' z1 + C4' z2) + S2' p1 + (eps I + S4) p2
    p1(t0) = 0,   z1(T) + p1(T) = l1

Limit system under the range condition::

    p1' = Cplus p1 + Splus z1,   z1' = -Cplus' z1 + Qplus p1
    p1(t0) = 0,   z1(T) = l1
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .canonical import CanonicalModel
from .coeffs import limit_coeffs
from .model import TimeGrid
from .ode import Trajectory, quadrature


class OracleError(RuntimeError):
    pass


def _tr(X):
    return np.swapaxes(X, -1, -2)


@dataclass(frozen=True)
class BvpSolution:
    """Discrete solution of one boundary-value problem.

    ``p`` stacks ``(p1, p2)`` (n-dim), ``z`` stacks ``(z1, z2)`` (m-dim),
    both in canonical coordinates.  ``u_hat`` is the optimal observation
    weight, so that the estimate for observations ``y`` is
    ``int <y, u_hat> dt``.
    """

    grid: TimeGrid
    p: Trajectory
    z: Trajectory
    u_hat: Trajectory
    sigma: float
    residual_norm: float
    r: int
    eps: float | None = None
    matrix: sp.spmatrix | None = None
    # raw trapezoid solutions on h and h/2 behind an extrapolated result
    parts: "tuple[BvpSolution, BvpSolution] | None" = None

    @property
    def p1(self) -> np.ndarray:
        return self.p.values[:, : self.r]

    @property
    def z1(self) -> np.ndarray:
        return self.z.values[:, : self.r]

    def raw_estimate(self, y) -> float:
        """``int <y, u_hat> dt`` by the trapezoid rule on this grid."""
        y = np.asarray(y.values if isinstance(y, Trajectory) else y, dtype=float)
        y = y.reshape(len(self.grid), -1)
        return quadrature(np.sum(y * self.u_hat.values, axis=1), self.grid)

    def estimate(self, y) -> float:
        """``int <y, u_hat> dt`` with ``y`` linear between nodes.

        With a refined companion solution the two trapezoid values are
        Richardson-extrapolated, removing the ``h^2`` term.
        """
        y = np.asarray(y.values if isinstance(y, Trajectory) else y, dtype=float)
        y = y.reshape(len(self.grid), -1)
        if self.parts is None:
            return self.raw_estimate(y)
        coarse, fine = self.parts
        yf = np.empty((2 * len(y) - 1, y.shape[1]))
        yf[0::2] = y
        yf[1::2] = 0.5 * (y[:-1] + y[1:])
        return (4.0 * fine.raw_estimate(yf) - coarse.raw_estimate(y)) / 3.0


def _block_rows(blocks: np.ndarray, col_offset: int, ncols: int) -> sp.csr_matrix:
    """Sparse matrix whose k-th row block is ``blocks[k]`` at column ``col_offset + k d``."""
    K, a, d = blocks.shape
    rows = np.arange(K)[:, None, None] * a + np.arange(a)[None, :, None]
    cols = col_offset + np.arange(K)[:, None, None] * d + np.arange(d)[None, None, :]
    rows, cols = np.broadcast_arrays(rows, cols)
    return sp.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(K * a, ncols))


def _assemble(G: np.ndarray, L: np.ndarray | None, E: np.ndarray, h: float,
              bc_rows: np.ndarray, bc_rhs: np.ndarray):
    """Trapezoid rows ``E (u_{k+1} - u_k) - h/2 (G_k u_k + G_{k+1} u_{k+1}) = 0``.

    ``G`` (N+1, q, d) is the dynamic part, ``L`` (N+1, a, d) the algebraic
    rows imposed at every node, ``bc_rows`` act on the stacked unknowns.
    """
    N1, q, d = G.shape
    ncols = N1 * d
    left = -E[None] - 0.5 * h * G[:-1]
    right = E[None] - 0.5 * h * G[1:]
    parts = [_block_rows(left, 0, ncols) + _block_rows(right, d, ncols)]
    if L is not None and L.shape[1]:
        parts.append(_block_rows(L, 0, ncols))
    parts.append(sp.csr_matrix(bc_rows))
    A = sp.vstack(parts, format="csc")
    b = np.zeros(A.shape[0])
    b[-len(bc_rhs):] = bc_rhs
    return A, b


def _solve(A, b):
    x = spsolve(A, b)
    if not np.all(np.isfinite(x)):
        raise OracleError("discrete boundary-value system is singular")
    res = np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1.0)
    return x, float(res)


def _boundary(N1: int, d: int, r: int, z_terminal_extra: bool):
    """Rows for ``p1(t0) = 0`` and ``z1(T) [+ p1(T)] = l1``; unknowns start with (p1, z1)."""
    bc = np.zeros((2 * r, N1 * d))
    last = (N1 - 1) * d
    for i in range(r):
        bc[i, i] = 1.0
        bc[r + i, last + r + i] = 1.0
        if z_terminal_extra:
            bc[r + i, last + i] = 1.0
    return bc


def _refined(cm: CanonicalModel) -> CanonicalModel:
    # sampled tables interpolate at any time, so bypass the regridding guard
    return CanonicalModel(replace(cm.model, grid=cm.grid.refined(2)), cm.reduction)


def _richardson(coarse: BvpSolution, fine: BvpSolution) -> BvpSolution:
    """Combine trapezoid solutions on ``h`` and ``h/2`` at the coarse nodes."""
    ex = lambda a, b: (4.0 * b[::2] - a) / 3.0  # noqa: E731
    g = coarse.grid
    return BvpSolution(
        g, Trajectory(g, ex(coarse.p.values, fine.p.values), "p"),
        Trajectory(g, ex(coarse.z.values, fine.z.values), "z"),
        Trajectory(g, ex(coarse.u_hat.values, fine.u_hat.values), "u_hat"),
        (4.0 * fine.sigma - coarse.sigma) / 3.0,
        max(coarse.residual_norm, fine.residual_norm), coarse.r, coarse.eps,
        coarse.matrix, (coarse, fine))


def solve_regularized_bvp(cm: CanonicalModel, ell, eps: float, extrapolate: bool = True,
                          keep_matrix: bool = False) -> BvpSolution:
    """Solve the regularized Euler-Lagrange system for ``eps > 0``.

    The error of the corresponding estimate is
    ``(<l1 - p1(T), p1(T)> - int |p|^2 dt) / eps``.  With ``extrapolate``
    the system is also solved on the once-refined grid and the results are
    Richardson-extrapolated to fourth order at the model nodes.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    sol = _regularized(cm, ell, eps, keep_matrix)
    if extrapolate:
        sol = _richardson(sol, _regularized(_refined(cm), ell, eps, False))
    return sol


def _regularized(cm: CanonicalModel, ell, eps: float, keep_matrix: bool) -> BvpSolution:
    grid, r, n, m = cm.grid, cm.r, cm.n, cm.m
    nr, mr = n - r, m - r
    l1, _ = cm.split_direction(ell)
    b = cm.blocks(grid.nodes)
    N1 = len(grid)
    d = 2 * r + nr + mr
    # unknown layout per node: p1, z1, p2, z2
    ip1, iz1, ip2, iz2 = (slice(0, r), slice(r, 2 * r), slice(2 * r, 2 * r + nr),
                          slice(2 * r + nr, d))

    G = np.zeros((N1, 2 * r, d))
    G[:, :r, ip1] = b.C1
    G[:, :r, ip2] = b.C2
    G[:, :r, iz1] = eps * b.Q1
    G[:, :r, iz2] = eps * b.Q2
    G[:, r:, iz1] = -_tr(b.C1)
    G[:, r:, iz2] = -_tr(b.C3)
    G[:, r:, ip1] = np.eye(r) + b.S1 / eps
    G[:, r:, ip2] = b.S2 / eps

    L = np.zeros((N1, mr + nr, d))
    L[:, :mr, ip1] = b.C3
    L[:, :mr, ip2] = b.C4
    L[:, :mr, iz1] = eps * _tr(b.Q2)
    L[:, :mr, iz2] = eps * b.Q4
    L[:, mr:, iz1] = -eps * _tr(b.C2)
    L[:, mr:, iz2] = -eps * _tr(b.C4)
    L[:, mr:, ip1] = _tr(b.S2)
    L[:, mr:, ip2] = eps * np.eye(nr) + b.S4

    E = np.zeros((2 * r, d))
    E[:, : 2 * r] = np.eye(2 * r)
    A, rhs = _assemble(G, L, E, grid.h, _boundary(N1, d, r, True), l1)
    x, res = _solve(A, rhs)
    U = x.reshape(N1, d)
    p = np.hstack([U[:, ip1], U[:, ip2]])
    z = np.hstack([U[:, iz1], U[:, iz2]])
    u_hat = np.einsum("kij,kjl,kl->ki", b.R, b.H, p) / eps
    p1T = p[-1, :r]
    sigma = (np.dot(l1 - p1T, p1T) - quadrature(np.sum(p**2, axis=1), grid)) / eps
    return BvpSolution(grid, Trajectory(grid, p, "p"), Trajectory(grid, z, "z"),
                       Trajectory(grid, u_hat, "u_hat"), float(sigma), res, r, float(eps),
                       A if keep_matrix else None)


def split_reconstruct(cm: CanonicalModel, p1: np.ndarray, z1: np.ndarray, eps: float):
    """Recover ``(p2, z2)`` from ``(p1, z1)`` through the two algebraic equations."""
    grid, r, n, m = cm.grid, cm.r, cm.n, cm.m
    nr, mr = n - r, m - r
    b = cm.blocks(grid.nodes)
    N1 = len(grid)
    Mat = np.zeros((N1, mr + nr, mr + nr))
    Mat[:, :mr, :mr] = eps * b.Q4
    Mat[:, :mr, mr:] = b.C4
    Mat[:, mr:, :mr] = -eps * _tr(b.C4)
    Mat[:, mr:, mr:] = eps * np.eye(nr) + b.S4
    top = -(np.einsum("kij,kj->ki", b.C3, p1) + eps * np.einsum("kji,kj->ki", b.Q2, z1))
    bot = eps * np.einsum("kji,kj->ki", b.C2, z1) - np.einsum("kji,kj->ki", b.S2, p1)
    sol = np.linalg.solve(Mat, np.concatenate([top, bot], axis=1)[..., None])[..., 0]
    return sol[:, mr:], sol[:, :mr]


def solve_regular_bvp(cm: CanonicalModel, ell, extrapolate: bool = True,
                      keep_matrix: bool = False) -> BvpSolution:
    """Solve the limit Hamilton system; the error is ``<l1, p1(T)>``.

    ``p2 = W0+ (B z1 - A' p1)`` and ``z2 = -Q4^-1 (C3 p1 + C4 p2 + Q2' z1)``.
    ``extrapolate`` as in :func:`solve_regularized_bvp`.
    """
    sol = _regular(cm, ell, keep_matrix)
    if extrapolate:
        sol = _richardson(sol, _regular(_refined(cm), ell, False))
    return sol


def _regular(cm: CanonicalModel, ell, keep_matrix: bool) -> BvpSolution:
    grid, r = cm.grid, cm.r
    l1, _ = cm.split_direction(ell)
    b = cm.blocks(grid.nodes)
    lc = limit_coeffs(cm, grid.nodes, blocks=b)
    N1, d = len(grid), 2 * r
    G = np.zeros((N1, d, d))
    G[:, :r, :r] = lc.Cplus
    G[:, :r, r:] = lc.Splus
    G[:, r:, r:] = -_tr(lc.Cplus)
    G[:, r:, :r] = lc.Qplus
    A, rhs = _assemble(G, None, np.eye(d), grid.h, _boundary(N1, d, r, False), l1)
    x, res = _solve(A, rhs)
    U = x.reshape(N1, d)
    p1, z1 = U[:, :r], U[:, r:]
    p2 = np.einsum("kij,kj->ki", lc.Wplus,
                   np.einsum("kij,kj->ki", lc.B, z1) - np.einsum("kji,kj->ki", lc.A, p1))
    rhs2 = (np.einsum("kij,kj->ki", b.C3, p1) + np.einsum("kij,kj->ki", b.C4, p2)
            + np.einsum("kji,kj->ki", b.Q2, z1))
    z2 = -np.linalg.solve(b.Q4, rhs2[..., None])[..., 0] if cm.m > r else rhs2
    p = np.hstack([p1, p2])
    z = np.hstack([z1, z2])
    u_hat = np.einsum("kij,kjl,kl->ki", b.R, b.H, p)
    sigma = float(np.dot(l1, p1[-1]))
    return BvpSolution(grid, Trajectory(grid, p, "p"), Trajectory(grid, z, "z"),
                       Trajectory(grid, u_hat, "u_hat"), sigma, res, r, None,
                       A if keep_matrix else None)


def ibp_residual(F, x, w, grid: TimeGrid | None = None) -> float:
    """Discrepancy in the integration-by-parts identity for ``F``.

    For ``x`` (n-dim) and ``w`` (m-dim) trajectories::

        <F'w(T), F+F x(T)> - <F'w(t0), F+F x(t0)>
            = int <(F x)', w> + <(F'w)', x> dt

    Derivatives use second-order finite differences, integrals the
    trapezoid rule.  Returns ``|LHS - RHS|``.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if grid is None:
        grid = x.grid if isinstance(x, Trajectory) else w.grid
    X = Trajectory(grid, x.values if isinstance(x, Trajectory) else x).values
    Wv = Trajectory(grid, w.values if isinstance(w, Trajectory) else w).values
    if X.shape[1] != F.shape[1] or Wv.shape[1] != F.shape[0]:
        raise ValueError("trajectory dimensions do not match F")
    FpF = np.linalg.pinv(F) @ F
    Fx = X @ F.T
    Ftw = Wv @ F
    lhs = Ftw[-1] @ (FpF @ X[-1]) - Ftw[0] @ (FpF @ X[0])
    dFx = np.gradient(Fx, grid.h, axis=0, edge_order=2)
    dFtw = np.gradient(Ftw, grid.h, axis=0, edge_order=2)
    rhs = quadrature(np.sum(dFx * Wv, axis=1) + np.sum(dFtw * X, axis=1), grid)
    return float(abs(lhs - rhs))
