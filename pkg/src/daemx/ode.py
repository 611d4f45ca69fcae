"""Fixed-step RK4 integration on a :class:`TimeGrid`.

Coefficient sources are callables of time.  Each is evaluated once per
half-grid point (nodes and step midpoints), so a step costs one new
midpoint and one new node evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import TimeGrid

BLOWUP_NORM = 1e12
PSD_TOL = 1e-8


class IntegrationError(RuntimeError):
    """Finite-escape or non-finite values during integration."""

    def __init__(self, message: str, node: int, t: float):
        super().__init__(f"{message} at node {node} (t={t:.17g})")
        self.node = node
        self.t = t


@dataclass(frozen=True)
class Trajectory:
    """Vector samples ``values[k]`` at ``grid.nodes[k]``, shape ``(N+1, d)``."""

    grid: TimeGrid
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != len(self.grid):
            raise ValueError(f"trajectory has {v.shape[0]} samples, grid has {len(self.grid)}")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def __call__(self, t: float) -> np.ndarray:
        k, theta = self.grid.locate(t)
        if theta <= 0.0:
            return self.values[k]
        if theta >= 1.0:
            return self.values[k + 1]
        return (1.0 - theta) * self.values[k] + theta * self.values[k + 1]

    def __getitem__(self, k):
        return self.values[k]


def half_grid_times(grid: TimeGrid) -> np.ndarray:
    """Nodes and step midpoints, ``t0 + j h / 2`` for ``j = 0 .. 2N``."""
    t = grid.t0 + 0.5 * grid.h * np.arange(2 * grid.n_steps + 1)
    t[-1] = grid.t_end
    return t


def on_half_grid(grid: TimeGrid, *arrays):
    """Source callable that looks samples up by half-grid index.

    ``arrays`` are indexed along their first axis at ``j = 0 .. 2N``; times
    off the half grid raise ``ValueError``.
    """
    t0, hh = grid.t0, 0.5 * grid.h

    def source(t):
        s = (t - t0) / hh
        j = int(round(s))
        if abs(s - j) > 1e-6:
            raise ValueError(f"t={t} is not on the half grid")
        return arrays[0][j] if len(arrays) == 1 else tuple(a[j] for a in arrays)

    return source


class _HalfGrid:
    """Memoized evaluation of a source at ``t0 + j h / 2``."""

    def __init__(self, source: Callable, grid: TimeGrid):
        self.source = source
        self.grid = grid
        self.cache: dict[int, object] = {}

    def time(self, j: int) -> float:
        if j == 2 * self.grid.n_steps:
            return self.grid.t_end
        return self.grid.t0 + 0.5 * self.grid.h * j

    def __getitem__(self, j: int):
        try:
            return self.cache[j]
        except KeyError:
            val = self.cache[j] = self.source(self.time(j))
            return val


def _rk4(rhs, y0: np.ndarray, grid: TimeGrid, direction: str, check=None) -> np.ndarray:
    """Classical RK4; ``rhs(j, y)`` gets the half-grid index of the stage time."""
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    N, h = grid.n_steps, grid.h
    out = np.empty((N + 1,) + y0.shape)
    if direction == "forward":
        k, step, hs = 0, 1, h
    else:
        k, step, hs = N, -1, -h
    y = np.array(y0, dtype=float)
    out[k] = y
    for _ in range(N):
        j = 2 * k
        k1 = rhs(j, y)
        k2 = rhs(j + step, y + 0.5 * hs * k1)
        k3 = rhs(j + step, y + 0.5 * hs * k2)
        k4 = rhs(j + 2 * step, y + hs * k3)
        y = y + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        k += step
        if check is not None:
            y = check(k, y)
        out[k] = y
    return out


@dataclass(frozen=True)
class RiccatiSolution:
    """Samples of ``K`` and ``dK/dt`` at the grid nodes.

    Calling the object interpolates with cubic Hermite polynomials, which
    keeps fourth-order accuracy at step midpoints.
    """

    grid: TimeGrid
    K: np.ndarray
    Kdot: np.ndarray
    direction: str
    provenance: str = ""

    def __call__(self, t: float) -> np.ndarray:
        k, s = self.grid.locate(t)
        if s <= 0.0:
            return self.K[k]
        if s >= 1.0:
            return self.K[k + 1]
        h = self.grid.h
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return (h00 * self.K[k] + h10 * h * self.Kdot[k]
                + h01 * self.K[k + 1] + h11 * h * self.Kdot[k + 1])

    def half_grid(self) -> np.ndarray:
        """``K`` at nodes (even indices) and Hermite midpoints (odd indices)."""
        h = self.grid.h
        K, D = self.K, self.Kdot
        out = np.empty((2 * len(K) - 1,) + K.shape[1:])
        out[0::2] = K
        out[1::2] = 0.5 * (K[:-1] + K[1:]) + (h / 8.0) * (D[:-1] - D[1:])
        return out

    @property
    def terminal(self) -> np.ndarray:
        return self.K[-1] if self.direction == "forward" else self.K[0]

    @property
    def symmetry_error(self) -> float:
        return float(np.max(np.abs(self.K - np.swapaxes(self.K, 1, 2)), initial=0.0))

    @property
    def min_eigenvalue(self) -> float:
        if self.K.shape[1] == 0:
            return 0.0
        return float(np.linalg.eigvalsh(self.K).min())


def riccati_rhs(K, Cc, Qc, Sc):
    """``Cc K + K Cc' - K Qc K + Sc``."""
    CK = Cc @ K
    return CK + CK.T - K @ Qc @ K + Sc


def integrate_riccati(coeff_source: Callable[[float], tuple], grid: TimeGrid,
                      direction: str = "forward", initial=None, provenance: str = "",
                      blowup: float = BLOWUP_NORM) -> RiccatiSolution:
    """Integrate ``dK/dt = Cc K + K Cc' - K Qc K + Sc`` with ``K = initial``.

    ``coeff_source(t)`` returns ``(Cc, Qc, Sc)``.  ``initial`` defaults to
    zero and is imposed at ``t0`` (forward) or ``t_end`` (backward).  ``K``
    is symmetrized after every step.
    """
    coeffs = _HalfGrid(coeff_source, grid)
    r = np.atleast_2d(coeffs[0][0]).shape[0]
    K0 = np.zeros((r, r)) if initial is None else np.array(initial, dtype=float).reshape(r, r)

    def rhs(j, K):
        Cc, Qc, Sc = coeffs[j]
        return riccati_rhs(K, Cc, Qc, Sc)

    def check(k, K):
        K = 0.5 * (K + K.T)
        nrm = np.linalg.norm(K)
        if not np.isfinite(nrm) or nrm > blowup:
            raise IntegrationError("Riccati solution escaped", k, float(grid.nodes[k]))
        return K

    K = _rk4(rhs, K0, grid, direction, check)
    Kdot = np.array([rhs(2 * k, K[k]) for k in range(len(grid))])
    sol = RiccatiSolution(grid, K, Kdot, direction, provenance)
    if r:
        lam = np.linalg.eigvalsh(K).min(axis=1)
        bad = np.flatnonzero(lam < -PSD_TOL * np.maximum(1.0, np.linalg.norm(K, axis=(1, 2))))
        if bad.size:
            raise IntegrationError(f"Riccati solution lost positivity (min eig {lam[bad[0]]:.3e})",
                                   int(bad[0]), float(grid.nodes[bad[0]]))
    return sol


def integrate_linear(rhs_source: Callable[[float], tuple], grid: TimeGrid, direction: str,
                     initial, label: str = "", blowup: float = BLOWUP_NORM) -> Trajectory:
    """Integrate ``dx/dt = Amat(t) x + forcing(t)``.

    ``rhs_source(t)`` returns ``(Amat, forcing)``; ``forcing`` may be
    ``None``.  ``initial`` is imposed at ``t0`` (forward) or ``t_end``
    (backward).
    """
    src = _HalfGrid(rhs_source, grid)
    x0 = np.asarray(initial, dtype=float).reshape(-1)

    def rhs(j, x):
        Am, g = src[j]
        dx = Am @ x
        return dx if g is None else dx + g

    def check(k, x):
        nrm = np.linalg.norm(x)
        if not np.isfinite(nrm) or nrm > blowup:
            raise IntegrationError("linear solution escaped", k, float(grid.nodes[k]))
        return x

    return Trajectory(grid, _rk4(rhs, x0, grid, direction, check), label)


def quadrature(values, grid: TimeGrid | None = None) -> float:
    """Composite trapezoid rule over the grid nodes."""
    if isinstance(values, Trajectory):
        grid, v = values.grid, values.values
    else:
        v = np.asarray(values, dtype=float)
    if grid is None:
        raise ValueError("a grid is required for raw samples")
    if v.ndim > 1:
        v = v.reshape(v.shape[0], -1)
        if v.shape[1] != 1:
            raise ValueError("quadrature expects scalar samples")
        v = v[:, 0]
    return float(np.trapezoid(v, dx=grid.h))
