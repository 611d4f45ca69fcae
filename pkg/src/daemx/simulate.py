"""Ground truth, admissible inputs and bounded noise.

For the 2x2 example

    x1' = -x1 + x2 + f1,      0 = c3(t) x1 + f2,      x1(0) = 0,

the state component ``x2`` is not determined by the dynamics.  Writing
``c3+`` for the pointwise pseudoinverse of ``c3`` and ``g = c3+ f2``, every
solution has the form

    x2 = -(g + g') - f1 + v,      x1 = -g + exp(-t) g(0) + int_0^t exp(s - t) v(s) ds

where the free part ``v`` must keep ``c3(t) int_0^t exp(s - t) v ds = 0``.
Inputs are built as ``f2 = exp(-1/|c3|) b`` (zero where ``c3`` vanishes),
which keeps ``g`` smooth across the zeros of ``c3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from .model import (DaeModel, MatrixFunction, ModelError, ScalarForm, TimeGrid, default_c3,
                    example_model, exp_sqrt_half, scalar_form, sine)
from .ode import Trajectory, half_grid_times, integrate_linear, on_half_grid, quadrature

NOISE_BUDGET = 0.95
INPUT_BUDGET = 0.95
RESIDUAL_TOL = 1e-6
NOISE_KINDS = ("uniform", "truncated-bimodal")


class SimulationError(RuntimeError):
    pass


def _scalar(f) -> Callable:
    if f is None:
        return lambda t: np.zeros_like(np.asarray(t, dtype=float))
    if isinstance(f, MatrixFunction):
        if f.shape != (1, 1):
            raise ModelError(f"expected a 1x1 function, got {f.shape}")
        return np.vectorize(lambda t: float(f(t)[0, 0]))
    if callable(f):
        return f
    return scalar_form(f)


def default_bump(T: float):
    """``sin(pi t / T)^2``: smooth, vanishing at both ends of ``[0, T]``."""
    s = sine(1.0, math.pi / T)
    return s * s


@dataclass
class ExampleConfig:
    """Inputs for :func:`simulate_example`; ``None`` selects the defaults."""

    T: float = 2.0
    n_steps: int = 2000
    c3: object = None
    b: object = None
    v: object = None
    f1: object = None
    noise_seed: int = 0
    noise_kind: str = "uniform"
    zt: float = 1e-9

    def __post_init__(self):
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"noise_kind must be one of {NOISE_KINDS}, got {self.noise_kind!r}")
        self.grid  # validates T and n_steps

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, float(self.T), int(self.n_steps))

    def c3_fn(self):
        return _scalar(default_c3(self.T) if self.c3 is None else self.c3)

    def b_fn(self):
        return _scalar(default_bump(self.T) if self.b is None else self.b)

    def model(self, blind: bool = False) -> DaeModel:
        """The example model with this configuration's ``c3`` and grid."""
        c3 = self.c3
        if callable(c3) and not isinstance(c3, ScalarForm):
            c3 = ScalarForm("callable", _scalar(c3))
        return example_model(self.T, self.n_steps, c3=c3, blind=blind)


@dataclass
class ExampleSimulation:
    grid: TimeGrid
    x1: Trajectory
    x2: Trajectory
    f1: Trajectory
    f2: Trajectory
    y_clean: Trajectory
    constraint_residual: float
    residual_node: int
    bound_usage: float
    input_scale: float = 1.0
    v_masked: bool = False
    diagnostics: dict = field(default_factory=dict)


def _pinv_scalar(c, zt):
    out = np.zeros_like(c)
    big = np.abs(c) > zt
    out[big] = 1.0 / c[big]
    return out


def _damped(c, b, zt):
    """``exp(-1/|c|) b``, set to zero where ``|c| <= zt``."""
    out = np.zeros_like(c)
    big = np.abs(c) > zt
    out[big] = np.exp(-1.0 / np.abs(c[big])) * b[big]
    return out


def simulate_example(cfg: ExampleConfig, check: bool = True) -> ExampleSimulation:
    """Truth trajectories of the 2x2 example for the inputs in ``cfg``.

    ``v`` is kept only where ``|c3| <= zt``; its convolution must vanish
    wherever ``c3`` does not, which holds for ``v = exp(-s) phi'(s)`` with
    ``phi`` a bump inside a zero interval of ``c3``.  If the input energy
    exceeds one, ``b``, ``f1`` and ``v`` are scaled down to the budget
    :data:`INPUT_BUDGET`.
    """
    grid = cfg.grid
    c3, b, f1, v = cfg.c3_fn(), cfg.b_fn(), _scalar(cfg.f1), _scalar(cfg.v)
    zt = cfg.zt
    th = half_grid_times(grid)
    delta = 1e-5 * (grid.t_end - grid.t0)

    def g_of(t):
        t = np.asarray(t, dtype=float)
        c = np.asarray(c3(t), dtype=float) + 0.0 * t
        return _pinv_scalar(c, zt) * _damped(c, np.asarray(b(t), dtype=float) + 0.0 * t, zt)

    def parts(t):
        t = np.asarray(t, dtype=float)
        c = np.asarray(c3(t), dtype=float) + 0.0 * t
        f2 = _damped(c, np.asarray(b(t), dtype=float) + 0.0 * t, zt)
        g = _pinv_scalar(c, zt) * f2
        dg = (g_of(t + delta) - g_of(t - delta)) / (2.0 * delta)
        vv = np.where(np.abs(c) <= zt, np.asarray(v(t), dtype=float) + 0.0 * t, 0.0)
        ff1 = np.asarray(f1(t), dtype=float) + 0.0 * t
        return c, f2, g, dg, vv, ff1

    c, f2, g, dg, vv, ff1 = parts(th)
    v_masked = bool(np.any(np.asarray(v(th), dtype=float) + 0.0 * th != vv))

    weight = exp_sqrt_half()(grid.nodes)
    usage = quadrature(ff1[0::2] ** 2 + weight * f2[0::2] ** 2, grid)
    scale = 1.0
    if usage > 1.0:
        scale = math.sqrt(INPUT_BUDGET / usage)
        f2, g, dg, vv, ff1 = (scale * a for a in (f2, g, dg, vv, ff1))
        usage = INPUT_BUDGET

    x2 = -(g + dg) - ff1 + vv
    x1 = integrate_linear(on_half_grid(grid, -np.ones((len(th), 1, 1)), (x2 + ff1)[:, None]),
                          grid, "forward", [0.0], "x1")
    cn = c[0::2]
    res = np.abs(cn * x1.values[:, 0] + f2[0::2])
    ref = max(np.max(np.abs(f2)), np.max(np.abs(cn * x1.values[:, 0])), 1e-300)
    rel = float(np.max(res) / ref) if np.any(f2) or np.any(x1.values) else 0.0
    node = int(np.argmax(res))
    if check and rel > RESIDUAL_TOL:
        raise SimulationError(f"algebraic constraint residual {rel:.3e} at node {node} "
                              f"(t={grid.nodes[node]:.17g})")
    x2n = x2[0::2]
    return ExampleSimulation(
        grid, x1, Trajectory(grid, x2n, "x2"), Trajectory(grid, ff1[0::2], "f1"),
        Trajectory(grid, f2[0::2], "f2"), Trajectory(grid, x2n.copy(), "y_clean"),
        rel, node, float(usage), scale, v_masked)


def generate_noise(grid: TimeGrid, R, seed: int = 0, kind: str = "uniform") -> Trajectory:
    """Bounded zero-mean noise with ``E int (R eta, eta) dt = 0.95``.

    Samples are independent per node: ``eta = a R^-1/2 xi`` with unit-variance
    ``xi`` and ``a^2 = 0.95 / (p (T - t0))``.  ``uniform`` draws ``xi`` from
    ``U[-sqrt 3, sqrt 3]``; ``truncated-bimodal`` from a random sign times
    ``0.8 + 0.3 Z`` with ``Z`` standard normal truncated to ``[-2, 2]``,
    normalized to unit variance.
    """
    if kind not in NOISE_KINDS:
        raise ValueError(f"kind must be one of {NOISE_KINDS}, got {kind!r}")
    R = R if isinstance(R, MatrixFunction) else MatrixFunction.constant(R)
    p = R.shape[0]
    N1 = len(grid)
    rng = np.random.default_rng(seed)
    if kind == "uniform":
        xi = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=(N1, p))
    else:
        z = stats.truncnorm.rvs(-2.0, 2.0, size=(N1, p), random_state=rng)
        sign = rng.choice([-1.0, 1.0], size=(N1, p))
        second = 0.64 + 0.09 * stats.truncnorm.var(-2.0, 2.0)
        xi = sign * (0.8 + 0.3 * z) / math.sqrt(second)
    amp = math.sqrt(NOISE_BUDGET / (p * (grid.t_end - grid.t0)))
    Rs = np.array([R(t) for t in grid.nodes]).reshape(N1, p, p)
    lam, V = np.linalg.eigh(0.5 * (Rs + np.swapaxes(Rs, 1, 2)))
    if np.any(lam <= 0):
        raise ModelError("R must be positive definite to scale the noise")
    Rinvh = V @ (V / np.sqrt(lam)[:, None, :]).transpose(0, 2, 1)
    eta = amp * np.einsum("kij,kj->ki", Rinvh, xi)
    return Trajectory(grid, eta, "eta")


def noise_energy(eta: Trajectory, R) -> float:
    """``int (R eta, eta) dt`` by the trapezoid rule."""
    R = R if isinstance(R, MatrixFunction) else MatrixFunction.constant(R)
    Rs = np.array([R(t) for t in eta.grid.nodes]).reshape(len(eta.grid), eta.dim, eta.dim)
    return quadrature(np.einsum("ki,kij,kj->k", eta.values, Rs, eta.values), eta.grid)


def observe(y_clean: Trajectory, eta: Trajectory) -> Trajectory:
    """``y = y_clean + eta`` on a common grid."""
    if y_clean.grid != eta.grid:
        raise ValueError("observation and noise grids differ")
    if y_clean.dim != eta.dim:
        raise ValueError(f"dimension mismatch: {y_clean.dim} vs {eta.dim}")
    return Trajectory(y_clean.grid, y_clean.values + eta.values, "y")


def simulate_full_rank(model: DaeModel, f: Callable[[float], np.ndarray]):
    """Truth for a model with ``F = I``: ``x' = C x + f``, ``x(t0) = 0``.

    Returns ``(x, y_clean)`` with ``y_clean = H x``.
    """
    if model.m != model.n or not np.allclose(model.F, np.eye(model.n), atol=1e-14):
        raise ModelError("simulate_full_rank requires F = I")
    grid = model.grid
    th = half_grid_times(grid)
    Cs = np.array([model.C(t) for t in th]).reshape(len(th), model.n, model.n)
    fs = np.array([np.asarray(f(t), dtype=float).reshape(model.n) for t in th])
    x = integrate_linear(on_half_grid(grid, Cs, fs), grid, "forward", np.zeros(model.n), "x")
    Hs = np.array([model.H(t) for t in grid.nodes]).reshape(len(grid), model.p, model.n)
    return x, Trajectory(grid, np.einsum("kij,kj->ki", Hs, x.values), "y_clean")


SIMULATION_COLUMNS = ("t", "x1", "x2", "f2", "y_clean", "eta", "y")


def simulation_table(sim: ExampleSimulation, eta: Trajectory, y: Trajectory) -> np.ndarray:
    return np.column_stack([sim.grid.nodes, sim.x1.values[:, 0], sim.x2.values[:, 0],
                            sim.f2.values[:, 0], sim.y_clean.values[:, 0],
                            eta.values[:, 0], y.values[:, 0]])


def write_csv(path, header, table: np.ndarray) -> None:
    """Full-precision CSV with a header row."""
    path = Path(path)
    np.savetxt(path, np.asarray(table, dtype=float), fmt="%.17g", delimiter=",",
               header=",".join(header), comments="")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: {data.shape[1]} columns but {len(header)} header fields")
    return header, data
