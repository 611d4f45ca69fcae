"""Problem definition for minimax estimation of descriptor systems.

A model is the tuple ``(F, C, H, Q, R)`` on a uniform time grid describing

    (F x)' = C(t) x + f,      F x(t0) = 0,
    y      = H(t) x + eta,

with the input ``f`` confined to ``int (Q f, f) dt <= 1`` and the noise to
``E int (R eta, eta) dt <= 1``.  Time-varying coefficients are
:class:`MatrixFunction` objects, either closed-form (built from the scalar
registry below) or sampled tables interpolated linearly between nodes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

PD_TOL = 1e-10


class ModelError(ValueError):
    """Raised for malformed model definitions or out-of-range evaluation."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = t0 + k h`` with ``h = (t_end - t0) / n_steps``."""

    t0: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.t0) and math.isfinite(self.t_end)):
            raise ModelError("grid bounds must be finite")
        if self.t_end <= self.t0:
            raise ModelError(f"t_end={self.t_end} must exceed t0={self.t0}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ModelError(f"n_steps must be an integer >= 2, got {self.n_steps}")

    @property
    def h(self) -> float:
        return (self.t_end - self.t0) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n_steps + 1)

    def __len__(self):
        return self.n_steps + 1

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t0, self.t_end, self.n_steps * factor)

    def locate(self, t: float) -> tuple[int, float]:
        """Return ``(k, theta)`` with ``t = t_k + theta h``, ``0 <= theta <= 1``."""
        s = (t - self.t0) / self.h
        k = min(max(int(math.floor(s)), 0), self.n_steps - 1)
        return k, s - k


# ---------------------------------------------------------------------------
# scalar closed forms
# ---------------------------------------------------------------------------


class ScalarForm:
    """A named scalar function of time with its parameters.

    Forms compose by multiplication, ``ScalarForm * ScalarForm`` or with a
    plain number.
    """

    def __init__(self, name: str, fn: Callable[[float], float], params: dict | None = None):
        self.name = name
        self.params = dict(params or {})
        self._fn = fn

    def __call__(self, t):
        return self._fn(t)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            other = constant(float(other))
        if not isinstance(other, ScalarForm):
            return NotImplemented
        a, b = self._fn, other._fn
        return ScalarForm("product", lambda t: a(t) * b(t), {"factors": [self, other]})

    __rmul__ = __mul__

    def __repr__(self):
        return f"ScalarForm({self.name!r}, {self.params!r})"


def constant(value: float = 0.0) -> ScalarForm:
    value = float(value)
    return ScalarForm("constant", lambda t: value + 0.0 * t, {"value": value})


def polynomial(coeffs: Sequence[float]) -> ScalarForm:
    """Polynomial with coefficients in ascending powers of ``t``."""
    c = [float(a) for a in coeffs]
    rev = c[::-1]
    return ScalarForm("polynomial", lambda t: np.polyval(rev, t), {"coeffs": c})


def sine(amplitude: float = 1.0, omega: float = 1.0, phase: float = 0.0) -> ScalarForm:
    a, w, p = float(amplitude), float(omega), float(phase)
    return ScalarForm("sin", lambda t: a * np.sin(w * t + p),
                      {"amplitude": a, "omega": w, "phase": p})


def exp_sqrt_half(scale: float = 1.0) -> ScalarForm:
    """``scale * exp(sqrt(t)) / 2``, defined for ``t >= 0``."""
    s = float(scale)
    return ScalarForm("exp_sqrt_half", lambda t: 0.5 * s * np.exp(np.sqrt(t)), {"scale": s})


def product(factors: Sequence[ScalarForm]) -> ScalarForm:
    out = constant(1.0)
    for f in factors:
        out = out * f
    return out


SCALAR_FORMS: dict[str, Callable[..., ScalarForm]] = {
    "constant": constant,
    "polynomial": polynomial,
    "sin": sine,
    "exp_sqrt_half": exp_sqrt_half,
    "product": product,
}


def scalar_form(entry) -> ScalarForm:
    """Build a :class:`ScalarForm` from a number or a ``{"form": name, ...}`` mapping."""
    if isinstance(entry, ScalarForm):
        return entry
    if isinstance(entry, (int, float)):
        return constant(entry)
    if not isinstance(entry, dict) or "form" not in entry:
        raise ModelError(f"cannot interpret scalar entry {entry!r}")
    params = {k: v for k, v in entry.items() if k != "form"}
    name = params.pop("name", None) or entry["form"]
    if name not in SCALAR_FORMS:
        raise ModelError(f"unknown closed form {name!r}; known: {sorted(SCALAR_FORMS)}")
    if name == "product":
        params["factors"] = [scalar_form(f) for f in params.get("factors", [])]
    try:
        return SCALAR_FORMS[name](**params)
    except TypeError as exc:
        raise ModelError(f"bad parameters for {name!r}: {exc}") from None


# ---------------------------------------------------------------------------
# matrix-valued functions
# ---------------------------------------------------------------------------


class MatrixFunction:
    """Map from time to a ``rows x cols`` real matrix.

    Use the constructors :meth:`constant`, :meth:`from_entries`,
    :meth:`closed_form`, :meth:`sampled` or :meth:`from_callable`.
    """

    def __init__(self, rows: int, cols: int, fn: Callable[[float], np.ndarray],
                 kind: str, table: np.ndarray | None = None, grid: TimeGrid | None = None,
                 description: str = ""):
        self.rows = int(rows)
        self.cols = int(cols)
        self._fn = fn
        self.kind = kind
        self.table = table
        self.grid = grid
        self.description = description

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def __call__(self, t: float) -> np.ndarray:
        return self._fn(float(t))

    def __repr__(self):
        return f"MatrixFunction({self.rows}x{self.cols}, {self.kind}{', ' + self.description if self.description else ''})"

    @classmethod
    def constant(cls, value) -> "MatrixFunction":
        value = np.atleast_2d(np.asarray(value, dtype=float)).copy()
        value.setflags(write=False)
        return cls(value.shape[0], value.shape[1], lambda t: value, "constant")

    @classmethod
    def from_entries(cls, entries) -> "MatrixFunction":
        """Matrix whose entries are numbers or scalar closed forms."""
        rows = [list(r) for r in entries]
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise ModelError("entries must form a non-empty rectangular table")
        if all(isinstance(e, (int, float)) for r in rows for e in r):
            return cls.constant(rows)
        forms = [[scalar_form(e) for e in r] for r in rows]
        nr, nc = len(rows), len(rows[0])
        const = np.zeros((nr, nc))
        varying = []
        for i, r in enumerate(forms):
            for j, f in enumerate(r):
                if f.name == "constant":
                    const[i, j] = f.params["value"]
                else:
                    varying.append((i, j, f))

        def fn(t):
            out = const.copy()
            for i, j, f in varying:
                out[i, j] = f(t)
            return out

        return cls(nr, nc, fn, "closed-form",
                   description=",".join(sorted({f.name for _, _, f in varying})))

    @classmethod
    def closed_form(cls, name: str, **params) -> "MatrixFunction":
        """1x1 function from a registry entry, e.g. ``closed_form("sin", omega=3.0)``."""
        return cls.from_entries([[scalar_form({"form": name, **params})]])

    @classmethod
    def from_callable(cls, rows: int, cols: int, fn: Callable[[float], np.ndarray],
                      description: str = "") -> "MatrixFunction":
        def wrapped(t):
            return np.asarray(fn(t), dtype=float).reshape(rows, cols)
        return cls(rows, cols, wrapped, "callable", description=description)

    @classmethod
    def sampled(cls, grid: TimeGrid, values) -> "MatrixFunction":
        """Table of ``n_steps + 1`` matrices, linear interpolation in between."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None, None]
        elif values.ndim == 2:
            values = values[:, :, None]
        if values.shape[0] != len(grid):
            raise ModelError(f"table has {values.shape[0]} rows, grid needs {len(grid)}")
        values = values.copy()
        values.setflags(write=False)
        t0, t1, tol = grid.t0, grid.t_end, 1e-12 * max(1.0, abs(grid.t_end - grid.t0))

        def fn(t):
            if t < t0 - tol or t > t1 + tol:
                raise ModelError(f"t={t} outside sampled range [{t0}, {t1}]")
            s = (t - t0) / grid.h
            j = int(round(s))
            if abs(s - j) <= 1e-9 and 0 <= j < len(values):
                return values[j]
            k, theta = grid.locate(t)
            if theta <= 0.0:
                return values[k]
            if theta >= 1.0:
                return values[k + 1]
            return (1.0 - theta) * values[k] + theta * values[k + 1]

        return cls(values.shape[1], values.shape[2], fn, "sampled", table=values, grid=grid)


def evaluate(mf: MatrixFunction, t: float) -> np.ndarray:
    return mf(t)


def as_matrix_function(value) -> MatrixFunction:
    if isinstance(value, MatrixFunction):
        return value
    return MatrixFunction.constant(value)


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DaeModel:
    F: np.ndarray
    C: MatrixFunction
    H: MatrixFunction
    Q: MatrixFunction
    R: MatrixFunction
    grid: TimeGrid
    name: str = field(default="model", compare=False)

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float)).copy()
        F.setflags(write=False)
        object.__setattr__(self, "F", F)
        for key in ("C", "H", "Q", "R"):
            object.__setattr__(self, key, as_matrix_function(getattr(self, key)))

    @property
    def m(self) -> int:
        return self.F.shape[0]

    @property
    def n(self) -> int:
        return self.F.shape[1]

    @property
    def p(self) -> int:
        return self.H.rows

    def with_grid(self, grid: TimeGrid) -> "DaeModel":
        for key in ("C", "H", "Q", "R"):
            if getattr(self, key).kind == "sampled":
                raise ModelError(f"{key} is a sampled table and cannot be regridded")
        return DaeModel(self.F, self.C, self.H, self.Q, self.R, grid, self.name)


def _is_pd(M: np.ndarray) -> bool:
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
        return False
    return np.linalg.eigvalsh(0.5 * (M + M.T)).min() > PD_TOL


def validate_model(model: DaeModel) -> list[str]:
    """Every shape and positivity violation of ``model``, empty when valid."""
    m, n = model.F.shape
    problems = []
    if not np.all(np.isfinite(model.F)):
        problems.append("F has non-finite entries")
    expected = {"C": (m, n), "H": (model.H.rows, n), "Q": (m, m),
                "R": (model.H.rows, model.H.rows)}
    shape_ok = {}
    for key, shape in expected.items():
        mf = getattr(model, key)
        shape_ok[key] = mf.shape == shape
        if not shape_ok[key]:
            problems.append(f"shape mismatch {key}: declared {mf.shape[0]}x{mf.shape[1]}, "
                            f"expected {shape[0]}x{shape[1]}")
        if mf.kind == "sampled" and mf.grid is not None and len(mf.table) != len(model.grid):
            problems.append(f"{key} table length {len(mf.table)} != {len(model.grid)}")
    for t in model.grid.nodes:
        for key, shape in expected.items():
            if not shape_ok[key]:
                continue
            try:
                val = getattr(model, key)(t)
            except ModelError as exc:
                problems.append(f"{key} not evaluable at t={t:.17g}: {exc}")
                continue
            if val.shape != shape:
                problems.append(f"shape mismatch {key} at t={t:.17g}: got {val.shape}")
                shape_ok[key] = False
                continue
            if not np.all(np.isfinite(val)):
                problems.append(f"{key} has non-finite entries at t={t:.17g}")
            elif key in ("Q", "R") and not _is_pd(val):
                problems.append(f"{key} not positive definite at t={t:.17g}")
    return problems


# ---------------------------------------------------------------------------
# builtin example
# ---------------------------------------------------------------------------


def default_c3(T: float) -> ScalarForm:
    return sine(1.0, 2.0 * math.pi / T, 0.0)


def example_model(T: float = 2.0, n_steps: int = 2000, c3=None, blind: bool = False) -> DaeModel:
    """The 2x2 non-causal descriptor example.

    ``F = [[1, 0], [0, 0]]``, ``C(t) = [[-1, 1], [c3(t), 0]]``, ``H = [0, 1]``,
    ``Q = diag(1, exp(sqrt t)/2)``, ``R = 6/T``.  With ``blind=True`` the
    observation matrix is zero.
    """
    c3 = default_c3(T) if c3 is None else scalar_form(c3)
    C = MatrixFunction.from_entries([[-1.0, 1.0], [c3, 0.0]])
    H = MatrixFunction.constant([[0.0, 0.0]] if blind else [[0.0, 1.0]])
    Q = MatrixFunction.from_entries([[1.0, 0.0], [0.0, exp_sqrt_half()]])
    R = MatrixFunction.constant([[6.0 / T]])
    name = "example23-blind" if blind else "example23"
    return DaeModel(np.array([[1.0, 0.0], [0.0, 0.0]]), C, H, Q, R, TimeGrid(0.0, T, n_steps), name)


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


def read_table_csv(path, rows: int, cols: int, grid: TimeGrid) -> MatrixFunction:
    """Sample table with header ``t,v11,v12,...`` (row-major entries)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row])
    if len(header) != 1 + rows * cols or data.shape[1] != 1 + rows * cols:
        raise ModelError(f"{path}: expected {1 + rows * cols} columns")
    if data.shape[0] != len(grid) or not np.allclose(data[:, 0], grid.nodes, atol=1e-9):
        raise ModelError(f"{path}: time column does not match the model grid")
    return MatrixFunction.sampled(grid, data[:, 1:].reshape(-1, rows, cols))


def _matrix_from_entry(entry, rows: int, cols: int, grid: TimeGrid, base: Path) -> MatrixFunction:
    if isinstance(entry, dict) and "csv" in entry:
        return read_table_csv(base / entry["csv"], rows, cols, grid)
    if isinstance(entry, dict) and "rows" in entry:
        return MatrixFunction.from_entries(entry["rows"])
    if isinstance(entry, dict) and "form" in entry:
        return MatrixFunction.from_entries([[entry]])
    if isinstance(entry, (list, tuple)):
        return MatrixFunction.from_entries(entry)
    if isinstance(entry, (int, float)):
        return MatrixFunction.constant([[entry]])
    raise ModelError(f"cannot interpret matrix entry {entry!r}")


def model_from_dict(cfg: dict, base_dir=".") -> DaeModel:
    """Build a model from a parsed config mapping.

    Keys: ``dims`` (m, n, p), ``grid`` (t0, t_end, n_steps), ``F`` (inline
    rows) and ``C``, ``H``, ``Q``, ``R``, each given as inline rows, a
    ``{rows: ...}`` table whose entries may be closed forms, a single
    ``{form: ...}`` entry or ``{csv: path}``.
    """
    base = Path(base_dir)
    try:
        dims = cfg["dims"]
        m, n, p = int(dims["m"]), int(dims["n"]), int(dims["p"])
        g = cfg["grid"]
        grid = TimeGrid(float(g.get("t0", 0.0)), float(g["t_end"]), int(g["n_steps"]))
        F = np.asarray(cfg["F"], dtype=float).reshape(m, n)
        shapes = {"C": (m, n), "H": (p, n), "Q": (m, m), "R": (p, p)}
        mats = {k: _matrix_from_entry(cfg[k], *shapes[k], grid, base) for k in shapes}
    except KeyError as exc:
        raise ModelError(f"missing config key {exc}") from None
    return DaeModel(F, mats["C"], mats["H"], mats["Q"], mats["R"], grid,
                    cfg.get("name", "config"))


def load_model(path) -> DaeModel:
    import yaml

    path = Path(path)
    with path.open() as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ModelError(f"{path}: top level must be a mapping")
    return model_from_dict(cfg, path.parent)
