"""Reduction of a descriptor model to ``F = [[I_r, 0], [0, 0]]``.

With ``F = S_L Lambda S_R`` (orthogonal ``S_L``, ``S_R``) the change of
variables

    x~ = Dn S_R x,   f~ = S_L' f,   l~ = S_L' l,     Dn = diag(sqrt(D), I)

turns ``(F x)' = C x + f`` into ``(F~ x~)' = C~ x~ + f~`` with
``C~ = S_L' C S_R' Dn^-1``, ``H~ = H S_R' Dn^-1``, ``Q~ = S_L' Q S_L`` and
``R~ = R``, so the input and noise constraint sets are preserved and
``<l, F x> = <l~, F~ x~>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .model import DaeModel, ModelError, validate_model

RANK_TOL = 1e-12


class CanonicalizationError(ModelError):
    pass


def _fix_signs(U: np.ndarray, Vh: np.ndarray, k: int):
    """Make the first significant entry of each singular vector non-negative."""
    U, Vh = U.copy(), Vh.copy()

    def lead_sign(v):
        idx = np.flatnonzero(np.abs(v) > 1e-12 * max(1.0, np.abs(v).max()))
        return -1.0 if idx.size and v[idx[0]] < 0 else 1.0

    for i in range(U.shape[1]):
        s = lead_sign(U[:, i])
        U[:, i] *= s
        if i < k:
            Vh[i, :] *= s
    for i in range(k, Vh.shape[0]):
        Vh[i, :] *= lead_sign(Vh[i, :])
    return U, Vh


@dataclass(frozen=True)
class SvdReduction:
    """``F = S_L @ Lambda @ S_R`` together with the coordinate scaling."""

    S_L: np.ndarray
    S_R: np.ndarray
    Lambda: np.ndarray
    r: int

    @property
    def m(self) -> int:
        return self.S_L.shape[0]

    @property
    def n(self) -> int:
        return self.S_R.shape[0]

    @property
    def singular_values(self) -> np.ndarray:
        return np.diag(self.Lambda)[: self.r].copy()

    @cached_property
    def scale(self) -> np.ndarray:
        """Diagonal of ``Dn``: singular values, then ones."""
        d = np.ones(self.n)
        d[: self.r] = self.singular_values
        return d

    @cached_property
    def F_canonical(self) -> np.ndarray:
        Fc = np.zeros((self.m, self.n))
        Fc[: self.r, : self.r] = np.eye(self.r)
        return Fc

    @cached_property
    def _state_map(self) -> np.ndarray:
        return self.scale[:, None] * self.S_R

    @cached_property
    def _state_map_inv(self) -> np.ndarray:
        return self.S_R.T / self.scale[None, :]

    def state_map(self) -> np.ndarray:
        """``T`` with ``x~ = T x``."""
        return self._state_map

    def state_map_inv(self) -> np.ndarray:
        """``T^-1`` with ``x = T^-1 x~``."""
        return self._state_map_inv


def svd_reduce(F, rank_tol: float = RANK_TOL) -> SvdReduction:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    m, n = F.shape
    U, s, Vh = np.linalg.svd(F, full_matrices=True)
    smax = s[0] if s.size else 0.0
    r = int(np.sum(s > rank_tol * smax)) if smax > 0 else 0
    U, Vh = _fix_signs(U, Vh, r)
    Lam = np.zeros((m, n))
    Lam[range(r), range(r)] = s[:r]
    return SvdReduction(U, Vh, Lam, r)


def _check_kind(kind):
    if kind not in ("state", "direction", "estimate"):
        raise ValueError(f"unknown kind {kind!r}")


def push_forward(reduction: SvdReduction, quantity, kind: str) -> np.ndarray:
    """Map an original-coordinate vector (or rows of a trajectory) to canonical.

    ``state``: n-vector to ``x~``.  ``direction``: m-vector to ``l~``.
    ``estimate``: m-vector ``F x`` to the r leading canonical coordinates.
    """
    _check_kind(kind)
    q = np.asarray(quantity, dtype=float)
    if kind == "state":
        M = reduction.state_map()
    elif kind == "direction":
        M = reduction.S_L.T
    else:
        M = reduction.S_L.T[: reduction.r]
    if q.shape[-1] != M.shape[1]:
        raise ValueError(f"{kind} has length {q.shape[-1]}, expected {M.shape[1]}")
    return q @ M.T


def pull_back(reduction: SvdReduction, quantity, kind: str) -> np.ndarray:
    """Inverse of :func:`push_forward`.

    For ``estimate`` the input is the r-dimensional canonical estimate and
    the output the corresponding m-vector ``F x``.
    """
    _check_kind(kind)
    q = np.asarray(quantity, dtype=float)
    if kind == "state":
        M = reduction.state_map_inv()
    elif kind == "direction":
        M = reduction.S_L
    else:
        M = reduction.S_L[:, : reduction.r]
    if q.shape[-1] != M.shape[1]:
        raise ValueError(f"{kind} has length {q.shape[-1]}, expected {M.shape[1]}")
    return q @ M.T


class Blocks(NamedTuple):
    C1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    C4: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray
    Q4: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    S4: np.ndarray
    H: np.ndarray
    R: np.ndarray


@dataclass(frozen=True)
class CanonicalModel:
    model: DaeModel
    reduction: SvdReduction

    @property
    def r(self) -> int:
        return self.reduction.r

    @property
    def m(self) -> int:
        return self.model.m

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def p(self) -> int:
        return self.model.p

    @property
    def grid(self):
        return self.model.grid

    @property
    def F(self) -> np.ndarray:
        return self.reduction.F_canonical

    def C(self, t) -> np.ndarray:
        red = self.reduction
        return red.S_L.T @ self.model.C(t) @ red.state_map_inv()

    def H(self, t) -> np.ndarray:
        return self.model.H(t) @ self.reduction.state_map_inv()

    def Q(self, t) -> np.ndarray:
        S_L = self.reduction.S_L
        Qt = S_L.T @ self.model.Q(t) @ S_L
        return 0.5 * (Qt + Qt.T)

    def R(self, t) -> np.ndarray:
        return self.model.R(t)

    def original_C(self, t) -> np.ndarray:
        """Rebuild the original ``C(t)`` from the canonical one."""
        red = self.reduction
        return red.S_L @ self.C(t) @ red.state_map()

    def blocks(self, t) -> Blocks:
        """Block partition at time ``t``.

        An array of times gives stacked blocks with a leading time axis.
        """
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        red, model, r = self.reduction, self.model, self.r
        C = np.array([model.C(s) for s in ts])
        H = np.array([model.H(s) for s in ts]).reshape(len(ts), self.p, self.n)
        Q = np.array([model.Q(s) for s in ts])
        R = np.array([model.R(s) for s in ts]).reshape(len(ts), self.p, self.p)
        C = red.S_L.T @ C @ red.state_map_inv()
        H = H @ red.state_map_inv()
        Q = red.S_L.T @ Q @ red.S_L
        Q = 0.5 * (Q + np.swapaxes(Q, 1, 2))
        S = np.swapaxes(H, 1, 2) @ R @ H
        S = 0.5 * (S + np.swapaxes(S, 1, 2))
        out = Blocks(C[:, :r, :r], C[:, :r, r:], C[:, r:, :r], C[:, r:, r:],
                     Q[:, :r, :r], Q[:, :r, r:], Q[:, r:, r:],
                     S[:, :r, :r], S[:, :r, r:], S[:, r:, r:], H, R)
        if np.ndim(t) == 0:
            return Blocks(*(b[0] for b in out))
        return out

    def split_direction(self, ell) -> tuple[np.ndarray, np.ndarray]:
        """Canonical ``(l1, l2)`` of an original-coordinate direction."""
        lt = push_forward(self.reduction, np.asarray(ell, dtype=float).reshape(-1), "direction")
        return lt[: self.r], lt[self.r:]


def canonicalize(model: DaeModel, rank_tol: float = RANK_TOL, check: bool = True) -> CanonicalModel:
    if check:
        problems = validate_model(model)
        if problems:
            raise CanonicalizationError("invalid model: " + "; ".join(problems[:5]))
    cm = CanonicalModel(model, svd_reduce(model.F, rank_tol))
    if cm.m > cm.r:
        nodes = model.grid.nodes
        lam = np.linalg.eigvalsh(cm.blocks(nodes).Q4).min(axis=1)
        bad = np.flatnonzero(lam <= 0.0)
        if bad.size:
            raise CanonicalizationError(f"Q4 not positive definite at t={nodes[bad[0]]:.17g}")
    return cm
