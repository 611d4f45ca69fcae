"""Coefficients of the reduced Hamilton systems.

Regularized family, for ``eps > 0``::

    A  = C3' Q4^-1 C4 + S2              B = C2' - C4' Q4^-1 Q2'
    W  = eps I + S4 + C4' Q4^-1 C4      M = W^-1
    Cmat = -C1' + C3' Q4^-1 Q2' + A M B
    Qmat = I + (S1 + C3' Q4^-1 C3 - A M A') / eps
    Smat = eps (Q1 - Q2 Q4^-1 Q2' + B' M B)

Limit family, with ``W0 = W(t, 0)`` and its pseudoinverse ``W0+``::

    Cplus = C1 - Q2 Q4^-1 C3 - B' W0+ A'
    Splus = Q1 - Q2 Q4^-1 Q2' + B' W0+ B
    Qplus = S1 + C3' Q4^-1 C3 - A W0+ A'

As ``eps -> 0``: ``Smat/eps -> Splus``, ``eps Qmat -> Qplus`` and
``-Cmat' -> Cplus`` whenever the columns of ``B`` and ``A'`` lie in the
range of ``W0``.

Every function accepts a scalar time or an array of times; the latter
returns fields stacked along a leading time axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canonical import RANK_TOL, Blocks, CanonicalModel


def _tr(X):
    return np.swapaxes(X, -1, -2)


def _sym(X):
    return 0.5 * (X + _tr(X))


def _inv(X):
    return np.linalg.inv(X) if X.shape[-1] else X.copy()


def pinv(W: np.ndarray, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Moore-Penrose inverse with relative singular-value cutoff ``rank_tol``."""
    if W.shape[-1] == 0 or W.shape[-2] == 0:
        return _tr(W).copy()
    return np.linalg.pinv(W, rtol=rank_tol)


def _common(b: Blocks):
    Q4inv = _inv(b.Q4)
    A = _tr(b.C3) @ Q4inv @ b.C4 + b.S2
    B = _tr(b.C2) - _tr(b.C4) @ Q4inv @ _tr(b.Q2)
    W0 = _sym(b.S4 + _tr(b.C4) @ Q4inv @ b.C4)
    return Q4inv, A, B, W0


@dataclass(frozen=True)
class SubCoeffs:
    t: float | np.ndarray
    eps: float
    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    M: np.ndarray
    Cmat: np.ndarray
    Qmat: np.ndarray
    Smat: np.ndarray

    def Phi(self, K: np.ndarray) -> np.ndarray:
        """``[K; M (eps B - A' K)]``, the map from ``z1`` to ``(p1, p2)``."""
        return np.concatenate([K, self.M @ (self.eps * self.B - _tr(self.A) @ K)], axis=-2)

    def __getitem__(self, k) -> "SubCoeffs":
        return SubCoeffs(self.t[k], self.eps, self.A[k], self.B[k], self.W[k], self.M[k],
                         self.Cmat[k], self.Qmat[k], self.Smat[k])


@dataclass(frozen=True)
class LimitCoeffs:
    t: float | np.ndarray
    A: np.ndarray
    B: np.ndarray
    W0: np.ndarray
    Wplus: np.ndarray
    Cplus: np.ndarray
    Splus: np.ndarray
    Qplus: np.ndarray

    def gain_map(self, K: np.ndarray) -> np.ndarray:
        """``[K; W0+ (B - A' K)]``, the map from ``z1`` to ``(p1, p2)``."""
        return np.concatenate([K, self.Wplus @ (self.B - _tr(self.A) @ K)], axis=-2)

    def __getitem__(self, k) -> "LimitCoeffs":
        return LimitCoeffs(self.t[k], self.A[k], self.B[k], self.W0[k], self.Wplus[k],
                           self.Cplus[k], self.Splus[k], self.Qplus[k])


def sub_coeffs(cm: CanonicalModel, t, eps: float, blocks: Blocks | None = None) -> SubCoeffs:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    b = cm.blocks(t) if blocks is None else blocks
    Q4inv, A, B, W0 = _common(b)
    W = W0 + eps * np.eye(W0.shape[-1])
    M = _sym(_inv(W))
    Cmat = -_tr(b.C1) + _tr(b.C3) @ Q4inv @ _tr(b.Q2) + A @ M @ B
    Qmat = np.eye(cm.r) + _sym(b.S1 + _tr(b.C3) @ Q4inv @ b.C3 - A @ M @ _tr(A)) / eps
    Smat = eps * _sym(b.Q1 - b.Q2 @ Q4inv @ _tr(b.Q2) + _tr(B) @ M @ B)
    return SubCoeffs(t, float(eps), A, B, W, M, Cmat, Qmat, Smat)


def limit_coeffs(cm: CanonicalModel, t, rank_tol: float = RANK_TOL,
                 blocks: Blocks | None = None) -> LimitCoeffs:
    b = cm.blocks(t) if blocks is None else blocks
    Q4inv, A, B, W0 = _common(b)
    Wp = _sym(pinv(W0, rank_tol))
    Cplus = b.C1 - b.Q2 @ Q4inv @ b.C3 - _tr(B) @ Wp @ _tr(A)
    Splus = _sym(b.Q1 - b.Q2 @ Q4inv @ _tr(b.Q2) + _tr(B) @ Wp @ B)
    Qplus = _sym(b.S1 + _tr(b.C3) @ Q4inv @ b.C3 - A @ Wp @ _tr(A))
    return LimitCoeffs(t, A, B, W0, Wp, Cplus, Splus, Qplus)


def remark_gap(cm: CanonicalModel, t, eps: float):
    """``|Smat/eps - Splus| + |eps Qmat - Qplus| + |-Cmat' - Cplus|`` (Frobenius)."""
    b = cm.blocks(t)
    s, lim = sub_coeffs(cm, t, eps, b), limit_coeffs(cm, t, blocks=b)
    nrm = lambda X: np.linalg.norm(X, axis=(-2, -1))  # noqa: E731
    return (nrm(s.Smat / eps - lim.Splus) + nrm(eps * s.Qmat - lim.Qplus)
            + nrm(-_tr(s.Cmat) - lim.Cplus))


def _contained(X: np.ndarray, Y: np.ndarray, rank_tol: float) -> bool:
    """Column space of ``X`` inside that of ``Y``."""
    if X.size == 0 or not np.any(X):
        return True
    if Y.size == 0:
        return False
    aug = np.hstack([Y, X])
    tol = rank_tol * max(np.linalg.norm(aug, 2), 1.0)
    return np.linalg.matrix_rank(aug, tol=tol) == np.linalg.matrix_rank(Y, tol=tol)


@dataclass(frozen=True)
class RegularityReport:
    times: np.ndarray
    column_space_ok: np.ndarray
    solvable_ok: np.ndarray

    @property
    def solvable(self) -> bool:
        return bool(np.all(self.solvable_ok))

    @property
    def first_failure(self) -> float | None:
        bad = np.flatnonzero(~self.solvable_ok)
        return float(self.times[bad[0]]) if bad.size else None


def regularity_check(cm: CanonicalModel, rank_tol: float = RANK_TOL) -> RegularityReport:
    """Test the range conditions behind the optimal filter at every node.

    ``column_space_ok``: ``R((I-V) C' P)`` within ``R((I-V) C' (I-P))`` with
    ``P``, ``V`` the leading-coordinate projections, i.e. ``R(C2')`` within
    ``R(C4')``.  ``solvable_ok``: columns of ``[B, A']`` within ``R(W(t, 0))``.
    """
    times = cm.grid.nodes
    b = cm.blocks(times)
    _, A, B, W0 = _common(b)
    col = np.array([_contained(_tr(b.C2[k]), _tr(b.C4[k]), rank_tol) for k in range(len(times))])
    sol = np.array([_contained(np.hstack([B[k], _tr(A[k])]), W0[k], rank_tol)
                    for k in range(len(times))])
    return RegularityReport(times, col, sol)
