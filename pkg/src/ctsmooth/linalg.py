"""
Dense linear-algebra kernels for continuous-time transitions.

Matrix exponentials, a balanced eigendecomposition, and the noise Gramian
integrals

    forward:  int_0^t e^{A s} B B^T e^{A^T s} ds
    backward: int_0^t e^{-A s} B B^T e^{-A^T s} ds

in closed form (diagonalizable A) with an augmented-matrix-exponential
(Van Loan) fallback.  Gramians never include the input-noise intensity;
callers scale by sigma_u**2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
import scipy.linalg

from .errors import InvalidInputError

GramianMethod = Literal["closed_form", "van_loan", "quadrature"]

#: Largest accepted condition number of the (balanced) eigenvector matrix.
MAX_EIGVEC_COND = 1e8
#: |lambda_k + conj(lambda_l)| below this fraction of ||A|| uses the t-limit.
DEGENERATE_SUM_RTOL = 1e-9
#: Largest tolerated imaginary residue (relative) of a closed-form Gramian.
IMAG_RTOL = 1e-9


def as_matrix(a, name: str = "matrix", *, square: bool = False) -> np.ndarray:
    """Return ``a`` as a finite 2-D float array, raising InvalidInputError otherwise."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    if square and arr.shape[0] != arr.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {arr.shape}")
    return arr


def _check_time(t, *, nonnegative: bool) -> float:
    t = float(t)
    if not np.isfinite(t):
        raise InvalidInputError(f"time must be finite, got {t}")
    if nonnegative and t < 0:
        raise InvalidInputError(f"time must be >= 0, got {t}")
    return t


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def matrix_exponential(A, t: float = 1.0) -> np.ndarray:
    """Return ``e^{A t}`` (scaling and squaring with a Pade approximant).

    ``t`` may be negative; backward message rules use ``e^{-A T}``.
    """
    A = as_matrix(A, "A", square=True)
    t = _check_time(t, nonnegative=False)
    return scipy.linalg.expm(A * t)


@dataclass(frozen=True)
class Eigendecomposition:
    """``A = Q diag(lambdas) Qinv`` with complex factors."""

    Q: np.ndarray
    lambdas: np.ndarray
    Qinv: np.ndarray
    cond: float

    def reconstruct(self) -> np.ndarray:
        return (self.Q * self.lambdas) @ self.Qinv


def diagonalize(A, max_cond: float = MAX_EIGVEC_COND) -> Optional[Eigendecomposition]:
    """Eigendecomposition of ``A``, or ``None`` if ``A`` is (near-)defective.

    The matrix is diagonally balanced before calling LAPACK, so companion
    forms with widely spread coefficients (high cutoff frequencies) keep a
    well-conditioned eigenvector matrix.  ``max_cond`` bounds the condition
    number of the balanced eigenvector matrix.
    """
    A = as_matrix(A, "A", square=True)
    n = A.shape[0]
    balanced, (scale, _) = scipy.linalg.matrix_balance(A, permute=False, separate=True)
    lambdas, Qb = np.linalg.eig(balanced)
    with np.errstate(all="ignore"):
        cond = float(np.linalg.cond(Qb))
    if not np.isfinite(cond) or cond > max_cond:
        return None
    Q = scale[:, None] * Qb
    Qinv = np.linalg.solve(Qb, np.eye(n)) / scale[None, :]
    decomp = Eigendecomposition(Q=Q, lambdas=lambdas, Qinv=Qinv, cond=cond)

    norm_a = np.linalg.norm(A)
    err = np.linalg.norm(decomp.reconstruct() - A)
    if err > 1e-10 * max(norm_a, 1.0):
        return None
    return decomp


@dataclass(frozen=True)
class GramianResult:
    value: np.ndarray
    method: GramianMethod


def _theta(decomp: Eigendecomposition, B: np.ndarray, t: float, norm_a: float, backward: bool) -> np.ndarray:
    psi_vec = decomp.Qinv @ B
    psi = psi_vec @ psi_vec.conj().T
    lam = decomp.lambdas
    s = lam[:, None] + lam.conj()[None, :]
    degenerate = np.abs(s) <= DEGENERATE_SUM_RTOL * norm_a
    safe_s = np.where(degenerate, 1.0, s)
    if backward:
        # (1 - e^{-s t}) / s
        factor = -np.expm1(-safe_s * t) / safe_s
    else:
        factor = np.expm1(safe_s * t) / safe_s
    factor = np.where(degenerate, t, factor)
    return psi * factor


def _closed_form(A, B, t, decomp, backward) -> Optional[np.ndarray]:
    theta = _theta(decomp, B, t, float(np.linalg.norm(A)), backward)
    G = decomp.Q @ theta @ decomp.Q.conj().T
    real = G.real
    scale = max(np.linalg.norm(real), np.finfo(float).tiny)
    if np.linalg.norm(G.imag) > IMAG_RTOL * scale:
        return None
    return symmetrize(real)


def _gramian(A, B, t, decomp, backward) -> GramianResult:
    A = as_matrix(A, "A", square=True)
    B = as_matrix(B, "B")
    if B.shape[0] != A.shape[0]:
        raise InvalidInputError(f"B must have {A.shape[0]} rows, got {B.shape[0]}")
    t = _check_time(t, nonnegative=True)
    if t == 0.0:
        return GramianResult(np.zeros_like(A), "closed_form")
    if decomp is None:
        decomp = diagonalize(A)
    if decomp is not None:
        value = _closed_form(A, B, t, decomp, backward)
        if value is not None:
            return GramianResult(value, "closed_form")
    return gramian_vanloan(-A if backward else A, B, t)


def forward_gramian(A, B, t: float, decomp: Optional[Eigendecomposition] = None) -> GramianResult:
    """``int_0^t e^{A s} B B^T e^{A^T s} ds``.

    Pass ``decomp`` to reuse an eigendecomposition of ``A`` across calls.
    """
    return _gramian(A, B, t, decomp, backward=False)


def backward_gramian(A, B, t: float, decomp: Optional[Eigendecomposition] = None) -> GramianResult:
    """``int_0^t e^{-A s} B B^T e^{-A^T s} ds``; ``decomp`` is that of ``A`` (not ``-A``)."""
    return _gramian(A, B, t, decomp, backward=True)


def gramian_vanloan(A, B, t: float) -> GramianResult:
    """Forward Gramian from one exponential of ``[[-A, BB^T], [0, A^T]] t``.

    Exact up to matrix-exponential accuracy; handles defective and purely
    oscillatory ``A``.  The backward Gramian is ``gramian_vanloan(-A, B, t)``.
    """
    A = as_matrix(A, "A", square=True)
    B = as_matrix(B, "B")
    if B.shape[0] != A.shape[0]:
        raise InvalidInputError(f"B must have {A.shape[0]} rows, got {B.shape[0]}")
    t = _check_time(t, nonnegative=True)
    n = A.shape[0]
    # The augmented exponential mixes e^{At} and e^{-At}; keep ||A tau|| <= 1
    # and reach t by doubling G(2 tau) = G(tau) + e^{A tau} G(tau) e^{A^T tau}.
    norm = np.linalg.norm(A, 1) * t
    doublings = int(max(0, np.ceil(np.log2(norm)))) if norm > 1 else 0
    tau = t / 2.0**doublings
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A
    M[:n, n:] = B @ B.T
    M[n:, n:] = A.T
    E = scipy.linalg.expm(M * tau)
    # E[n:, n:] = e^{A^T tau};  E[:n, n:] = e^{-A tau} G(tau)
    Phi = E[n:, n:].T
    G = symmetrize(Phi @ E[:n, n:])
    for _ in range(doublings):
        G = symmetrize(G + Phi @ G @ Phi.T)
        Phi = Phi @ Phi
    return GramianResult(G, "van_loan")


def drift_integral(A, t: float) -> np.ndarray:
    """``int_0^t e^{A s} ds``, i.e. ``A^{-1}(e^{A t} - I)`` without inverting ``A``."""
    A = as_matrix(A, "A", square=True)
    t = _check_time(t, nonnegative=True)
    n = A.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = A
    M[:n, n:] = np.eye(n)
    return scipy.linalg.expm(M * t)[:n, n:]


def is_hurwitz(A) -> bool:
    A = as_matrix(A, "A", square=True)
    return bool(np.all(np.linalg.eigvals(A).real < 0))


def psd_sqrt(V: np.ndarray) -> np.ndarray:
    """Symmetric factor ``S`` with ``S S^T = V`` for a PSD (possibly singular) ``V``.

    Negative eigenvalues from round-off are clipped to zero.
    """
    w, U = np.linalg.eigh(symmetrize(np.asarray(V, dtype=float)))
    return U * np.sqrt(np.clip(w, 0.0, None))
