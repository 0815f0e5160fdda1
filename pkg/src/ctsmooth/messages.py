"""
Gaussian messages and the local update rules of the state-transition,
observation and equality nodes.

Forward messages travel in moment form ``(m, V)``; backward messages in
information form ``(W, xi = W m)`` so that the flat terminal message
(``W = 0``) is representable.  The mixed-form rules below never invert a
possibly singular matrix: every solve is against ``I + (PSD)(PSD)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import linalg
from .errors import ConditioningError, InvalidInputError
from .model import ContinuousLTISystem

@dataclass(frozen=True)
class MomentGaussian:
    m: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).reshape(-1)
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if V.shape != (m.size, m.size):
            raise InvalidInputError(f"V must be {m.size}x{m.size}, got {V.shape}")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "V", V)


@dataclass(frozen=True)
class InfoGaussian:
    W: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if W.shape != (xi.size, xi.size):
            raise InvalidInputError(f"W must be {xi.size}x{xi.size}, got {W.shape}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "xi", xi)

    @classmethod
    def flat(cls, n: int) -> "InfoGaussian":
        return cls(np.zeros((n, n)), np.zeros(n))

    @classmethod
    def from_moment(cls, msg: MomentGaussian) -> "InfoGaussian":
        W = np.linalg.inv(msg.V)
        return cls(linalg.symmetrize(W), W @ msg.m)

    def to_moment(self) -> MomentGaussian:
        V = np.linalg.inv(self.W)
        return MomentGaussian(V @ self.xi, linalg.symmetrize(V))


def _solve(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # M = I + (PSD)(PSD) has eigenvalues >= 1; a large condition number only
    # reflects scale, so only an outright breakdown is reported
    try:
        out = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        out = None
    if out is None or not np.all(np.isfinite(out)):
        raise ConditioningError("I + (PSD)(PSD) is numerically singular; message state is corrupted")
    return out


@dataclass(frozen=True, eq=False)
class TransitionFactor:
    """Exact transition ``x(t+T) = Phi x(t) + drift + w``, ``w ~ N(0, Vs)``."""

    Phi: np.ndarray
    drift: np.ndarray
    Vs: np.ndarray
    T: float
    system: ContinuousLTISystem

    @cached_property
    def Vs_back(self) -> np.ndarray:
        """``sigma_u^2 int_0^T e^{-A s} B B^T e^{-A^T s} ds`` (``= Phi^{-1} Vs Phi^{-T}``)."""
        sys = self.system
        G = linalg.backward_gramian(sys.A, sys.B, self.T, sys.decomposition).value
        return sys.sigma_u**2 * G


def make_transition(system: ContinuousLTISystem, T: float) -> TransitionFactor:
    T = float(T)
    if not T > 0:
        raise InvalidInputError(f"transition length must be positive, got {T}")
    if not system.sigma_u > 0:
        raise InvalidInputError("estimation requires sigma_u > 0")
    Phi = linalg.matrix_exponential(system.A, T)
    drift = linalg.drift_integral(system.A, T) @ system.h
    Vs = system.sigma_u**2 * linalg.forward_gramian(system.A, system.B, T, system.decomposition).value
    return TransitionFactor(Phi, drift, Vs, T, system)


def forward_through(factor: TransitionFactor, msg: MomentGaussian) -> MomentGaussian:
    Phi = factor.Phi
    return MomentGaussian(Phi @ msg.m + factor.drift, linalg.symmetrize(Phi @ msg.V @ Phi.T + factor.Vs))


def backward_through(factor: TransitionFactor, msg: InfoGaussian) -> InfoGaussian:
    """Backward message at the start of the factor given the one at its end.

    Valid for singular ``W``; equals the moment-form rule
    ``m' = Phi^{-1}(m - drift)``, ``V' = Phi^{-1}(V + Vs)Phi^{-T}`` whenever
    ``W`` is invertible.
    """
    Phi = factor.Phi
    n = Phi.shape[0]
    W = msg.W
    GW, Gr = np.hsplit(_solve(np.eye(n) + W @ factor.Vs, np.hstack([W, (msg.xi - W @ factor.drift)[:, None]])), [n])
    return InfoGaussian(linalg.symmetrize(Phi.T @ GW @ Phi), Phi.T @ Gr[:, 0])


def observe(msg: InfoGaussian, C, Vz, y_tilde=None) -> InfoGaussian:
    """Add the information of one noisy sample ``y_tilde = C x + z``; absent sample is a no-op."""
    if y_tilde is None:
        return msg
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Vz = np.atleast_2d(np.asarray(Vz, dtype=float))
    d = np.diag(Vz)
    if np.any(d <= 0):
        raise InvalidInputError("exact (noise-free) observations are not supported")
    y = np.asarray(y_tilde, dtype=float).reshape(-1)
    if y.size != C.shape[0] or C.shape[1] != msg.xi.size:
        raise InvalidInputError("observation dimensions do not match")
    CtRinv = C.T / d
    return InfoGaussian(linalg.symmetrize(msg.W + CtRinv @ C), msg.xi + CtRinv @ y)


def combine(fwd: MomentGaussian, bwd: InfoGaussian) -> MomentGaussian:
    """Posterior of a variable from its forward (moment) and backward (info) messages."""
    n = fwd.m.size
    if bwd.xi.size != n:
        raise InvalidInputError("message dimensions do not match")
    Vf = fwd.V
    rhs = np.hstack([Vf, (fwd.m + Vf @ bwd.xi)[:, None]])
    GV, Gm = np.hsplit(_solve(np.eye(n) + Vf @ bwd.W, rhs), [n])
    return MomentGaussian(Gm[:, 0], linalg.symmetrize(GV))


def input_estimate(fwd: MomentGaussian, bwd: InfoGaussian, system: ContinuousLTISystem) -> np.ndarray:
    """LMMSE estimate of the white input at the messages' time instant.

    ``sigma_u^2 B^T (I + W_b V_f)^{-1} (xi_b - W_b m_f)``; zero when the
    backward message is flat.
    """
    if not system.sigma_u > 0:
        raise InvalidInputError("estimation requires sigma_u > 0")
    n = fwd.m.size
    W = bwd.W
    r = _solve(np.eye(n) + W @ fwd.V, bwd.xi - W @ fwd.m)
    return system.sigma_u**2 * (system.B.T @ r)
