"""
Continuous-time linear systems driven by white Gaussian noise.

    dX(t) = (A X(t) + h) dt + B U(t) dt,      Y_k = C X(t_k),   Ytilde_k = Y_k + Z_k

where U is white Gaussian noise with intensity sigma_u**2 per channel and
Z_k ~ N(0, Vz).  Also Butterworth lowpass realizations, frequency responses,
and exact (discretization-free) sample-path simulation.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg

from . import linalg
from .errors import DomainError, InvalidInputError, StabilityError


@dataclass(frozen=True, eq=False)
class ContinuousLTISystem:
    """State matrix ``A`` (1/s), input matrix ``B``, output matrix ``C``,
    constant drift ``h``, input-noise intensity ``sigma_u`` and diagonal
    observation-noise covariance ``Vz``.

    ``sigma_u = 0`` is representable (noise-free simulation); estimation
    routines reject it.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    h: Optional[np.ndarray] = None
    sigma_u: float = 1.0
    Vz: Optional[np.ndarray] = None

    def __post_init__(self):
        A = linalg.as_matrix(self.A, "A", square=True)
        n = A.shape[0]
        B = linalg.as_matrix(self.B, "B")
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.ndim != 2 or not np.all(np.isfinite(C)):
            raise InvalidInputError("C must be a finite 2-D matrix")
        if B.shape[0] != n:
            raise InvalidInputError(f"B must have {n} rows, got shape {B.shape}")
        if C.shape[1] != n:
            raise InvalidInputError(f"C must have {n} columns, got shape {C.shape}")
        h = np.zeros(n) if self.h is None else np.asarray(self.h, dtype=float).reshape(-1)
        if h.shape != (n,) or not np.all(np.isfinite(h)):
            raise InvalidInputError(f"h must be a finite vector of length {n}")
        sigma_u = float(self.sigma_u)
        if not np.isfinite(sigma_u) or sigma_u < 0:
            raise InvalidInputError(f"sigma_u must be >= 0, got {sigma_u}")
        nu = C.shape[0]
        Vz = np.eye(nu) if self.Vz is None else np.atleast_2d(np.asarray(self.Vz, dtype=float))
        if Vz.shape != (nu, nu):
            raise InvalidInputError(f"Vz must be {nu}x{nu}, got {Vz.shape}")
        if np.any(Vz - np.diag(np.diag(Vz))) or np.any(np.diag(Vz) <= 0) or not np.all(np.isfinite(Vz)):
            raise InvalidInputError("Vz must be diagonal with positive finite entries")
        for name, value in (("A", A), ("B", B), ("C", C), ("h", h), ("sigma_u", sigma_u), ("Vz", Vz)):
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def nu(self) -> int:
        return self.C.shape[0]

    @property
    def sigma_z(self) -> float:
        if self.nu != 1:
            raise InvalidInputError("sigma_z is only defined for scalar outputs")
        return float(np.sqrt(self.Vz[0, 0]))

    @cached_property
    def decomposition(self) -> Optional[linalg.Eigendecomposition]:
        return linalg.diagonalize(self.A)

    def is_hurwitz(self) -> bool:
        return linalg.is_hurwitz(self.A)

    def with_noise(self, sigma_u: Optional[float] = None, sigma_z: Optional[float] = None) -> "ContinuousLTISystem":
        """Copy with a different input intensity and/or scalar observation noise std."""
        changes = {}
        if sigma_u is not None:
            changes["sigma_u"] = sigma_u
        if sigma_z is not None:
            changes["Vz"] = np.eye(self.nu) * float(sigma_z) ** 2
        return replace(self, **changes)


@dataclass(frozen=True)
class SegmentedSystem:
    """Piecewise-constant dynamics: segment ``k`` governs ``[t_start_k, t_start_{k+1})``.

    The last segment extends to +inf.  Times before the first start are
    outside the model.
    """

    segments: Sequence[tuple]

    def __post_init__(self):
        segs = [(float(t), s) for t, s in self.segments]
        if not segs:
            raise InvalidInputError("at least one segment is required")
        starts = [t for t, _ in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise InvalidInputError("segment start times must be strictly increasing")
        n = segs[0][1].n
        if any(s.n != n for _, s in segs):
            raise InvalidInputError("all segments must share the state dimension")
        object.__setattr__(self, "segments", tuple(segs))

    @property
    def starts(self) -> list:
        return [t for t, _ in self.segments]

    @property
    def n(self) -> int:
        return self.segments[0][1].n

    def index_at(self, t: float) -> int:
        k = bisect.bisect_right(self.starts, t) - 1
        if k < 0:
            raise DomainError(f"t = {t} precedes the first segment start {self.starts[0]}")
        return k

    def system_at(self, t: float) -> ContinuousLTISystem:
        return self.segments[self.index_at(t)][1]

    def boundaries_in(self, ta: float, tb: float) -> list:
        """Segment starts strictly inside ``(ta, tb)``."""
        return [t for t in self.starts if ta < t < tb]

    def pieces(self, ta: float, tb: float) -> list:
        """Split ``[ta, tb]`` into ``(a, b, segment_index)`` pieces of constant dynamics."""
        cuts = [ta] + self.boundaries_in(ta, tb) + [tb]
        return [(a, b, self.index_at(a)) for a, b in zip(cuts, cuts[1:])]


def quantize_interval(T: float) -> float:
    """Round an interval length to 13 significant digits (cache key and factor length)."""
    return float(f"{T:.13g}")


SystemLike = Union[ContinuousLTISystem, SegmentedSystem]


def as_segmented(system: SystemLike) -> SegmentedSystem:
    if isinstance(system, SegmentedSystem):
        return system
    return SegmentedSystem([(-np.inf, system)])


def butterworth(order: int, fc: float, sigma_u: float = 1.0, sigma_z: float = 1.0) -> ContinuousLTISystem:
    """Companion-form Butterworth lowpass of the given order and -3 dB frequency ``fc`` (Hz).

    Unit DC gain, ``b = (0, ..., 0, wc**order)``, ``c = (1, 0, ..., 0)``.
    """
    if int(order) != order or order < 1:
        raise InvalidInputError(f"order must be a positive integer, got {order}")
    if not fc > 0:
        raise InvalidInputError(f"fc must be positive, got {fc}")
    order = int(order)
    wc = 2 * np.pi * fc
    k = np.arange(1, order + 1)
    poles = wc * np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))
    # monic characteristic polynomial, highest power first
    coeffs = np.real(np.poly(poles))
    A = np.zeros((order, order))
    A[:-1, 1:] = np.eye(order - 1)
    A[-1, :] = -coeffs[:0:-1]
    b = np.zeros((order, 1))
    b[-1, 0] = wc**order
    c = np.zeros((1, order))
    c[0, 0] = 1.0
    return ContinuousLTISystem(A, b, c, sigma_u=sigma_u, Vz=[[sigma_z**2]])


def transfer_magnitude(system: ContinuousLTISystem, f, input_index: int = 0):
    """``|C (j 2 pi f I - A)^{-1} B[:, input_index]|`` for scalar-output systems.

    ``f`` may be a scalar or an array of frequencies in Hz.
    """
    if system.nu != 1:
        raise InvalidInputError("transfer_magnitude needs a single-output system")
    f_arr = np.atleast_1d(np.asarray(f, dtype=float))
    # balancing keeps high-order companion forms well conditioned
    Ab, (scale, _) = scipy.linalg.matrix_balance(system.A, permute=False, separate=True)
    b = system.B[:, input_index] / scale
    c = system.C[0] * scale
    poles = np.linalg.eigvals(system.A)
    tol = 1e-12 * max(np.max(np.abs(poles)), 1.0)
    out = np.empty(f_arr.shape)
    eye = np.eye(system.n)
    for i, fi in enumerate(f_arr):
        s_ = 2j * np.pi * fi
        if np.min(np.abs(poles - s_)) <= tol:
            raise DomainError(f"frequency {fi} Hz coincides with a pole")
        out[i] = abs(c @ np.linalg.solve(s_ * eye - Ab, b))
    return out if np.ndim(f) else float(out[0])


@dataclass
class DenseTruth:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    #: average input over the grid cell ending at ``t`` (NaN at the first point)
    u_avg: np.ndarray


@dataclass
class SimulationOutput:
    times: np.ndarray
    knot_states: np.ndarray
    clean_samples: np.ndarray
    noisy_samples: np.ndarray
    #: average input over ``(t_{k-1}, t_k]`` (the first cell starts at ``t0``)
    input_averages: np.ndarray
    t0: float
    x0: np.ndarray
    dense: Optional[DenseTruth] = None

    @property
    def noise(self) -> np.ndarray:
        return self.noisy_samples - self.clean_samples


class _Stepper:
    """Exact joint draw of the state increment and the integrated input."""

    def __init__(self, segmented: SegmentedSystem, rng: np.random.Generator):
        self.segmented = segmented
        self.rng = rng
        self._cache = {}

    def _factors(self, seg: int, T: float):
        T = quantize_interval(T)
        key = (seg, T)
        if key not in self._cache:
            sys = self.segmented.segments[seg][1]
            n, m = sys.n, sys.m
            # augmented state (x, int U): joint covariance is one forward Gramian
            A_aug = np.zeros((n + m, n + m))
            A_aug[:n, :n] = sys.A
            B_aug = np.vstack([sys.B, np.eye(m)])
            cov = sys.sigma_u**2 * linalg.forward_gramian(A_aug, B_aug, T).value
            Phi = linalg.matrix_exponential(sys.A, T)
            drift = linalg.drift_integral(sys.A, T) @ sys.h
            self._cache[key] = (Phi, drift, linalg.psd_sqrt(cov))
        return self._cache[key]

    def advance(self, x: np.ndarray, ta: float, tb: float):
        """Return ``(x(tb), int_{ta}^{tb} U)`` given ``x(ta)``."""
        m = self.segmented.segments[0][1].m
        u_int = np.zeros(m)
        for a, b, seg in self.segmented.pieces(ta, tb):
            Phi, drift, root = self._factors(seg, b - a)
            n = x.shape[0]
            w = root @ self.rng.standard_normal(root.shape[0])
            x = Phi @ x + drift + w[:n]
            u_int = u_int + w[n:]
        return x, u_int


def _initial_state(system: ContinuousLTISystem, x0, rng) -> np.ndarray:
    if x0 is None or (isinstance(x0, str) and x0 == "stationary"):
        if not system.is_hurwitz():
            raise StabilityError("a stationary initial draw needs a Hurwitz A; pass x0 explicitly")
        from .analysis import stationary_state_cov

        V = stationary_state_cov(system)
        return linalg.psd_sqrt(V) @ rng.standard_normal(system.n)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (system.n,):
        raise InvalidInputError(f"x0 must have length {system.n}")
    return x0


def simulate(
    system: SystemLike,
    schedule,
    x0=None,
    seed=None,
    dense_step: Optional[float] = None,
    t0: Optional[float] = None,
) -> SimulationOutput:
    """Exact sample path observed at the measurement times in ``schedule``.

    ``x0`` is a fixed initial state or ``None``/``"stationary"`` for a draw
    from the stationary distribution.  ``t0`` (default: first sample time)
    is the time of ``x0``.  With ``dense_step`` the same exact recursion also
    runs on the grid ``t0 + j * dense_step`` and the dense path is recorded.
    """
    times = np.asarray(schedule, dtype=float).reshape(-1)
    if times.size == 0:
        raise InvalidInputError("schedule is empty")
    if np.any(np.diff(times) <= 0):
        raise InvalidInputError("schedule must be strictly increasing")
    if dense_step is not None and not dense_step > 0:
        raise InvalidInputError(f"dense_step must be positive, got {dense_step}")
    t0 = float(times[0]) if t0 is None else float(t0)
    if t0 > times[0]:
        raise DomainError("t0 must not follow the first sample time")

    segmented = as_segmented(system)
    rng = np.random.default_rng(seed)
    first = segmented.system_at(t0)
    x = _initial_state(first, x0, rng)
    x_start = x.copy()
    stepper = _Stepper(segmented, rng)

    grid = times
    if dense_step is not None:
        fine = t0 + dense_step * np.arange(int(np.floor((times[-1] - t0) / dense_step)) + 1)
        grid = np.union1d(fine, times)
    grid = grid[grid >= t0]
    is_knot = np.isin(grid, times)

    K = times.size
    n, m = segmented.n, first.m
    knot_states = np.empty((K, n))
    clean = np.empty((K, first.nu))
    noisy = np.empty((K, first.nu))
    u_knots = np.full((K, m), np.nan)
    dense_x, dense_y, dense_u = [], [], []

    t_prev = t0
    t_knot_prev, u_since_knot = t0, np.zeros(m)
    k = 0
    for t, knot in zip(grid, is_knot):
        u_cell = np.full(m, np.nan)
        if t > t_prev:
            x, u_int = stepper.advance(x, t_prev, t)
            u_cell = u_int / (t - t_prev)
            u_since_knot = u_since_knot + u_int
        sys_t = segmented.system_at(t)
        if knot:
            y = sys_t.C @ x
            z = np.sqrt(np.diag(sys_t.Vz)) * rng.standard_normal(sys_t.nu)
            knot_states[k], clean[k], noisy[k] = x, y, y + z
            if t > t_knot_prev:
                u_knots[k] = u_since_knot / (t - t_knot_prev)
            t_knot_prev, u_since_knot = t, np.zeros(m)
            k += 1
        if dense_step is not None:
            dense_x.append(x)
            dense_y.append(sys_t.C @ x)
            dense_u.append(u_cell)
        t_prev = t

    dense = None
    if dense_step is not None:
        dense = DenseTruth(grid, np.array(dense_x), np.array(dense_y), np.array(dense_u))
    return SimulationOutput(times, knot_states, clean, noisy, u_knots, t0, x_start, dense)
