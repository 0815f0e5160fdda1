"""
Brute-force references for the message-passing estimator.

Every interval between knots is cut into ``N`` substeps.  The input over a
substep is replaced by its average ``utilde`` (variance ``sigma_u^2 N / T``),
which enters the state at the substep's end through ``B T / N``.  The
resulting finite-dimensional regularized least-squares problem

    (x0 - m0)^T V0^{-1} (x0 - m0) + sum_l |utilde_l|^2 (T/N) / sigma_u^2
        + sum_k (ytilde_k - C x(t_k))^T Vz^{-1} (ytilde_k - C x(t_k))

is solved densely, with no recursion over time.  As ``N`` grows its
minimizer converges to the smoother's input and state estimates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import linalg
from .errors import ConditioningError, InvalidInputError, SizeGuardError
from .messages import MomentGaussian
from .model import ContinuousLTISystem
from .smoother import MeasurementSet, query_grid, run

#: Largest number of entries of the dense observation map (rows x unknowns).
MAX_MAP_ENTRIES = 20_000_000
#: Largest number of scalar observations (dense data-space solve).
MAX_OBSERVATIONS = 5_000


@dataclass(frozen=True)
class DiscreteInterval:
    t_start: float
    T: float
    step: np.ndarray
    gain: np.ndarray
    noise_var: float
    drift: np.ndarray
    #: substep end times t_start + l T / N, l = 1..N
    substep_times: np.ndarray


@dataclass(frozen=True)
class DiscreteDecomposition:
    system: ContinuousLTISystem
    N: int
    knot_times: np.ndarray
    intervals: tuple

    @property
    def t0(self) -> float:
        return float(self.knot_times[0])

    @property
    def substep_times(self) -> np.ndarray:
        return np.concatenate([iv.substep_times for iv in self.intervals])

    @property
    def num_inputs(self) -> int:
        return self.N * len(self.intervals)

    def composed_flow(self, k: int) -> np.ndarray:
        """Product of the ``N`` substep flows of interval ``k``."""
        iv = self.intervals[k]
        return np.linalg.matrix_power(iv.step, self.N)

    def composed_covariance(self, k: int) -> np.ndarray:
        """State covariance contributed by the inputs of interval ``k``."""
        iv = self.intervals[k]
        P = np.zeros_like(iv.step)
        for _ in range(self.N):
            P = iv.step @ P @ iv.step.T + iv.noise_var * iv.gain @ iv.gain.T
        return linalg.symmetrize(P)


def discrete_decompose(system: ContinuousLTISystem, times: Sequence[float], N: int, t0: float) -> DiscreteDecomposition:
    """Cut ``[t0, t_1], [t_1, t_2], ...`` into ``N`` substeps each."""
    if int(N) != N or N < 1:
        raise InvalidInputError(f"N must be a positive integer, got {N}")
    N = int(N)
    knots = np.concatenate([[float(t0)], np.asarray(times, dtype=float).reshape(-1)])
    if np.any(np.diff(knots) <= 0):
        raise InvalidInputError("t0 and the knot times must be strictly increasing")
    if not system.sigma_u > 0:
        raise InvalidInputError("the discrete model requires sigma_u > 0")
    intervals = []
    for a, b in zip(knots[:-1], knots[1:]):
        T = float(b - a)
        dt = T / N
        intervals.append(
            DiscreteInterval(
                t_start=float(a),
                T=T,
                step=linalg.matrix_exponential(system.A, dt),
                gain=system.B * dt,
                noise_var=system.sigma_u**2 / dt,
                drift=linalg.drift_integral(system.A, dt) @ system.h,
                substep_times=a + dt * np.arange(1, N + 1),
            )
        )
    return DiscreteDecomposition(system, N, knots, tuple(intervals))


@dataclass
class JointLSSolution:
    #: input averages per substep, shape (num_inputs, m), at ``substep_times``
    u: np.ndarray
    substep_times: np.ndarray
    x0: np.ndarray
    #: states at ``substep_times``
    x_path: np.ndarray
    cost: float
    prior_term: float
    energy_term: float
    misfit_term: float
    #: marginal posterior precision of every scalar input average, shape (num_inputs, m)
    u_precision: np.ndarray

    def u_at(self, decomp: DiscreteDecomposition, t) -> np.ndarray:
        """Piecewise-constant input average of the substep ``(t_l - T/N, t_l]`` containing ``t``."""
        return self.u[_cell_index(decomp, t)]

    def x_at(self, decomp: DiscreteDecomposition, t) -> np.ndarray:
        """State at ``t``: the previous substep state flowed freely up to ``t``."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        cells = _cell_index(decomp, t_arr)
        out = np.empty((t_arr.size, self.x0.size))
        sys = decomp.system
        for i, (ti, cell) in enumerate(zip(t_arr, cells)):
            k, l = divmod(int(cell), decomp.N)
            iv = decomp.intervals[k]
            start = iv.t_start + l * iv.T / decomp.N
            x_prev = self.x0 if cell == 0 else self.x_path[cell - 1]
            dt = ti - start
            out[i] = linalg.matrix_exponential(sys.A, dt) @ x_prev + linalg.drift_integral(sys.A, dt) @ sys.h
        return out


def _cell_index(decomp: DiscreteDecomposition, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    knots = decomp.knot_times
    if np.any(t <= knots[0]) or np.any(t > knots[-1]):
        raise InvalidInputError("time outside the decomposed interval (t0, t_K]")
    k = np.searchsorted(knots, t, side="left") - 1
    T = np.diff(knots)[k]
    l = np.ceil((t - knots[k]) / T * decomp.N).astype(int) - 1
    return k * decomp.N + np.clip(l, 0, decomp.N - 1)


class _AffineMaps:
    """``x(t_k) = F_k x0 + G_k u + d_k`` for every knot, by forward substitution."""

    def __init__(self, decomp: DiscreteDecomposition):
        sys = decomp.system
        n, m, N = sys.n, sys.m, decomp.N
        L = decomp.num_inputs
        F = np.eye(n)
        G = np.zeros((n, L * m))
        d = np.zeros(n)
        self.F, self.G, self.d = [F], [G], [d]
        for k, iv in enumerate(decomp.intervals):
            # gains to the interval end: step^{N-l} gain, l = 1..N
            block = np.empty((n, N * m))
            acc = iv.gain
            drift = np.zeros(n)
            for l in range(N - 1, -1, -1):
                block[:, l * m : (l + 1) * m] = acc
                acc = iv.step @ acc
            for _ in range(N):
                drift = iv.step @ drift + iv.drift
            flow = decomp.composed_flow(k)
            F = flow @ F
            G = flow @ G
            G[:, k * N * m : (k + 1) * N * m] += block
            d = flow @ d + drift
            self.F.append(F)
            self.G.append(G)
            self.d.append(d)


def _prior_factor(prior: MomentGaussian) -> np.ndarray:
    return linalg.psd_sqrt(prior.V)


def _observation_rows(decomp: DiscreteDecomposition, meas: MeasurementSet):
    knots = decomp.knot_times
    idx = np.searchsorted(knots, meas.times)
    if np.any(idx >= knots.size) or np.any(knots[np.minimum(idx, knots.size - 1)] != meas.times):
        raise InvalidInputError("every measurement time must be a knot of the decomposition")
    return idx


def _roll(decomp: DiscreteDecomposition, x0: np.ndarray, u: np.ndarray) -> np.ndarray:
    path = np.empty((decomp.num_inputs, x0.size))
    x = x0
    i = 0
    for iv in decomp.intervals:
        for _ in range(decomp.N):
            x = iv.step @ x + iv.drift + iv.gain @ u[i]
            path[i] = x
            i += 1
    return path


def _input_variances(decomp: DiscreteDecomposition) -> np.ndarray:
    return np.repeat([iv.noise_var for iv in decomp.intervals], decomp.N)


def _cost_terms(decomp, meas, prior, x0, u, path):
    sys = decomp.system
    eta_res = x0 - prior.m
    prior_term = float(eta_res @ np.linalg.pinv(prior.V) @ eta_res)
    dt = np.repeat([iv.T / decomp.N for iv in decomp.intervals], decomp.N)
    energy_term = float(np.sum(u**2 * dt[:, None]) / sys.sigma_u**2)
    misfit_term = 0.0
    for k, j in enumerate(_observation_rows(decomp, meas)):
        x = x0 if j == 0 else path[j * decomp.N - 1]
        r = meas.values[k] - sys.C @ x
        misfit_term += float(r @ (r / np.diag(_obs_cov(sys, meas, k))))
    return prior_term, energy_term, misfit_term


def _obs_cov(sys: ContinuousLTISystem, meas: MeasurementSet, k: int) -> np.ndarray:
    return sys.Vz if meas.Vz_override is None else meas.Vz_override[k]


def joint_ls_solve(
    decomp: DiscreteDecomposition,
    meas: MeasurementSet,
    prior: MomentGaussian,
    system: Optional[ContinuousLTISystem] = None,
) -> JointLSSolution:
    """Unique minimizer of the regularized least-squares cost over ``(x0, all utilde)``.

    The unknowns are ``x0 = m0 + S eta`` (``S S^T = V0``) and the input
    averages; the states are eliminated by forward substitution.  With
    ``z = (eta, utilde)`` of prior covariance ``P`` and the observation map
    ``y = c + J z + noise``, the normal equations are solved in data space,
    ``z = P J^T (J P J^T + R)^{-1} (y - c)``, which keeps the dense system at
    the number of observations however large ``N`` is.
    """
    if system is not None and system is not decomp.system:
        decomp = discrete_decompose(system, decomp.knot_times[1:], decomp.N, decomp.t0)
    sys = decomp.system
    n, m, nu = sys.n, sys.m, sys.nu
    L = decomp.num_inputs
    K = len(meas)
    rows = K * nu
    if rows * (n + L * m) > MAX_MAP_ENTRIES or rows > MAX_OBSERVATIONS:
        raise SizeGuardError(f"{rows} observations x {n + L * m} unknowns is too large for a dense solve")

    maps = _AffineMaps(decomp)
    S = _prior_factor(prior)
    p = np.concatenate([np.ones(n), np.repeat(_input_variances(decomp), m)])
    J = np.zeros((rows, n + L * m))
    c = np.zeros(rows)
    y = np.zeros(rows)
    r_diag = np.zeros(rows)
    for k, j in enumerate(_observation_rows(decomp, meas)):
        sl = slice(k * nu, (k + 1) * nu)
        J[sl, :n] = sys.C @ maps.F[j] @ S
        J[sl, n:] = sys.C @ maps.G[j]
        c[sl] = sys.C @ (maps.F[j] @ prior.m + maps.d[j])
        y[sl] = meas.values[k]
        r_diag[sl] = np.diag(_obs_cov(sys, meas, k))

    JP = J * p[None, :]
    Sdata = JP @ J.T + np.diag(r_diag)
    if rows and np.linalg.cond(Sdata) > 1e14:
        raise ConditioningError("singular data-space normal matrix")
    if rows:
        alpha = np.linalg.solve(Sdata, y - c)
        z = JP.T @ alpha
        # posterior variances: p - p^2 diag(J^T S^{-1} J)
        Sinv_JP = np.linalg.solve(Sdata, JP)
        var = p - np.einsum("ij,ij->j", JP, Sinv_JP)
    else:
        z = np.zeros(n + L * m)
        var = p.copy()

    x0 = prior.m + S @ z[:n]
    u = z[n:].reshape(L, m)
    path = _roll(decomp, x0, u)
    prior_term, energy_term, misfit_term = _cost_terms(decomp, meas, prior, x0, u, path)
    return JointLSSolution(
        u=u,
        substep_times=decomp.substep_times,
        x0=x0,
        x_path=path,
        cost=prior_term + energy_term + misfit_term,
        prior_term=prior_term,
        energy_term=energy_term,
        misfit_term=misfit_term,
        u_precision=(1.0 / var[n:]).reshape(L, m),
    )


def cost_of(
    decomp: DiscreteDecomposition,
    meas: MeasurementSet,
    u,
    prior: MomentGaussian,
    system: Optional[ContinuousLTISystem] = None,
) -> float:
    """Cost of a candidate input path, with the initial state chosen optimally for it."""
    if system is not None and system is not decomp.system:
        decomp = discrete_decompose(system, decomp.knot_times[1:], decomp.N, decomp.t0)
    sys = decomp.system
    u = np.asarray(u, dtype=float).reshape(-1, sys.m)
    if u.shape[0] != decomp.num_inputs:
        raise InvalidInputError(f"candidate has {u.shape[0]} inputs, decomposition needs {decomp.num_inputs}")
    # residuals are affine in eta (x0 = m0 + S eta) once u is fixed
    S = _prior_factor(prior)
    path0 = _roll(decomp, prior.m, u)
    maps = _AffineMaps(decomp) if len(meas) else None
    rows_M, rows_r, weights = [], [], []
    for k, j in enumerate(_observation_rows(decomp, meas)):
        x = prior.m if j == 0 else path0[j * decomp.N - 1]
        rows_M.append(sys.C @ maps.F[j] @ S)
        rows_r.append(meas.values[k] - sys.C @ x)
        weights.append(1.0 / np.diag(_obs_cov(sys, meas, k)))
    eta = np.zeros(sys.n)
    if rows_M:
        M = np.vstack(rows_M)
        r = np.concatenate(rows_r)
        w = np.concatenate(weights)
        eta = np.linalg.solve(np.eye(sys.n) + M.T @ (M * w[:, None]), M.T @ (w * r))
    x0 = prior.m + S @ eta
    path = _roll(decomp, x0, u)
    return float(sum(_cost_terms(decomp, meas, prior, x0, u, path)))


def quadrature_gramian(A, B, t: float, steps: int) -> np.ndarray:
    """Composite Simpson rule for ``int_0^t e^{A s} B B^T e^{A^T s} ds`` (``steps`` even)."""
    A = linalg.as_matrix(A, "A", square=True)
    B = linalg.as_matrix(B, "B")
    if steps < 2 or steps % 2:
        raise InvalidInputError(f"steps must be an even integer >= 2, got {steps}")
    s = np.linspace(0.0, float(t), steps + 1)
    w = np.ones(steps + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    total = np.zeros((A.shape[0], A.shape[0]))
    for si, wi in zip(s, w):
        EB = linalg.matrix_exponential(A, si) @ B
        total += wi * (EB @ EB.T)
    return linalg.symmetrize(total * (float(t) / steps) / 3)


@dataclass
class BridgeReport:
    substeps: np.ndarray
    u_error: np.ndarray
    x_error: np.ndarray
    u_slope: float
    x_slope: float
    passed: bool
    messages: list


#: Errors below this are treated as exact agreement (no convergence slope to fit).
ROUNDOFF_FLOOR = 1e-9


def _slope(N: np.ndarray, err: np.ndarray) -> float:
    if np.all(err <= ROUNDOFF_FLOOR):
        return float("nan")
    return float(np.polyfit(np.log(N), np.log(np.maximum(err, 1e-300)), 1)[0])


def bridge_check(
    system: ContinuousLTISystem,
    meas: MeasurementSet,
    prior: MomentGaussian,
    t0: float,
    substeps: Sequence[int] = (64, 128, 256, 512, 1024, 2048, 4096),
    points_per_interval: int = 64,
    oracle_system: Optional[ContinuousLTISystem] = None,
    slope_range: tuple = (-1.2, -0.8),
    final_tolerance: float = 1e-3,
) -> BridgeReport:
    """Compare smoother estimates with the discrete least-squares oracle as ``N`` grows.

    States are compared at the fractions ``j / points_per_interval`` of every
    interval (``j = 1 .. points_per_interval - 1``), which are substep ends for
    every ``N`` divisible by ``points_per_interval``.  Input averages are
    compared with the smoother's input estimate at the midpoints of the
    substeps ending there.  Errors are relative L2 norms over all points.

    The check passes when both final errors are within ``final_tolerance``
    and each error sequence either decays with a log-log slope inside
    ``slope_range`` or sits at round-off level (exact agreement, e.g. for a
    pure integrator).  ``oracle_system`` feeds the oracle a different model
    (negative control).
    """
    substeps = np.asarray(sorted(substeps), dtype=int)
    M = int(points_per_interval)
    if np.any(substeps % M):
        raise InvalidInputError(f"every substep count must be a multiple of {M}")
    oracle_system = system if oracle_system is None else oracle_system
    knots = np.concatenate([[t0], meas.times])
    T = np.diff(knots)
    frac = np.arange(1, M) / M
    points = np.concatenate([a + dt * frac for a, dt in zip(knots[:-1], T)])
    T_rep = np.repeat(T, M - 1)

    state = run(system, meas, prior=prior, t0=t0)
    x_ref = np.array([r.x_mean for r in query_grid(state, points)])

    u_err, x_err = [], []
    for N in substeps:
        decomp = discrete_decompose(oracle_system, meas.times, int(N), t0)
        sol = joint_ls_solve(decomp, meas, prior)
        mids = points - T_rep / (2 * N)
        u_ref = np.array([r.u_hat for r in query_grid(state, mids)])
        u_err.append(np.linalg.norm(sol.u_at(decomp, mids) - u_ref) / max(np.linalg.norm(u_ref), 1e-300))
        cells = np.repeat(np.arange(len(T)), M - 1) * N + np.tile(np.arange(1, M) * (N // M), len(T)) - 1
        x_err.append(np.linalg.norm(sol.x_path[cells] - x_ref) / max(np.linalg.norm(x_ref), 1e-300))
    u_err, x_err = np.array(u_err), np.array(x_err)
    u_slope, x_slope = _slope(substeps, u_err), _slope(substeps, x_err)

    messages = []
    lo, hi = slope_range
    for name, err, slope in (("u", u_err, u_slope), ("x", x_err, x_slope)):
        if err[-1] > final_tolerance:
            messages.append(f"{name}: final error {err[-1]:.3e} exceeds {final_tolerance:.1e}")
        if not np.isnan(slope) and not lo <= slope <= hi:
            messages.append(f"{name}: convergence slope {slope:.3f} outside [{lo}, {hi}]")
    return BridgeReport(substeps, u_err, x_err, u_slope, x_slope, not messages, messages)
