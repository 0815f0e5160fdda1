"""Stationary statistics, observation SNR and Monte Carlo output-error curves."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from . import linalg
from .errors import InvalidInputError, StabilityError
from .model import ContinuousLTISystem, simulate
from .smoother import MeasurementSet, run


def stationary_state_cov(system: ContinuousLTISystem) -> np.ndarray:
    """Stationary state covariance ``sigma_u^2 int_0^inf e^{A s} B B^T e^{A^T s} ds``.

    Closed form from the eigendecomposition; defective ``A`` falls back to a
    dense (balanced, vectorized) Lyapunov solve.
    """
    A, B = system.A, system.B
    if not linalg.is_hurwitz(A):
        raise StabilityError("the stationary covariance needs a Hurwitz state matrix")
    decomp = system.decomposition
    V = None
    if decomp is not None:
        psi_vec = decomp.Qinv @ B
        lam = decomp.lambdas
        theta = -(psi_vec @ psi_vec.conj().T) / (lam[:, None] + lam.conj()[None, :])
        G = decomp.Q @ theta @ decomp.Q.conj().T
        if np.linalg.norm(G.imag) <= linalg.IMAG_RTOL * np.linalg.norm(G.real):
            V = G.real
    if V is None:
        V = _lyapunov_dense(A, B)
    return linalg.symmetrize(system.sigma_u**2 * V)


def _lyapunov_dense(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``A X + X A^T + B B^T = 0`` through the Kronecker-vectorized system."""
    n = A.shape[0]
    Ab, (scale, _) = scipy.linalg.matrix_balance(A, permute=False, separate=True)
    Bb = B / scale[:, None]
    eye = np.eye(n)
    K = np.kron(eye, Ab) + np.kron(Ab, eye)
    X = np.linalg.solve(K, -(Bb @ Bb.T).reshape(-1, order="F")).reshape(n, n, order="F")
    return scale[:, None] * X * scale[None, :]


@dataclass(frozen=True)
class SnrReport:
    ey2: float
    snr_linear: float
    snr_db: float
    snr_constant: Optional[float] = None


def snr(system: ContinuousLTISystem, fc: Optional[float] = None) -> SnrReport:
    """Per-sample SNR ``E[Y_k^2] / sigma_z^2`` in steady state.

    With a declared cutoff ``fc`` (Hz) also reports the family constant
    ``SNR * sigma_z^2 / (sigma_u^2 fc)``.
    """
    if system.nu != 1:
        raise InvalidInputError("SNR is only defined for scalar observations")
    V = stationary_state_cov(system)
    c = system.C
    ey2 = float((c @ V @ c.T)[0, 0])
    sz2 = float(system.Vz[0, 0])
    snr_lin = ey2 / sz2
    constant = None
    if fc is not None:
        constant = snr_lin * sz2 / (system.sigma_u**2 * fc)
    return SnrReport(ey2, snr_lin, 10 * np.log10(snr_lin), constant)


def with_snr(system: ContinuousLTISystem, snr_db: float) -> ContinuousLTISystem:
    """Same system with the observation noise set so the per-sample SNR is ``snr_db``."""
    report = snr(system)
    return system.with_noise(sigma_z=np.sqrt(report.ey2 / 10 ** (snr_db / 10)))


def assume_snr(system: ContinuousLTISystem, assumed_snr_db: float) -> ContinuousLTISystem:
    """Rescale ``sigma_u`` so the model's SNR reads ``assumed_snr_db`` (``sigma_z`` untouched)."""
    actual = snr(system).snr_db
    return system.with_noise(sigma_u=system.sigma_u * 10 ** ((assumed_snr_db - actual) / 20))


@dataclass
class ErrorCurve:
    """Normalized output error ``E[(Yhat_k - Y_k)^2] / E[Y_k^2]`` per (fs/fc, SNR) cell."""

    fs_over_fc: np.ndarray
    snr_db: np.ndarray
    snr_out_inv: np.ndarray
    trials: int
    horizon_samples: int

    @property
    def snr_out_inv_db(self) -> np.ndarray:
        return 10 * np.log10(self.snr_out_inv)

    def rows(self):
        for i, r in enumerate(self.fs_over_fc):
            for j, s in enumerate(self.snr_db):
                yield float(r), float(s), float(self.snr_out_inv_db[i, j])

    def slope_per_doubling(self, snr_index: int = 0) -> float:
        """Least-squares slope of the error in dB against log2(fs/fc)."""
        return float(np.polyfit(np.log2(self.fs_over_fc), self.snr_out_inv_db[:, snr_index], 1)[0])


def interior_slice(count: int, edge_fraction: float) -> slice:
    guard = int(np.floor(edge_fraction * count))
    return slice(guard, count - guard)


def _trial_error(system, fs, horizon, seed_seq, edge_fraction):
    times = np.arange(1, horizon + 1) / fs
    sim = simulate(system, times, seed=np.random.default_rng(seed_seq))
    state = run(system, MeasurementSet(times, sim.noisy_samples))
    y_hat = np.array([system.C @ state.knot_posterior(j).m for j in state.measurement_knots])
    keep = interior_slice(horizon, edge_fraction)
    err = (y_hat - sim.clean_samples)[keep]
    return float(np.sum(err**2)), err.size


def output_error_curve(
    system: ContinuousLTISystem,
    fc: float,
    fs_over_fc: Sequence[float],
    snr_db: Sequence[float],
    trials: int,
    horizon_samples: int,
    seed: int = 0,
    edge_fraction: float = 0.1,
    workers: int = 1,
) -> ErrorCurve:
    """Monte Carlo estimate of the normalized smoothing error at the sample times.

    For every cell the observation noise is set to the requested SNR, the
    estimator uses the true model, and errors are pooled over the interior
    samples (``edge_fraction`` trimmed at both ends) of all trials.  Each
    trial draws from its own stream ``SeedSequence([seed, i, j, trial])``,
    so results do not depend on ``workers``.
    """
    if trials < 1 or horizon_samples < 1:
        raise InvalidInputError("trials and horizon_samples must be positive")
    ratios = np.asarray(fs_over_fc, dtype=float)
    snrs = np.asarray(snr_db, dtype=float)
    out = np.empty((ratios.size, snrs.size))
    for j, s in enumerate(snrs):
        cell_system = with_snr(system, s)
        ey2 = snr(cell_system).ey2
        for i, r in enumerate(ratios):
            seeds = [np.random.SeedSequence([seed, i, j, trial]) for trial in range(trials)]
            args = [(cell_system, r * fc, horizon_samples, ss, edge_fraction) for ss in seeds]
            if workers > 1:
                with ThreadPoolExecutor(workers) as pool:
                    results = list(pool.map(lambda a: _trial_error(*a), args))
            else:
                results = [_trial_error(*a) for a in args]
            sq = sum(r_[0] for r_ in results)
            count = sum(r_[1] for r_ in results)
            out[i, j] = sq / count / ey2
    return ErrorCurve(ratios, snrs, out, trials, horizon_samples)
