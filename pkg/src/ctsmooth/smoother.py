"""
Forward-backward smoothing over a chain of exact transition factors.

``run`` sweeps once forward (moment form) and once backward (information
form) over the knots: the prior time, every measurement time, every segment
boundary and the end of the domain.  ``query`` splits the transition that
contains ``t`` into two exact factors and combines the messages there, so
state, output and input estimates are available at any instant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import linalg
from .errors import DomainError, InvalidInputError
from .messages import (
    InfoGaussian,
    MomentGaussian,
    TransitionFactor,
    backward_through,
    combine,
    forward_through,
    input_estimate,
    make_transition,
    observe,
)
from .model import ContinuousLTISystem, SegmentedSystem, SystemLike, as_segmented, quantize_interval


@dataclass(frozen=True)
class MeasurementSet:
    """Noisy samples ``values[k]`` taken at strictly increasing ``times[k]``.

    ``Vz_override`` optionally replaces the model's observation covariance
    per sample (shape ``(K, nu, nu)``, diagonal).
    """

    times: np.ndarray
    values: np.ndarray
    Vz_override: Optional[np.ndarray] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.shape[0] != times.size:
            raise InvalidInputError("times and values differ in length")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(values)):
            raise InvalidInputError("measurements must be finite")
        if np.any(np.diff(times) <= 0):
            raise InvalidInputError("measurement times must be strictly increasing")
        Vz = self.Vz_override
        if Vz is not None:
            Vz = np.asarray(Vz, dtype=float).reshape(times.size, values.shape[1], values.shape[1])
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "Vz_override", Vz)

    def __len__(self) -> int:
        return self.times.size

    @classmethod
    def empty(cls, nu: int = 1) -> "MeasurementSet":
        return cls(np.zeros(0), np.zeros((0, nu)))


@dataclass(frozen=True)
class EstimateRecord:
    t: float
    x_mean: np.ndarray
    x_cov: np.ndarray
    y_hat: np.ndarray
    y_var: np.ndarray
    u_hat: np.ndarray


@dataclass(frozen=True)
class _Observation:
    C: np.ndarray
    Vz: np.ndarray
    y: np.ndarray


@dataclass(eq=False)
class SmootherState:
    """Knot messages of one smoothing run; read-only after ``run``.

    At knot ``j`` the forward message includes the sample taken there
    (``fwd[j]``, post-observation) while the backward message does not
    (``bwd[j]``, only later samples).  ``bwd_out[j]`` is the backward
    message leaving knot ``j`` towards the past, i.e. with its sample.
    """

    system: SegmentedSystem
    knot_times: np.ndarray
    observations: list
    #: segment index governing (knot_times[j], knot_times[j+1])
    interval_segment: list
    transitions: list
    fwd: list
    bwd: list
    bwd_out: list
    measurement_knots: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def t0(self) -> float:
        return float(self.knot_times[0])

    @property
    def t_end(self) -> float:
        return float(self.knot_times[-1])

    def transition(self, segment: int, T: float) -> TransitionFactor:
        """Transition factor of length ``T`` in ``segment``, shared by all queries."""
        # regular sampling yields lengths equal up to a few ulps; share them
        T = quantize_interval(T)
        key = (segment, T)
        factor = self._cache.get(key)
        if factor is None:
            factor = make_transition(self.system.segments[segment][1], T)
            self._cache[key] = factor
        return factor

    def knot_posterior(self, j: int) -> MomentGaussian:
        return combine(self.fwd[j], self.bwd[j])


def _default_prior(system: ContinuousLTISystem) -> MomentGaussian:
    if not system.is_hurwitz():
        raise InvalidInputError("a non-Hurwitz system needs an explicit prior")
    from .analysis import stationary_state_cov

    return MomentGaussian(np.zeros(system.n), stationary_state_cov(system))


def _build_knots(segmented: SegmentedSystem, meas: MeasurementSet, t0: float, t_end: float):
    times = meas.times
    knots = np.union1d(np.union1d(times, [t0, t_end]), segmented.boundaries_in(t0, t_end))
    observations = [None] * knots.size
    meas_knots = np.searchsorted(knots, times)
    for k, j in enumerate(meas_knots):
        sys = segmented.system_at(times[k])
        if meas.values.shape[1] != sys.nu:
            raise InvalidInputError(f"sample {k} has dimension {meas.values.shape[1]}, model output has {sys.nu}")
        Vz = sys.Vz if meas.Vz_override is None else meas.Vz_override[k]
        observations[j] = _Observation(sys.C, Vz, meas.values[k])
    segments = [segmented.index_at(a) for a in knots[:-1]]
    return knots, observations, segments, meas_knots


def _observe(msg: InfoGaussian, obs: Optional[_Observation]) -> InfoGaussian:
    if obs is None:
        return msg
    return observe(msg, obs.C, obs.Vz, obs.y)


def _forward_sweep(prior: MomentGaussian, observations, transitions):
    fwd = []
    msg = prior
    for j, obs in enumerate(observations):
        if j > 0:
            msg = forward_through(transitions[j - 1], msg)
        if obs is not None:
            msg = combine(msg, _observe(InfoGaussian.flat(msg.m.size), obs))
        fwd.append(msg)
    return fwd


def _backward_sweep(n: int, observations, transitions):
    J = len(observations)
    bwd = [None] * J
    bwd_out = [None] * J
    msg = InfoGaussian.flat(n)
    for j in range(J - 1, -1, -1):
        if j < J - 1:
            msg = backward_through(transitions[j], bwd_out[j + 1])
        bwd[j] = msg
        bwd_out[j] = _observe(msg, observations[j])
    return bwd, bwd_out


def run(
    system: SystemLike,
    meas: MeasurementSet,
    prior: Optional[MomentGaussian] = None,
    t0: Optional[float] = None,
    t_end: Optional[float] = None,
) -> SmootherState:
    """Forward and backward sweeps over all knots in ``[t0, t_end]``.

    ``prior`` is the state distribution at ``t0`` (default: zero mean and the
    stationary covariance, Hurwitz systems only).  ``t0`` defaults to the
    first sample time and ``t_end`` to the last one; a later ``t_end``
    allows extrapolation.
    """
    segmented = as_segmented(system)
    if t0 is None:
        if len(meas) == 0:
            raise InvalidInputError("t0 is required when there are no measurements")
        t0 = float(meas.times[0])
    t0 = float(t0)
    if len(meas) and meas.times[0] < t0:
        raise DomainError(f"measurement at {meas.times[0]} precedes t0 = {t0}")
    last = float(meas.times[-1]) if len(meas) else t0
    t_end = last if t_end is None else float(t_end)
    if t_end < last:
        raise DomainError(f"t_end = {t_end} precedes the last measurement at {last}")
    first = segmented.system_at(t0)
    if prior is None:
        prior = _default_prior(first)
    if prior.m.size != segmented.n:
        raise InvalidInputError("prior dimension does not match the state dimension")

    knots, observations, segments, meas_knots = _build_knots(segmented, meas, t0, t_end)
    state = SmootherState(segmented, knots, observations, segments, [], [], [], [], meas_knots)
    transitions = [state.transition(seg, float(b - a)) for seg, a, b in zip(segments, knots[:-1], knots[1:])]
    state.transitions = transitions
    state.fwd = _forward_sweep(prior, observations, transitions)
    state.bwd, state.bwd_out = _backward_sweep(segmented.n, observations, transitions)
    return state


def query(state: SmootherState, t: float) -> EstimateRecord:
    """Posterior of ``X(t)``, ``Y(t)`` and the input estimate at any ``t`` in the domain.

    At a knot the input estimate is the right limit (sample at the knot on
    the past side).
    """
    t = float(t)
    if not state.t0 <= t <= state.t_end:
        raise DomainError(f"t = {t} outside [{state.t0}, {state.t_end}]")
    knots = state.knot_times
    j = int(np.searchsorted(knots, t, side="right")) - 1
    if knots[j] == t:
        fwd, bwd = state.fwd[j], state.bwd[j]
        seg = state.system.index_at(t)
    else:
        seg = state.interval_segment[j]
        fwd = forward_through(state.transition(seg, t - float(knots[j])), state.fwd[j])
        bwd = backward_through(state.transition(seg, float(knots[j + 1]) - t), state.bwd_out[j + 1])
    system = state.system.segments[seg][1]
    post = combine(fwd, bwd)
    u_hat = input_estimate(fwd, bwd, system)
    C = system.C
    return EstimateRecord(
        t=t,
        x_mean=post.m,
        x_cov=post.V,
        y_hat=C @ post.m,
        y_var=linalg.symmetrize(C @ post.V @ C.T),
        u_hat=u_hat,
    )


def query_grid(state: SmootherState, grid: Sequence[float]) -> list:
    """``[query(state, t) for t in grid]`` for a sorted grid; transition factors are shared."""
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if np.any(np.diff(grid) < 0):
        raise InvalidInputError("grid must be sorted")
    return [query(state, t) for t in grid]
