"""Continuous-time state, output and input estimation from discrete noisy samples."""

from .analysis import assume_snr, output_error_curve, snr, stationary_state_cov, with_snr
from .messages import InfoGaussian, MomentGaussian
from .model import ContinuousLTISystem, SegmentedSystem, butterworth, simulate, transfer_magnitude
from .smoother import EstimateRecord, MeasurementSet, SmootherState, query, query_grid, run

__all__ = [
    "ContinuousLTISystem",
    "SegmentedSystem",
    "butterworth",
    "simulate",
    "transfer_magnitude",
    "MomentGaussian",
    "InfoGaussian",
    "MeasurementSet",
    "EstimateRecord",
    "SmootherState",
    "run",
    "query",
    "query_grid",
    "snr",
    "with_snr",
    "assume_snr",
    "stationary_state_cov",
    "output_error_curve",
]
