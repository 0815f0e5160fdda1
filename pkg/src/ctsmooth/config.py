"""
Line-oriented model configuration files.

::

    # Butterworth filter, order 6, -3 dB at 1 Hz
    kind = butterworth
    order = 6
    fc_hz = 1.0
    sigma_u = 1.0
    snr_db = 10          # or: sigma_z = 0.31

Explicit matrices repeat ``<name>.row`` once per row::

    kind = explicit
    A.row = 0 1
    A.row = -4 -1
    B.row = 0
    B.row = 1
    C.row = 1 0
    h = 0 0
    sigma_u = 1
    sigma_z = 0.1

Optional keys: ``assumed_snr_db`` (estimation only), ``vz_diag`` (multi-output
noise variances), ``prior_mean`` / ``prior_cov_diag`` (needed for unstable
systems).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .messages import MomentGaussian
from .model import ContinuousLTISystem, butterworth

_SCALAR_KEYS = {"order", "fc_hz", "sigma_u", "sigma_z", "snr_db", "assumed_snr_db"}
_VECTOR_KEYS = {"h", "vz_diag", "prior_mean", "prior_cov_diag"}
_MATRIX_KEYS = {"A", "B", "C"}


class ConfigError(InvalidInputError):
    pass


@dataclass
class ModelConfig:
    kind: str
    order: Optional[int] = None
    fc_hz: Optional[float] = None
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    C: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    sigma_u: float = 1.0
    sigma_z: Optional[float] = None
    vz_diag: Optional[np.ndarray] = None
    snr_db: Optional[float] = None
    assumed_snr_db: Optional[float] = None
    prior_mean: Optional[np.ndarray] = None
    prior_cov_diag: Optional[np.ndarray] = None
    text: str = field(default="", repr=False)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()[:16]

    def build(self) -> ContinuousLTISystem:
        """The true model: noise levels as configured (``snr_db`` fixes ``sigma_z``)."""
        if self.kind == "butterworth":
            system = butterworth(self.order, self.fc_hz, sigma_u=self.sigma_u)
        else:
            Vz = np.diag(self.vz_diag) if self.vz_diag is not None else None
            system = ContinuousLTISystem(self.A, self.B, self.C, h=self.h, sigma_u=self.sigma_u, Vz=Vz)
        if self.snr_db is not None:
            from .analysis import with_snr

            return with_snr(system, self.snr_db)
        if self.sigma_z is not None:
            return system.with_noise(sigma_z=self.sigma_z)
        return system

    def estimation_system(self, assumed_snr_db: Optional[float] = None) -> ContinuousLTISystem:
        """Model used by the estimator; an assumed SNR rescales ``sigma_u`` only."""
        system = self.build()
        assumed = self.assumed_snr_db if assumed_snr_db is None else assumed_snr_db
        if assumed is None:
            return system
        from .analysis import assume_snr

        return assume_snr(system, assumed)

    def prior(self, system: ContinuousLTISystem) -> Optional[MomentGaussian]:
        if self.prior_mean is None and self.prior_cov_diag is None:
            return None
        m = np.zeros(system.n) if self.prior_mean is None else self.prior_mean
        if self.prior_cov_diag is None:
            raise ConfigError("prior_mean given without prior_cov_diag")
        return MomentGaussian(m, np.diag(self.prior_cov_diag))


def _floats(value: str, lineno: int) -> np.ndarray:
    try:
        return np.array([float(v) for v in value.replace(",", " ").split()])
    except ValueError:
        raise ConfigError(f"line {lineno}: expected numbers, got {value!r}") from None


def parse_config(text: str) -> ModelConfig:
    values = {}
    rows = {k: [] for k in _MATRIX_KEYS}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.endswith(".row") and key[:-4] in _MATRIX_KEYS:
            rows[key[:-4]].append(_floats(value, lineno))
        elif key == "kind":
            values["kind"] = value
        elif key in _SCALAR_KEYS:
            nums = _floats(value, lineno)
            if nums.size != 1:
                raise ConfigError(f"line {lineno}: {key} takes one number")
            values[key] = float(nums[0])
        elif key in _VECTOR_KEYS:
            values[key] = _floats(value, lineno)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")

    kind = values.pop("kind", "explicit" if rows["A"] else None)
    if kind not in ("butterworth", "explicit"):
        raise ConfigError(f"kind must be 'butterworth' or 'explicit', got {kind!r}")
    has_rows = any(rows.values())
    if kind == "butterworth":
        if has_rows:
            raise ConfigError("a butterworth config must not list matrices")
        if "order" not in values or "fc_hz" not in values:
            raise ConfigError("butterworth needs order and fc_hz")
        values["order"] = int(values["order"])
    else:
        for name in ("A", "B", "C"):
            if not rows[name]:
                raise ConfigError(f"explicit config needs {name}.row lines")
            if len({r.size for r in rows[name]}) != 1:
                raise ConfigError(f"rows of {name} differ in length")
            values[name] = np.vstack(rows[name])
    if "sigma_z" in values and "snr_db" in values:
        raise ConfigError("give sigma_z or snr_db, not both")
    cfg = ModelConfig(kind=kind, text=text, **values)
    try:
        cfg.build()
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> ModelConfig:
    return parse_config(Path(path).read_text())
