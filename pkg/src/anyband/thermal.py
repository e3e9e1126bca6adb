"""Thermal-band preprocessing: radiance to brightness temperature and scaling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConfigurationError


@dataclass(frozen=True)
class ThermalCalibration:
    """Sensor constants K1/K2 plus the Kelvin anchors used for scaling.

    The anchors normally come from archive statistics (the 95th-percentile
    convention); for synthetic sensors they are supplied directly.
    """

    k1: float
    k2: float
    bt_min: float
    bt_95: float

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ConfigurationError("K1 and K2 must be positive")
        if self.bt_95 <= self.bt_min:
            raise ConfigurationError("BT_95 must exceed BT_min")


def radiance_to_bt(radiance, cal: ThermalCalibration):
    """BT = K2 / ln(K1/radiance + 1); radiance must be positive."""
    radiance = np.asarray(radiance, dtype=np.float64)
    if np.any(radiance <= 0):
        raise ValueError("radiance must be positive")
    out = cal.k2 / np.log(cal.k1 / radiance + 1.0)
    return float(out) if out.ndim == 0 else out


def normalize_bt(bt, cal: ThermalCalibration):
    """Linear scaling: 0 at BT_min, 1 at the 95th-percentile anchor."""
    bt = np.asarray(bt, dtype=np.float64)
    out = (bt - cal.bt_min) / (cal.bt_95 - cal.bt_min)
    return float(out) if out.ndim == 0 else out
