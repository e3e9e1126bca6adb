import math

import numpy as np
import pytest

from anyband.nn import ConfigurationError
from anyband.thermal import ThermalCalibration, normalize_bt, radiance_to_bt

CAL = ThermalCalibration(k1=774.89, k2=1321.08, bt_min=200.0, bt_95=320.0)


def test_unit_constants_give_inverse_log_two():
    cal = ThermalCalibration(k1=1.0, k2=1.0, bt_min=0.1, bt_95=1.0)
    assert radiance_to_bt(1.0, cal) == pytest.approx(1.0 / math.log(2.0),
                                                     abs=1e-12)


def test_bt_strictly_increasing_in_radiance():
    rads = np.logspace(-3, 3, 50)
    bts = [radiance_to_bt(r, CAL) for r in rads]
    assert all(a < b for a, b in zip(bts, bts[1:]))


def test_bt_limits():
    # BT -> 0+ as radiance -> 0+ (logarithmically slowly)
    assert radiance_to_bt(1e-300, CAL) < radiance_to_bt(1e-12, CAL) < 100.0
    assert radiance_to_bt(1e-300, CAL) > 0.0
    assert radiance_to_bt(1e12, CAL) > 1e5  # grows without bound


def test_nonpositive_radiance_rejected():
    with pytest.raises(ValueError):
        radiance_to_bt(0.0, CAL)
    with pytest.raises(ValueError):
        radiance_to_bt(-1.0, CAL)


def test_normalize_bt_anchors_exact():
    assert normalize_bt(CAL.bt_min, CAL) == 0.0
    assert normalize_bt(CAL.bt_95, CAL) == 1.0


def test_normalize_bt_midpoint_linear():
    mid = 0.5 * (CAL.bt_min + CAL.bt_95)
    assert normalize_bt(mid, CAL) == pytest.approx(0.5, abs=1e-12)


def test_normalize_bt_may_exceed_one():
    assert normalize_bt(CAL.bt_95 + 50.0, CAL) > 1.0


def test_normalize_bt_vectorized():
    bts = np.array([CAL.bt_min, CAL.bt_95])
    np.testing.assert_allclose(normalize_bt(bts, CAL), [0.0, 1.0])


def test_calibration_validation():
    with pytest.raises(ConfigurationError):
        ThermalCalibration(k1=0.0, k2=1.0, bt_min=1.0, bt_95=2.0)
    with pytest.raises(ConfigurationError):
        ThermalCalibration(k1=1.0, k2=-1.0, bt_min=1.0, bt_95=2.0)
    with pytest.raises(ConfigurationError):
        ThermalCalibration(k1=1.0, k2=1.0, bt_min=2.0, bt_95=2.0)
