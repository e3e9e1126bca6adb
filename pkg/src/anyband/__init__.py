"""Sensor-independent spectral encoding and cloud masking.

Any set of at least 3 spectral bands (wavelength descriptors plus
reflectance rasters) is mapped to a fixed 64-channel feature field that a
downstream classifier can consume without knowing which instrument
produced the data.
"""

from .autodiff import Tensor
from .descriptors import (
    BandDescriptor,
    SensorSpec,
    builtin_sensors,
    normalize_descriptor,
    normalize_wavelength,
    sample_band_subset,
    sample_random_descriptor,
)
from .encoder import EncoderWeights, SpectralStack, encode, parameter_count
from .metrics import ConfusionCounts, accumulate_confusion, compute_metrics
from .pretrain import PretrainConfig, pretrain_run
from .stackfile import read_stack, write_stack
from .supervised import MaskModel, TrainingConfig, predict_mask, train_run
from .synth import synth_scene
from .thermal import ThermalCalibration, normalize_bt, radiance_to_bt

__all__ = [
    "Tensor",
    "BandDescriptor",
    "SensorSpec",
    "builtin_sensors",
    "normalize_descriptor",
    "normalize_wavelength",
    "sample_band_subset",
    "sample_random_descriptor",
    "EncoderWeights",
    "SpectralStack",
    "encode",
    "parameter_count",
    "ConfusionCounts",
    "accumulate_confusion",
    "compute_metrics",
    "PretrainConfig",
    "pretrain_run",
    "read_stack",
    "write_stack",
    "MaskModel",
    "TrainingConfig",
    "predict_mask",
    "train_run",
    "synth_scene",
    "ThermalCalibration",
    "normalize_bt",
    "radiance_to_bt",
]

__version__ = "0.1.0"
