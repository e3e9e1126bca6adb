"""Spectral band descriptors: normalization, random generation, registries.

A band is described by its lower, central, and upper wavelengths in
nanometres. Wavelengths are mapped onto a logarithmic scale before any
network sees them, so that spacing between visible bands and spacing
between thermal bands are comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConfigurationError

WAVELENGTH_FLOOR_NM = 300.0
WAVELENGTH_CEIL_NM = 25_000.0
CENTRAL_MIN_NM = 400.0
CENTRAL_MAX_NM = 20_000.0


class WavelengthDomainError(ValueError):
    pass


@dataclass(frozen=True)
class BandDescriptor:
    lambda_min_nm: float
    lambda_central_nm: float
    lambda_max_nm: float

    def __post_init__(self):
        lo, mid, hi = self.lambda_min_nm, self.lambda_central_nm, self.lambda_max_nm
        if not (WAVELENGTH_FLOOR_NM < lo <= mid <= hi <= WAVELENGTH_CEIL_NM):
            raise WavelengthDomainError(
                f"descriptor ({lo}, {mid}, {hi}) nm violates "
                f"{WAVELENGTH_FLOOR_NM} < min <= central <= max <= "
                f"{WAVELENGTH_CEIL_NM}"
            )


@dataclass(frozen=True)
class SensorSpec:
    name: str
    bands: tuple[BandDescriptor, ...]
    nominal_resolution_m: float = 30.0

    def __post_init__(self):
        if len(self.bands) < 3:
            raise ConfigurationError(
                f"sensor {self.name!r} has {len(self.bands)} bands; minimum is 3"
            )


def normalize_wavelength(lambda_nm: float) -> float:
    """Map nanometres onto the log scale: log10(lambda - 300) - 2."""
    if lambda_nm <= WAVELENGTH_FLOOR_NM:
        raise WavelengthDomainError(
            f"wavelength {lambda_nm} nm must exceed {WAVELENGTH_FLOOR_NM} nm"
        )
    return np.log10(lambda_nm - WAVELENGTH_FLOOR_NM) - 2.0


def denormalize_wavelength(v: float) -> float:
    return 10.0 ** (v + 2.0) + WAVELENGTH_FLOOR_NM


def normalize_descriptor(d: BandDescriptor) -> np.ndarray:
    return np.array(
        [
            normalize_wavelength(d.lambda_min_nm),
            normalize_wavelength(d.lambda_central_nm),
            normalize_wavelength(d.lambda_max_nm),
        ]
    )


def descriptor_array(descriptors) -> np.ndarray:
    """Raw wavelength triplets as an [N, 3] array (nm)."""
    return np.array(
        [[d.lambda_min_nm, d.lambda_central_nm, d.lambda_max_nm]
         for d in descriptors]
    )


def normalize_wavelength_array(lambda_nm: np.ndarray) -> np.ndarray:
    if np.any(lambda_nm <= WAVELENGTH_FLOOR_NM):
        raise WavelengthDomainError(
            f"wavelengths must exceed {WAVELENGTH_FLOOR_NM} nm"
        )
    return np.log10(lambda_nm - WAVELENGTH_FLOOR_NM) - 2.0


def normalize_descriptors(descriptors, dtype=np.float32) -> np.ndarray:
    """Stack normalized descriptor triplets into an [N, 3] array."""
    return normalize_wavelength_array(descriptor_array(descriptors)).astype(dtype)


def sample_random_descriptor(rng: np.random.Generator) -> BandDescriptor:
    """Draw a plausible band: log-uniform central wavelength, relative width.

    Central wavelength is log-uniform over [400 nm, 20 um]; the half-width
    is a uniform 1-15% of the central wavelength, clamped so the band stays
    inside the representable range.
    """
    central = 10.0 ** rng.uniform(np.log10(CENTRAL_MIN_NM), np.log10(CENTRAL_MAX_NM))
    half = central * rng.uniform(0.01, 0.15)
    lo = max(central - half, WAVELENGTH_FLOOR_NM + 10.0)
    hi = min(central + half, WAVELENGTH_CEIL_NM)
    return BandDescriptor(lo, central, hi)


def sample_band_subset(spec: SensorSpec, rng: np.random.Generator) -> list[int]:
    """Random subset of band indices, size uniform in [3, N], order preserved."""
    n = len(spec.bands)
    if n < 3:
        raise ConfigurationError(f"sensor {spec.name!r} has fewer than 3 bands")
    k = int(rng.integers(3, n + 1))
    idx = rng.choice(n, size=k, replace=False)
    return sorted(int(i) for i in idx)


def parse_registry(text: str) -> dict[str, SensorSpec]:
    """Parse a sensor registry: one band per line.

    Format: `name lambda_min lambda_central lambda_max` (nm), `#` comments.
    Bands sharing a name form one sensor, in file order.
    """
    grouped: dict[str, list[BandDescriptor]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ConfigurationError(
                f"registry line {lineno}: expected 'name min central max', "
                f"got {raw!r}"
            )
        name = parts[0]
        try:
            lo, mid, hi = (float(p) for p in parts[1:])
        except ValueError as e:
            raise ConfigurationError(f"registry line {lineno}: {e}") from e
        grouped.setdefault(name, []).append(BandDescriptor(lo, mid, hi))
    return {
        name: SensorSpec(name, tuple(bands)) for name, bands in grouped.items()
    }


def load_registry(path) -> dict[str, SensorSpec]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_registry(f.read())


# Nominal band edges for a handful of familiar instruments plus the two
# synthetic sensors used in tests and demos. Values are approximate.
BUILTIN_REGISTRY = """\
# name  lambda_min  lambda_central  lambda_max   (nm; approximate)
sentinel2  425 443 461
sentinel2  446 492 538
sentinel2  537 560 582
sentinel2  646 665 684
sentinel2  695 704 714
sentinel2  731 740 749
sentinel2  769 783 797
sentinel2  760 833 907
sentinel2  848 865 881
sentinel2  932 945 958
sentinel2  1337 1374 1411
sentinel2  1539 1614 1689
sentinel2  2078 2202 2326
landsat8   435 443 451
landsat8   452 482 512
landsat8   533 561 590
landsat8   636 655 673
landsat8   851 865 879
landsat8   1566 1609 1651
landsat8   2107 2201 2294
landsat8   503 590 676
landsat8   1363 1373 1384
landsat8   10600 10895 11190
landsat8   11500 12005 12510
# Synthetic 10-band instrument "alpha" used for desk-scale experiments.
synth_alpha  430 450 470
synth_alpha  520 550 580
synth_alpha  630 660 690
synth_alpha  750 780 810
synth_alpha  840 870 900
synth_alpha  950 990 1030
synth_alpha  1180 1240 1300
synth_alpha  1500 1610 1720
synth_alpha  2000 2190 2380
synth_alpha  10000 11000 12000
# Synthetic instrument "beta": bands interleave alpha's wavelengths.
synth_beta  470 500 530
synth_beta  580 600 620
synth_beta  690 720 750
synth_beta  800 825 850
synth_beta  900 930 960
synth_beta  1320 1400 1480
synth_beta  1750 1900 2050
synth_beta  8000 9000 10000
"""


def builtin_sensors() -> dict[str, SensorSpec]:
    return parse_registry(BUILTIN_REGISTRY)
