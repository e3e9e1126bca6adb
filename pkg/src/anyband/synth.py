"""Synthetic multispectral scene generation for desk-scale experiments.

Scenes are built from octaves of bilinear value noise: a smooth, dark,
band-correlated "surface" with bright, spatially coherent "cloud" blobs
laid on top. Cloud brightness is roughly flat across reflective bands;
bands in the thermal range get inverted contrast (clouds cold). The task
is separable per pixel but not trivially so: blob edges are blended and
every band carries noise.
"""

from __future__ import annotations

import numpy as np

from .descriptors import SensorSpec
from .encoder import SpectralStack

THERMAL_THRESHOLD_NM = 3000.0


def value_noise(rng: np.random.Generator, h, w, octaves=4, base_res=4,
                persistence=0.55):
    """Sum of bilinearly upsampled random grids; values roughly in [0, 1]."""
    out = np.zeros((h, w), dtype=np.float64)
    amp = 1.0
    total = 0.0
    res = base_res
    for _ in range(octaves):
        grid = rng.uniform(0.0, 1.0, size=(res + 1, res + 1))
        gy = np.linspace(0.0, res, h)
        gx = np.linspace(0.0, res, w)
        iy = np.minimum(gy.astype(int), res - 1)
        ix = np.minimum(gx.astype(int), res - 1)
        fy = (gy - iy)[:, None]
        fx = (gx - ix)[None, :]
        g00 = grid[np.ix_(iy, ix)]
        g01 = grid[np.ix_(iy, ix + 1)]
        g10 = grid[np.ix_(iy + 1, ix)]
        g11 = grid[np.ix_(iy + 1, ix + 1)]
        layer = (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
                 + g10 * fy * (1 - fx) + g11 * fy * fx)
        out += amp * layer
        total += amp
        amp *= persistence
        res *= 2
    return out / total


def synth_scene(spec: SensorSpec, rng: np.random.Generator, size=64,
                cloud_fraction=0.4, saturate_ceiling=None,
                resample_factor=1) -> SpectralStack:
    """Generate one labeled scene for the given sensor.

    cloud_fraction sets the mask's cloud share (matched via a quantile
    threshold on the blob field). saturate_ceiling clamps and quantizes
    reflectances to 8 bits below the ceiling; resample_factor block-averages
    and re-expands the planes to mimic a coarser instrument.
    """
    h = w = int(size)
    n = len(spec.bands)

    blob = value_noise(rng, h, w, octaves=4, base_res=3)
    if cloud_fraction <= 0:
        alpha = np.zeros((h, w))
    else:
        thr = np.quantile(blob, 1.0 - min(cloud_fraction, 1.0))
        width = 0.08 * (blob.max() - blob.min() + 1e-9)
        alpha = np.clip((blob - thr) / width + 0.5, 0.0, 1.0)
    mask = (alpha > 0.5).astype(np.uint8)

    # two shared structure fields give the surface band-correlated texture
    tex_a = value_noise(rng, h, w, octaves=3, base_res=4)
    tex_b = value_noise(rng, h, w, octaves=3, base_res=6)
    cloud_tex = value_noise(rng, h, w, octaves=3, base_res=5)
    cloud_base = rng.uniform(0.6, 1.05)

    planes = np.empty((n, h, w), dtype=np.float32)
    for i, band in enumerate(spec.bands):
        thermal = band.lambda_central_nm > THERMAL_THRESHOLD_NM
        if thermal:
            # normalized BT: warm surface, cold cloud tops
            surface = 0.55 + 0.35 * (0.6 * tex_a + 0.4 * tex_b)
            cloud = 0.10 + 0.20 * cloud_tex
        else:
            lo = rng.uniform(0.02, 0.12)
            span = rng.uniform(0.08, 0.23)
            wa = rng.uniform(0.3, 0.7)
            surface = lo + span * (wa * tex_a + (1.0 - wa) * tex_b)
            cloud = np.clip(
                cloud_base * rng.uniform(0.95, 1.05) + 0.10 * (cloud_tex - 0.5),
                0.5, 1.15,
            )
        plane = surface * (1.0 - alpha) + cloud * alpha
        plane = plane + rng.normal(0.0, 0.005, size=(h, w))
        planes[i] = np.clip(plane, 0.0, 1.2)

    if resample_factor > 1:
        f = int(resample_factor)
        hh, ww = (h // f) * f, (w // f) * f
        coarse = planes[:, :hh, :ww].reshape(n, hh // f, f, ww // f, f).mean(axis=(2, 4))
        planes[:, :hh, :ww] = np.repeat(np.repeat(coarse, f, axis=1), f, axis=2)

    if saturate_ceiling is not None:
        c = float(saturate_ceiling)
        planes = (np.round(np.clip(planes / c, 0.0, 1.0) * 255.0) / 255.0 * c
                  ).astype(np.float32)

    return SpectralStack(list(spec.bands), planes, mask)
