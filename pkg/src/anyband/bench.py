"""Timing harness: forward-pass speed in ms per megapixel, per band count."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .descriptors import sample_random_descriptor
from .encoder import SpectralStack
from .supervised import MaskModel, predict_mask


@dataclass
class BenchRow:
    label: str
    parameters: int
    ms_per_megapixel: float  # median over repeats
    ms_spread: float  # interquartile range


def _model_parameters(model: MaskModel) -> int:
    return sum(int(p.size) for p in model.parameters())


def _time_forward(model, stack, n_repeats, warmup):
    megapixels = stack.extent[0] * stack.extent[1] / 1e6
    times = []
    for i in range(warmup + n_repeats):
        t0 = time.perf_counter()
        predict_mask(model, stack, tile=max(stack.extent) + 1)
        dt = (time.perf_counter() - t0) * 1e3 / megapixels
        if i >= warmup:
            times.append(dt)
    times = np.array(times)
    q1, med, q3 = np.percentile(times, [25, 50, 75])
    return float(med), float(q3 - q1)


def bench(model: MaskModel, n_repeats=1600, patch=257, band_counts=(3, 8, 13),
          warmup=5, seed=0) -> list[BenchRow]:
    """Time encode+head forward passes; file I/O is excluded.

    Encoder models get one row per band count; a raw-band model's band
    count is fixed by its input width, so it gets a single row.
    """
    rng = np.random.default_rng(seed)
    params = _model_parameters(model)
    counts = list(band_counts) if model.uses_encoder else [model.head.in_width]
    rows = []
    for k in counts:
        descriptors = [sample_random_descriptor(rng) for _ in range(k)]
        planes = rng.uniform(0.0, 1.0, size=(k, patch, patch)).astype(np.float32)
        stack = SpectralStack(descriptors, planes)
        med, spread = _time_forward(model, stack, n_repeats, warmup)
        kind = "encoder+head" if model.uses_encoder else "head"
        rows.append(BenchRow(f"{kind} ({k} bands)", params, med, spread))
    return rows


def format_bench(rows: list[BenchRow]) -> str:
    lines = ["model,parameters,ms_per_megapixel_median,ms_per_megapixel_iqr"]
    for r in rows:
        lines.append(
            f"{r.label},{r.parameters},{r.ms_per_megapixel:.2f},{r.ms_spread:.2f}"
        )
    return "\n".join(lines) + "\n"
