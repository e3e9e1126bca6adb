"""Supervised cloud masking: pixel head, augmentation, training, prediction.

The classifier is a 2-layer dense head applied independently at every
pixel, reading either the encoder's 64-feature field (sensor independent)
or raw band values (fixed-sensor baseline). Training follows stochastic
gradient descent with momentum and a reduce-on-plateau schedule; in
random-subset mode each step draws a fresh subset of at least 3 bands so
the model never sees a fixed band layout.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, band_multiply_pool, bce_with_logits
from .checkpoint import load_checkpoint, save_checkpoint
from .descriptors import SensorSpec, normalize_descriptors, sample_band_subset
from .encoder import (
    BAND_OFFSET,
    FEATURE_WIDTH,
    MIN_BANDS,
    EncoderWeights,
    SpectralStack,
    band_features,
)
from .encoder import DenseStack
from .nn import ConfigurationError
from .optim import OptimizerState, PlateauSchedule, sgd_momentum_step

log = logging.getLogger(__name__)

HEAD_HIDDEN_ENCODER = 32
HEAD_HIDDEN_RAW = 77  # sized so a 13-band head lands near 1,154 parameters
NODATA = 255


class InputError(ValueError):
    pass


class PixelHeadWeights:
    def __init__(self, stack: DenseStack):
        self.stack = stack

    @classmethod
    def create(cls, in_width, hidden, rng, dtype=np.float32):
        return cls(DenseStack.create((in_width, hidden, 1), rng,
                                     with_groupnorm=False, dtype=dtype))

    @property
    def in_width(self):
        return self.stack.layers[0].in_width

    def parameters(self):
        return self.stack.parameters()

    def named_tensors(self):
        return self.stack.named_tensors("head")


def head_logits(hw: PixelHeadWeights, features: Tensor) -> Tensor:
    out = hw.stack.forward(features)
    return out.reshape(out.shape[:-1])


def head_forward(hw: PixelHeadWeights, features: Tensor) -> Tensor:
    """Per-pixel cloud probability in (0, 1)."""
    return head_logits(hw, features).sigmoid()


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class AugmentConfig:
    crop: int = 257
    p_flip_h: float = 0.5
    p_flip_v: float = 0.5
    p_rotate: float = 0.5
    p_translate: float = 1.0
    p_gauss: float = 0.5
    p_saltpepper: float = 0.5
    p_reflectance_shift: float = 0.5
    gauss_sigma: float = 0.01
    sp_rate: float = 0.001
    shift_low: float = 0.95
    shift_high: float = 1.05


def augment(patch: SpectralStack, rng: np.random.Generator,
            cfg: AugmentConfig | None = None) -> SpectralStack:
    """Random crop plus geometric and radiometric augmentation.

    Geometric ops move the mask identically; radiometric ops leave it
    untouched. With all probabilities zero this reduces to a center crop.
    """
    cfg = cfg or AugmentConfig()
    h, w = patch.extent
    c = cfg.crop
    if h < c or w < c:
        raise InputError(f"patch {h}x{w} smaller than crop {c}x{c}")

    if rng.uniform() < cfg.p_translate:
        oy = int(rng.integers(0, h - c + 1))
        ox = int(rng.integers(0, w - c + 1))
    else:
        oy, ox = (h - c) // 2, (w - c) // 2
    planes = patch.planes[:, oy:oy + c, ox:ox + c].copy()
    mask = None if patch.mask is None else patch.mask[oy:oy + c, ox:ox + c].copy()

    if rng.uniform() < cfg.p_flip_h:
        planes = planes[:, :, ::-1]
        mask = None if mask is None else mask[:, ::-1]
    if rng.uniform() < cfg.p_flip_v:
        planes = planes[:, ::-1, :]
        mask = None if mask is None else mask[::-1, :]
    if rng.uniform() < cfg.p_rotate:
        k = int(rng.integers(1, 4))
        planes = np.rot90(planes, k, axes=(1, 2))
        mask = None if mask is None else np.rot90(mask, k)
    planes = np.ascontiguousarray(planes)
    mask = None if mask is None else np.ascontiguousarray(mask)

    if rng.uniform() < cfg.p_gauss:
        planes = planes + rng.normal(0.0, cfg.gauss_sigma,
                                     size=planes.shape).astype(planes.dtype)
    if rng.uniform() < cfg.p_saltpepper:
        hits = rng.uniform(size=planes.shape) < cfg.sp_rate
        salt = rng.uniform(size=planes.shape) < 0.5
        planes = np.where(hits & salt, np.float32(1.0), planes)
        planes = np.where(hits & ~salt, np.float32(0.0), planes)
    if rng.uniform() < cfg.p_reflectance_shift:
        scale = rng.uniform(cfg.shift_low, cfg.shift_high,
                            size=(planes.shape[0], 1, 1)).astype(planes.dtype)
        planes = planes * scale

    return SpectralStack(list(patch.descriptors), planes.astype(np.float32),
                         mask)


# ---------------------------------------------------------------------------
# model container


class MaskModel:
    """Pixel head plus optional encoder, with checkpoint round-tripping."""

    def __init__(self, head: PixelHeadWeights,
                 encoder: EncoderWeights | None = None):
        self.head = head
        self.encoder = encoder
        if encoder is not None and head.in_width != FEATURE_WIDTH:
            raise ConfigurationError(
                f"encoder-backed head must read {FEATURE_WIDTH} features, "
                f"got {head.in_width}"
            )

    @property
    def uses_encoder(self):
        return self.encoder is not None

    def parameters(self):
        params = self.head.parameters()
        if self.encoder is not None:
            params = params + self.encoder.parameters()
        return params

    def named_tensors(self):
        named = dict(self.head.named_tensors())
        if self.encoder is not None:
            named.update(self.encoder.named_tensors())
        return named

    def save(self, path):
        tensors = {k: v.data for k, v in self.named_tensors().items()}
        tensors["meta.uses_encoder"] = np.array(
            [1.0 if self.uses_encoder else 0.0], dtype=np.float32
        )
        save_checkpoint(path, tensors)

    @classmethod
    def load(cls, path):
        tensors = load_checkpoint(path)
        uses_encoder = bool(tensors.pop("meta.uses_encoder")[0])
        rng = np.random.default_rng(0)
        in_w = tensors["head.layer0.weight"].shape[1]
        hidden = tensors["head.layer0.weight"].shape[0]
        head = PixelHeadWeights.create(in_w, hidden, rng)
        encoder = EncoderWeights.create(rng) if uses_encoder else None
        model = cls(head, encoder)
        for name, t in model.named_tensors().items():
            t.data = tensors[name].astype(np.float32)
        return model


def load_encoder_checkpoint(path) -> EncoderWeights:
    tensors = load_checkpoint(path)
    w = EncoderWeights.create(np.random.default_rng(0))
    for name, t in w.named_tensors().items():
        t.data = tensors[name].astype(np.float32)
    return w


def save_encoder_checkpoint(path, w: EncoderWeights):
    save_checkpoint(path, {k: v.data for k, v in w.named_tensors().items()})


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingConfig:
    patch_size: int = 257
    crop_source: int = 263
    batch_size: int = 8
    learning_rate: float = 1e-3
    momentum: float = 0.99
    steps_per_epoch: int = 1000
    max_epochs: int = 10
    band_mode: str = "fixed"  # or "random-subset"
    seed: int = 0
    head_hidden: int | None = None
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.crop_source < self.patch_size:
            raise ConfigurationError(
                f"crop_source {self.crop_source} < patch_size {self.patch_size}"
            )
        if self.band_mode not in ("fixed", "random-subset"):
            raise ConfigurationError(f"unknown band_mode {self.band_mode!r}")


@dataclass
class TrainResult:
    model: MaskModel
    epoch_losses: list[float]
    step_losses: list[float]
    subset_sizes: list[int]


def _batch_logits(model: MaskModel, descriptors, planes: np.ndarray) -> Tensor:
    """planes [B, N, H, W] -> logits Tensor [B, H, W]."""
    if model.uses_encoder:
        norm = Tensor(normalize_descriptors(descriptors))
        feats = band_features(model.encoder, norm)  # [N, 64]
        field = band_multiply_pool(feats, Tensor(planes), offset=BAND_OFFSET)
    else:
        if planes.shape[1] != model.head.in_width:
            raise ConfigurationError(
                f"baseline head expects {model.head.in_width} bands, "
                f"got {planes.shape[1]}"
            )
        field = Tensor(np.moveaxis(planes, 1, -1).copy())  # [B, H, W, N]
    return head_logits(model.head, field)


def train_run(config: TrainingConfig, data: list[SpectralStack],
              encoder_w: EncoderWeights | None = None) -> TrainResult:
    """Train a mask model; encoder weights, when given, are fine-tuned jointly."""
    if not data:
        raise InputError("no training patches")
    rng = np.random.default_rng(config.seed)
    init_rng = np.random.default_rng(config.seed + 1)

    n_bands = data[0].n_bands
    if encoder_w is not None:
        head = PixelHeadWeights.create(
            FEATURE_WIDTH, config.head_hidden or HEAD_HIDDEN_ENCODER, init_rng
        )
        model = MaskModel(head, encoder_w)
        spec = SensorSpec("training-data", tuple(data[0].descriptors))
    else:
        head = PixelHeadWeights.create(
            n_bands, config.head_hidden or HEAD_HIDDEN_RAW, init_rng
        )
        model = MaskModel(head, None)
        spec = None

    aug_cfg = config.augment
    if aug_cfg.crop != config.patch_size:
        aug_cfg = AugmentConfig(**{**aug_cfg.__dict__, "crop": config.patch_size})

    opt = OptimizerState(model.parameters(), config.learning_rate, config.momentum)
    sched = PlateauSchedule()
    epoch_losses: list[float] = []
    step_losses: list[float] = []
    subset_sizes: list[int] = []

    for epoch in range(config.max_epochs):
        losses = []
        for _ in range(config.steps_per_epoch):
            idx = rng.integers(0, len(data), size=config.batch_size)
            patches = [augment(data[i], rng, aug_cfg) for i in idx]
            if config.band_mode == "random-subset":
                subset = sample_band_subset(spec, rng)
                subset_sizes.append(len(subset))
                patches = [p.subset(subset) for p in patches]
            planes = np.stack([p.planes for p in patches])
            masks = np.stack([p.mask for p in patches])
            valid = masks != NODATA
            if not valid.any():
                log.warning("batch has no labeled pixels; skipping step")
                continue
            logits = _batch_logits(model, patches[0].descriptors, planes)
            loss = bce_with_logits(logits, (masks == 1), valid)
            loss_val = float(loss.item())
            if not math.isfinite(loss_val):
                raise RuntimeError(f"training diverged: loss={loss_val}")
            loss.backward()
            sgd_momentum_step(opt)
            losses.append(loss_val)
            step_losses.append(loss_val)
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        epoch_losses.append(mean_loss)
        opt.learning_rate = sched.update(opt.learning_rate, mean_loss)

    return TrainResult(model, epoch_losses, step_losses, subset_sizes)


# ---------------------------------------------------------------------------
# prediction


def _tile_spans(extent, tile, overlap):
    """Tile start offsets plus per-tile core regions (borders discarded
    except at raster edges); cores partition [0, extent)."""
    if extent <= tile:
        return [(0, 0, extent)]
    margin = overlap // 2
    stride = tile - overlap
    starts = list(range(0, extent - tile, stride)) + [extent - tile]
    spans = []
    prev_end = 0
    for i, s in enumerate(starts):
        core_lo = prev_end
        core_hi = extent if i == len(starts) - 1 else min(s + tile - margin, extent)
        if core_hi > core_lo:
            spans.append((s, core_lo, core_hi))
            prev_end = core_hi
    return spans


def predict_mask(model: MaskModel, stack: SpectralStack, band_subset=None,
                 tile=257, overlap=32):
    """Tiled inference; returns ({0,1} mask, float32 probability raster)."""
    if band_subset is not None:
        missing = [i for i in band_subset if not 0 <= i < stack.n_bands]
        if missing:
            avail = [
                f"{i}: {d.lambda_central_nm:.0f}nm"
                for i, d in enumerate(stack.descriptors)
            ]
            raise ConfigurationError(
                f"requested band indices {missing} not in stack; available: "
                + ", ".join(avail)
            )
        stack = stack.subset(band_subset)
    if model.uses_encoder and stack.n_bands < MIN_BANDS:
        raise ConfigurationError(
            f"encoder models need at least {MIN_BANDS} bands, got {stack.n_bands}"
        )

    h, w = stack.extent
    prob = np.zeros((h, w), dtype=np.float32)
    tasks = [
        (ys, ylo, yhi, xs, xlo, xhi)
        for ys, ylo, yhi in _tile_spans(h, tile, overlap)
        for xs, xlo, xhi in _tile_spans(w, tile, overlap)
    ]

    def run_tile(task):
        ys, ylo, yhi, xs, xlo, xhi = task
        th = min(tile, h)
        tw = min(tile, w)
        window = stack.planes[:, ys:ys + th, xs:xs + tw]
        logits = _batch_logits(model, stack.descriptors, window[None])
        p = logits.sigmoid().data[0]
        return task, p[ylo - ys:yhi - ys, xlo - xs:xhi - xs]

    threads = int(os.environ.get("SENSEI_THREADS", "0") or 0)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_tile, tasks))
    else:
        results = [run_tile(t) for t in tasks]
    for (ys, ylo, yhi, xs, xlo, xhi), p in results:
        prob[ylo:yhi, xlo:xhi] = p
    mask = (prob > 0.5).astype(np.uint8)
    return mask, prob
