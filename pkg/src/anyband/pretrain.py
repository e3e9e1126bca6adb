"""Unsupervised pretraining of the spectral encoder.

Scalar samples stand in for images: each sample is N random band
descriptors with N random reflectance values. Two decoder branches read
the pooled 64-feature output. The discriminator scores 2N candidate
descriptors (the N real ones plus N decoys) for membership in the input;
the estimator recovers each real band's reflectance. Both are trained
with mean squared error, and both are throwaway scaffolding: only the
encoder weights are kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concatenate
from .descriptors import (
    BandDescriptor,
    normalize_descriptors,
    normalize_wavelength,
    normalize_wavelength_array,
    sample_random_descriptor,
)
from .encoder import (
    FEATURE_WIDTH,
    EncoderWeights,
    band_features,
    combined_block_forward,
    descriptor_block_forward,
    permutation_block_forward,
)
from .encoder import DenseStack
from .optim import (
    OptimizerState,
    PlateauSchedule,
    clip_grad_norm,
    sgd_momentum_step,
)

N_MIN, N_MAX = 3, 14
REFLECTANCE_MAX = 1.2
FAKE_MIN_DISTANCE = 0.05  # in normalized central wavelength
DECODER_WIDTHS = (2 * FEATURE_WIDTH, 128, 128, 1)


@dataclass
class PretrainSample:
    descriptors: list[BandDescriptor]
    reflectances: np.ndarray  # [N] in [0, 1.2]
    fakes: list[BandDescriptor]  # N decoys, none near a real band


class DecoderWeights:
    """Discriminator and estimator heads over the pooled encoder output.

    Hidden layers are group-normalized: without normalization here the
    joint objective sits at chance level regardless of learning rate.
    """

    def __init__(self, discriminator: DenseStack, estimator: DenseStack):
        self.discriminator = discriminator
        self.estimator = estimator

    @classmethod
    def create(cls, rng, dtype=np.float32):
        return cls(
            DenseStack.create(DECODER_WIDTHS, rng, with_groupnorm=True, dtype=dtype),
            DenseStack.create(DECODER_WIDTHS, rng, with_groupnorm=True, dtype=dtype),
        )

    def parameters(self):
        return self.discriminator.parameters() + self.estimator.parameters()

    def named_tensors(self):
        named = {}
        named.update(self.discriminator.named_tensors("discriminator"))
        named.update(self.estimator.named_tensors("estimator"))
        return named


def _sample_fake(rng, real_centers_norm, max_tries=1000) -> BandDescriptor:
    for _ in range(max_tries):
        cand = sample_random_descriptor(rng)
        c = normalize_wavelength(cand.lambda_central_nm)
        if np.abs(c - real_centers_norm).min() >= FAKE_MIN_DISTANCE:
            return cand
    raise RuntimeError("could not draw a decoy descriptor away from all real bands")


def make_pretrain_sample(rng, n: int | None = None) -> PretrainSample:
    if n is None:
        n = int(rng.integers(N_MIN, N_MAX + 1))
    reals = [sample_random_descriptor(rng) for _ in range(n)]
    refl = rng.uniform(0.0, REFLECTANCE_MAX, size=n)
    centers = normalize_wavelength_array(
        np.array([d.lambda_central_nm for d in reals])
    )
    fakes = [_sample_fake(rng, centers) for _ in range(n)]
    return PretrainSample(reals, refl, fakes)


def make_pretrain_batch(rng, batch_size, shared_n=False) -> list[PretrainSample]:
    """A batch of samples; band counts are drawn uniformly from [3, 14].

    With shared_n=True one band count is drawn for the whole batch (the
    marginal per-sample distribution is unchanged); the training loop uses
    this so each step is a single stacked forward pass.
    """
    n = int(rng.integers(N_MIN, N_MAX + 1)) if shared_n else None
    return [make_pretrain_sample(rng, n) for _ in range(batch_size)]


def pooled_scalar_features(w: EncoderWeights, normalized: Tensor,
                           reflectances: Tensor) -> Tensor:
    """Encoder applied to scalar samples: [..., N, 3] + [..., N] -> [..., 64]."""
    feats = band_features(w, normalized)
    scaled = feats * (reflectances + 0.5).expand_dims(-1)
    return scaled.mean(axis=-2)


def _decoder_apply(stack: DenseStack, pooled: Tensor, cand_emb: Tensor) -> Tensor:
    """pooled [..., 64] against candidates [..., K, 64] -> [..., K]."""
    k = cand_emb.shape[-2]
    pooled_rep = pooled.expand_dims(-2).broadcast_to(
        cand_emb.shape[:-1] + (pooled.shape[-1],)
    )
    x = concatenate([pooled_rep, cand_emb], axis=-1)
    out = stack.forward(x)
    return out.reshape(out.shape[:-1])


def discriminator_forward(w: EncoderWeights, dw: DecoderWeights,
                          pooled_feat: Tensor,
                          candidate: BandDescriptor) -> Tensor:
    """Membership confidence in (0, 1) for one candidate descriptor."""
    emb = descriptor_block_forward(
        w, Tensor(normalize_descriptors([candidate], dtype=pooled_feat.dtype))
    )
    return _decoder_apply(dw.discriminator, pooled_feat, emb).sigmoid()


def estimator_forward(w: EncoderWeights, dw: DecoderWeights,
                      pooled_feat: Tensor,
                      descriptor: BandDescriptor) -> Tensor:
    """Unbounded reflectance estimate for one input descriptor."""
    emb = descriptor_block_forward(
        w, Tensor(normalize_descriptors([descriptor], dtype=pooled_feat.dtype))
    )
    return _decoder_apply(dw.estimator, pooled_feat, emb)


def _bucket_by_n(batch):
    buckets: dict[int, list[PretrainSample]] = {}
    for s in batch:
        buckets.setdefault(len(s.descriptors), []).append(s)
    return buckets


def _bucket_losses(samples, w, dw, dtype):
    """Discriminator/estimator MSE for samples sharing one band count."""
    n = len(samples[0].descriptors)
    real_norm = np.stack(
        [normalize_descriptors(s.descriptors, dtype=dtype) for s in samples]
    )
    fake_norm = np.stack(
        [normalize_descriptors(s.fakes, dtype=dtype) for s in samples]
    )
    refl = np.stack([s.reflectances for s in samples]).astype(dtype)

    real_t = Tensor(real_norm)  # [B, N, 3]
    refl_t = Tensor(refl)  # [B, N]

    # One descriptor-block pass over reals + fakes together; the real half
    # feeds the permutation/combined blocks and the estimator, the whole
    # thing feeds the discriminator.
    cand_norm = Tensor(np.concatenate([real_norm, fake_norm], axis=1))  # [B, 2N, 3]
    cand_emb = descriptor_block_forward(w, cand_norm)  # [B, 2N, 64]
    real_emb = cand_emb[..., :n, :]

    feats = combined_block_forward(w, permutation_block_forward(w, real_emb))
    scaled = feats * (refl_t + 0.5).expand_dims(-1)
    pooled = scaled.mean(axis=-2)  # [B, 64]

    p = _decoder_apply(dw.discriminator, pooled, cand_emb).sigmoid()  # [B, 2N]
    targets = np.concatenate(
        [np.ones((len(samples), n), dtype=dtype),
         np.zeros((len(samples), n), dtype=dtype)],
        axis=1,
    )
    l_disc = (p - Tensor(targets)).square().mean()

    r_hat = _decoder_apply(dw.estimator, pooled, real_emb)  # [B, N]
    l_est = (r_hat - refl_t).square().mean()
    return l_disc, l_est, p.data, targets, r_hat.data


def pretrain_loss(batch, w: EncoderWeights, dw: DecoderWeights, dtype=np.float32):
    """(L_discriminator, L_estimator, L_total) over a batch of samples.

    Per-sample losses are means over that sample's 2N candidates (or N real
    bands); the batch loss is the sample-weighted mean, so samples with
    different band counts contribute equally.
    """
    total = len(batch)
    l_disc = None
    l_est = None
    for samples in _bucket_by_n(batch).values():
        ld, le, *_ = _bucket_losses(samples, w, dw, dtype)
        weight = len(samples) / total
        ld = ld * weight
        le = le * weight
        l_disc = ld if l_disc is None else l_disc + ld
        l_est = le if l_est is None else l_est + le
    return l_disc, l_est, l_disc + l_est


@dataclass
class PretrainConfig:
    steps: int = 5000
    batch_size: int = 256
    seed: int = 0
    learning_rate: float = 1e-3
    momentum: float = 0.99
    steps_per_epoch: int = 500
    log_interval: int = 100
    holdout_size: int = 512
    clip_norm: float = 1.0  # 0 disables clipping
    log_path: str | None = None


@dataclass
class PretrainResult:
    encoder: EncoderWeights
    decoders: DecoderWeights
    history: list[tuple[int, float, float, float]]  # (step, L_disc, L_est, L_total)
    epoch_means: list[float]  # mean L_total per steps_per_epoch window
    holdout_disc_accuracy: float
    holdout_est_mse: float


def evaluate_holdout(w, dw, batch, dtype=np.float32):
    """Discriminator accuracy (threshold 0.5) and estimator MSE on a batch."""
    correct = 0
    total = 0
    sq_err = 0.0
    n_est = 0
    for samples in _bucket_by_n(batch).values():
        _, _, p, targets, r_hat = _bucket_losses(samples, w, dw, dtype)
        correct += int(((p > 0.5) == (targets > 0.5)).sum())
        total += p.size
        refl = np.stack([s.reflectances for s in samples])
        sq_err += float(((r_hat - refl) ** 2).sum())
        n_est += refl.size
    return correct / total, sq_err / n_est


def pretrain_run(config: PretrainConfig) -> PretrainResult:
    """Train encoder + decoders from scratch; deterministic given the seed."""
    init_rng = np.random.default_rng(config.seed)
    data_rng = np.random.default_rng(config.seed + 1)
    holdout_rng = np.random.default_rng(config.seed + 2)

    w = EncoderWeights.create(init_rng)
    dw = DecoderWeights.create(init_rng)
    params = w.parameters() + dw.parameters()
    opt = OptimizerState(params, config.learning_rate, config.momentum)
    sched = PlateauSchedule()

    history = []
    log_file = None
    if config.log_path:
        log_file = open(config.log_path, "w", encoding="utf-8")
        log_file.write("step,L_disc,L_est,L_total\n")
    epoch_losses = []
    epoch_means = []
    for step in range(1, config.steps + 1):
        batch = make_pretrain_batch(data_rng, config.batch_size, shared_n=True)
        l_disc, l_est, l_total = pretrain_loss(batch, w, dw)
        loss_val = float(l_total.item())
        if not math.isfinite(loss_val):
            raise RuntimeError(
                f"pretraining diverged at step {step}: loss={loss_val}"
            )
        l_total.backward()
        if config.clip_norm > 0.0:
            clip_grad_norm(params, config.clip_norm)
        sgd_momentum_step(opt)
        epoch_losses.append(loss_val)
        if step % config.log_interval == 0 or step == config.steps:
            entry = (step, float(l_disc.item()), float(l_est.item()), loss_val)
            history.append(entry)
            if log_file is not None:
                log_file.write("{},{:.6f},{:.6f},{:.6f}\n".format(*entry))
                log_file.flush()
        if step % config.steps_per_epoch == 0:
            mean_loss = float(np.mean(epoch_losses))
            epoch_means.append(mean_loss)
            opt.learning_rate = sched.update(opt.learning_rate, mean_loss)
            epoch_losses = []
    if epoch_losses:
        epoch_means.append(float(np.mean(epoch_losses)))

    if log_file is not None:
        log_file.close()

    holdout = make_pretrain_batch(holdout_rng, config.holdout_size)
    acc, mse = evaluate_holdout(w, dw, holdout)
    return PretrainResult(w, dw, history, epoch_means, acc, mse)
