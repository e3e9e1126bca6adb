"""End-to-end acceptance suite.

Each test exercises one externally observable guarantee of the package:
set-symmetry of the encoder, gradient correctness, training outcomes on
synthetic scenes, metric arithmetic, file-format durability, benchmark
shape, and whole-pipeline determinism. Timing bounds use CPU time, not
wall time, so results do not depend on unrelated load on the host.
"""

from __future__ import annotations

import struct
import time
from fractions import Fraction

import numpy as np
import pytest

from anyband.autodiff import Tensor, bce_with_logits
from anyband.checkpoint import load_checkpoint
from anyband.cli import main as cli_main
from anyband.descriptors import (
    BandDescriptor,
    builtin_sensors,
    normalize_descriptors,
    normalize_wavelength,
    sample_random_descriptor,
)
from anyband.encoder import (
    EncoderWeights,
    SpectralStack,
    band_features,
    band_multiply_and_pool,
    combined_block_forward,
    descriptor_block_forward,
    encode,
    parameter_count,
    permutation_block_forward,
)
from anyband.metrics import (
    ConfusionCounts,
    accumulate_confusion,
    compute_metrics,
)
from anyband.pretrain import (
    DecoderWeights,
    PretrainConfig,
    make_pretrain_batch,
    pretrain_loss,
    pretrain_run,
)
from anyband.stackfile import (
    MAGIC,
    StackParseError,
    read_stack_bytes,
    write_stack_bytes,
)
from anyband.supervised import (
    AugmentConfig,
    PixelHeadWeights,
    TrainingConfig,
    predict_mask,
    train_run,
)
from anyband.synth import synth_scene
from anyband.thermal import ThermalCalibration, normalize_bt, radiance_to_bt

from conftest import random_stack


# ---------------------------------------------------------------------------
# helpers


def _scenes(sensor, n, size, seed):
    spec = builtin_sensors()[sensor]
    rng = np.random.default_rng(seed)
    return [synth_scene(spec, rng, size=size) for _ in range(n)]


def _overall_accuracy(model, stacks, subset=None):
    counts = ConfusionCounts()
    for s in stacks:
        mask, _ = predict_mask(model, s, band_subset=subset)
        counts = accumulate_confusion(mask, s.mask, counts)
    return compute_metrics(counts)["OA"]


# ---------------------------------------------------------------------------
# 1. permutation invariance


def test_permutation_invariance_200_stacks():
    rng = np.random.default_rng(11)
    t0 = time.process_time()
    worst = 0.0
    for _ in range(200):
        w = EncoderWeights.create(rng)
        n = int(rng.integers(3, 15))
        stack = random_stack(rng, n, 16, 16)
        perm = rng.permutation(n)
        permuted = stack.subset(list(perm))
        a = encode(w, stack).data
        b = encode(w, permuted).data
        scale = max(float(np.abs(a).max()), 1e-12)
        worst = max(worst, float(np.abs(a - b).max()) / scale)
    elapsed = time.process_time() - t0
    assert worst < 1e-5, f"max relative deviation {worst}"
    assert elapsed < 10.0, f"took {elapsed:.1f}s CPU"


# ---------------------------------------------------------------------------
# 2. per-block equivariance, bit-identical


def test_row_swap_equivariance_bit_identical():
    rng = np.random.default_rng(22)
    w = EncoderWeights.create(rng)
    for _ in range(100):
        n = int(rng.integers(3, 15))
        i, j = rng.choice(n, size=2, replace=False)
        swap = list(range(n))
        swap[i], swap[j] = swap[j], swap[i]

        norm = normalize_descriptors(
            [sample_random_descriptor(rng) for _ in range(n)]
        )
        d_out = descriptor_block_forward(w, Tensor(norm)).data
        d_sw = descriptor_block_forward(w, Tensor(norm[swap])).data
        assert np.array_equal(d_out[swap], d_sw)

        p_out = permutation_block_forward(w, Tensor(d_out)).data
        p_sw = permutation_block_forward(w, Tensor(d_out[swap])).data
        assert np.array_equal(p_out[swap], p_sw)

        c_out = combined_block_forward(w, Tensor(p_out)).data
        c_sw = combined_block_forward(w, Tensor(p_out[swap])).data
        assert np.array_equal(c_out[swap], c_sw)


# ---------------------------------------------------------------------------
# 3. fixed output width


@pytest.mark.parametrize("n", [3, 5, 8, 13, 14])
def test_output_width_is_64(n):
    rng = np.random.default_rng(33 + n)
    w = EncoderWeights.create(rng)
    stack = random_stack(rng, n, 7, 9)
    out = encode(w, stack)
    assert out.shape == (7, 9, 64)


# ---------------------------------------------------------------------------
# 4. gradient correctness against f64 finite differences


def _fd_max_rel_error(loss_fn, params, rng, n_per_param=50, h=1e-6):
    """Max relative error of backprop gradients vs central differences."""
    loss = loss_fn()
    loss.backward()
    grads = [p.grad.copy() for p in params]
    for p in params:
        p.grad = None
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        n_coords = min(n_per_param, flat.size)
        for idx in rng.choice(flat.size, size=n_coords, replace=False):
            orig = flat[idx]
            step = h * max(1.0, abs(orig))
            flat[idx] = orig + step
            hi = float(loss_fn().item())
            flat[idx] = orig - step
            lo = float(loss_fn().item())
            flat[idx] = orig
            fd = (hi - lo) / (2 * step)
            an = float(g.reshape(-1)[idx])
            denom = max(abs(fd), abs(an), 1e-8)
            worst = max(worst, abs(fd - an) / denom)
    return worst


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(44)
    t0 = time.process_time()
    w = EncoderWeights.create(rng, dtype=np.float64)
    dw = DecoderWeights.create(rng, dtype=np.float64)
    batch = make_pretrain_batch(rng, 2, shared_n=True)

    def pretrain_total():
        _, _, total = pretrain_loss(batch, w, dw, dtype=np.float64)
        return total

    blocks = {
        "descriptor": w.descriptor_block.parameters(),
        "permutation": w.permutation_block.parameters(),
        "combined": w.combined_block.parameters(),
        "decoders": dw.parameters(),
    }
    for name, params in blocks.items():
        # one representative tensor per layer keeps this under the time cap
        chosen = params[:: max(1, len(params) // 4)]
        err = _fd_max_rel_error(pretrain_total, chosen, rng, n_per_param=15)
        assert err < 1e-4, f"pretrain loss, {name} block: rel err {err}"

    head = PixelHeadWeights.create(64, 32, rng, dtype=np.float64)
    stack = random_stack(rng, 4, 5, 5, with_mask=True)
    planes = stack.planes.astype(np.float64)
    target = stack.mask == 1
    valid = stack.mask != 255

    def supervised_loss():
        norm = Tensor(normalize_descriptors(stack.descriptors, dtype=np.float64))
        feats = band_features(w, norm)
        field = band_multiply_and_pool(feats, Tensor(planes))
        from anyband.supervised import head_logits

        return bce_with_logits(head_logits(head, field), target, valid)

    blocks = {
        "descriptor": w.descriptor_block.parameters(),
        "permutation": w.permutation_block.parameters(),
        "combined": w.combined_block.parameters(),
        "head": head.parameters(),
    }
    for name, params in blocks.items():
        chosen = params[:: max(1, len(params) // 4)]
        err = _fd_max_rel_error(supervised_loss, chosen, rng, n_per_param=15)
        assert err < 1e-4, f"supervised loss, {name} block: rel err {err}"

    elapsed = time.process_time() - t0
    assert elapsed < 60.0, f"took {elapsed:.1f}s CPU"


# ---------------------------------------------------------------------------
# 5. parameter budget


def test_parameter_counts_within_budget():
    w = EncoderWeights.create(np.random.default_rng(55))
    counts = parameter_count(w)
    targets = {
        "descriptor_block": 24_208,
        "permutation_block": 62_848,
        "combined_block": 123_488,
    }
    for name, target in targets.items():
        assert abs(counts[name] - target) <= 0.25 * target, (
            f"{name}: {counts[name]} vs target {target}"
        )
    assert counts["band_multiplication"] == 0
    assert abs(counts["total"] - 210_544) <= 0.20 * 210_544


# ---------------------------------------------------------------------------
# 6. pretraining outcome


@pytest.fixture(scope="module")
def pretrain_result():
    t0 = time.process_time()
    result = pretrain_run(PretrainConfig(steps=5000, batch_size=256, seed=0))
    return result, time.process_time() - t0


def test_pretraining_loss_halves(pretrain_result):
    result, _ = pretrain_result
    assert result.epoch_means[-1] < 0.5 * result.epoch_means[0], (
        f"epoch means {result.epoch_means[0]:.4f} -> {result.epoch_means[-1]:.4f}"
    )


def test_pretraining_holdout_quality(pretrain_result):
    result, _ = pretrain_result
    assert result.holdout_disc_accuracy > 0.80, (
        f"discriminator accuracy {result.holdout_disc_accuracy:.3f}"
    )
    assert result.holdout_est_mse < 0.02, (
        f"estimator MSE {result.holdout_est_mse:.4f}"
    )


def test_pretraining_runtime(pretrain_result):
    _, elapsed = pretrain_result
    assert elapsed < 15 * 60, f"took {elapsed / 60:.1f} min CPU"


# ---------------------------------------------------------------------------
# 7. sensor independence / 8. baseline parity


@pytest.fixture(scope="module")
def alpha_test_scenes():
    return _scenes("synth_alpha", 20, 64, seed=900)


@pytest.fixture(scope="module")
def subset_trained(alpha_test_scenes):
    t0 = time.process_time()
    train = _scenes("synth_alpha", 100, 64, seed=100)
    config = TrainingConfig(
        patch_size=48, crop_source=64, batch_size=8,
        learning_rate=1e-3, momentum=0.95,
        steps_per_epoch=600, max_epochs=6,
        band_mode="random-subset", seed=0,
        augment=AugmentConfig(crop=48),
    )
    encoder = EncoderWeights.create(np.random.default_rng(50))
    result = train_run(config, train, encoder_w=encoder)
    return result.model, t0


def test_sensor_independence(subset_trained, alpha_test_scenes):
    model, t0 = subset_trained
    oa_full = _overall_accuracy(model, alpha_test_scenes)
    assert oa_full >= 95.0, f"full-band OA {oa_full:.2f}"

    srng = np.random.default_rng(5)
    for _ in range(8):
        subset = sorted(int(i) for i in srng.choice(10, size=3, replace=False))
        oa = _overall_accuracy(model, alpha_test_scenes, subset)
        assert oa >= 90.0, f"subset {subset}: OA {oa:.2f}"

    beta = _scenes("synth_beta", 20, 64, seed=901)
    oa_beta = _overall_accuracy(model, beta)
    assert oa_beta >= 90.0, f"unseen-sensor OA {oa_beta:.2f}"

    elapsed = time.process_time() - t0
    assert elapsed < 30 * 60, f"took {elapsed / 60:.1f} min CPU"


def test_baseline_parity(alpha_test_scenes):
    train = _scenes("synth_alpha", 100, 64, seed=300)
    config = dict(
        patch_size=48, crop_source=64, batch_size=8,
        learning_rate=1e-3, momentum=0.95,
        steps_per_epoch=600, max_epochs=4,
        band_mode="fixed", seed=0,
        augment=AugmentConfig(crop=48),
    )
    raw = train_run(TrainingConfig(**config), train)
    encoder = EncoderWeights.create(np.random.default_rng(50))
    enc = train_run(TrainingConfig(**config), train, encoder_w=encoder)
    oa_raw = _overall_accuracy(raw.model, alpha_test_scenes)
    oa_enc = _overall_accuracy(enc.model, alpha_test_scenes)
    assert abs(oa_raw - oa_enc) < 2.0, (
        f"raw head OA {oa_raw:.2f} vs encoder OA {oa_enc:.2f}"
    )


# ---------------------------------------------------------------------------
# 9. metrics oracle


def test_metrics_against_rational_arithmetic():
    rng = np.random.default_rng(99)
    for _ in range(1000):
        tp, tn, fp, fn = (int(v) for v in rng.integers(0, 500, size=4))
        if tp + tn + fp + fn == 0:
            tp = 1
        got = compute_metrics(ConfusionCounts(tp, tn, fp, fn))

        total = Fraction(tp + tn + fp + fn)
        oa = 100 * Fraction(tp + tn) / total
        assert abs(float(oa) - got["OA"]) < 1e-9
        prec = 100 * Fraction(tp, tp + fp) if tp + fp else None
        rec = 100 * Fraction(tp, tp + fn) if tp + fn else None
        for want, have in ((prec, got["Precision"]), (rec, got["Recall"])):
            if want is None:
                assert have is None
            else:
                assert abs(float(want) - have) < 1e-9
        if prec is not None and rec is not None and prec + rec > 0:
            f1 = 2 * prec * rec / (prec + rec)
            assert abs(float(f1) - got["F1"]) < 1e-9
        tpr = Fraction(tp, tp + fn) if tp + fn else None
        tnr = Fraction(tn, tn + fp) if tn + fp else None
        if tpr is not None and tnr is not None:
            ba = 100 * (tpr + tnr) / 2
            assert abs(float(ba) - got["BA"]) < 1e-9


def test_metrics_streaming_equals_batch():
    rng = np.random.default_rng(98)
    truth = rng.integers(0, 2, size=(40, 40)).astype(np.uint8)
    pred = rng.integers(0, 2, size=(40, 40)).astype(np.uint8)
    whole = accumulate_confusion(pred, truth)
    streamed = ConfusionCounts()
    for row_p, row_t in zip(pred, truth):
        streamed = accumulate_confusion(row_p, row_t, streamed)
    assert whole == streamed


def test_metrics_symmetric_case():
    got = compute_metrics(ConfusionCounts(25, 25, 25, 25))
    for name in ("OA", "BA", "Precision", "Recall", "F1"):
        assert got[name] == pytest.approx(50.0, abs=1e-12)


# ---------------------------------------------------------------------------
# 10. preprocessing equations


def test_preprocessing_exact_values():
    assert normalize_wavelength(400.0) == 0.0
    assert normalize_wavelength(1300.0) == 1.0
    assert normalize_wavelength(10300.0) == 2.0
    cal = ThermalCalibration(k1=1.0, k2=1.0, bt_min=200.0, bt_95=300.0)
    assert radiance_to_bt(1.0, cal) == pytest.approx(1.0 / np.log(2.0), abs=1e-12)
    assert normalize_bt(200.0, cal) == 0.0
    assert normalize_bt(300.0, cal) == 1.0


# ---------------------------------------------------------------------------
# 11. stack file format


def test_stackfile_10000_round_trips():
    rng = np.random.default_rng(111)
    for _ in range(10_000):
        n = int(rng.integers(1, 6))
        h = int(rng.integers(1, 5))
        wd = int(rng.integers(1, 5))
        stack = random_stack(rng, n, h, wd, with_mask=bool(rng.integers(0, 2)))
        blob = write_stack_bytes(stack)
        back = read_stack_bytes(blob)
        assert back.planes.tobytes() == stack.planes.tobytes()
        assert [
            (d.lambda_min_nm, d.lambda_central_nm, d.lambda_max_nm)
            for d in back.descriptors
        ] == [
            (d.lambda_min_nm, d.lambda_central_nm, d.lambda_max_nm)
            for d in stack.descriptors
        ]
        if stack.mask is None:
            assert back.mask is None
        else:
            assert back.mask.tobytes() == stack.mask.tobytes()


def test_stackfile_rejects_corruption():
    rng = np.random.default_rng(112)
    blob = write_stack_bytes(random_stack(rng, 3, 4, 4, with_mask=True))

    with pytest.raises(StackParseError):
        read_stack_bytes(b"XXXX" + blob[4:])  # bad magic
    for cut in (0, 3, len(MAGIC), len(blob) // 2, len(blob) - 1):
        with pytest.raises(StackParseError):
            read_stack_bytes(blob[:cut])  # truncation
    header = struct.unpack("<HIII", blob[4:18])
    inflated = blob[:4] + struct.pack(
        "<HIII", header[0], 1_000_000, header[2], header[3]
    ) + blob[18:]
    with pytest.raises(StackParseError):
        read_stack_bytes(inflated)  # inflated n_bands


# ---------------------------------------------------------------------------
# 12. bench harness


def test_bench_report_shape_and_trend():
    from anyband.bench import bench, format_bench
    from anyband.supervised import MaskModel

    rng = np.random.default_rng(121)
    model = MaskModel(
        PixelHeadWeights.create(64, 32, rng), EncoderWeights.create(rng)
    )
    rows = bench(model, n_repeats=9, patch=64, band_counts=(3, 8, 13))
    assert len(rows) == 3
    times = [r.ms_per_megapixel for r in rows]
    assert times[0] < times[1] < times[2], f"not increasing: {times}"
    report = format_bench(rows)
    lines = report.strip().splitlines()
    assert lines[0].startswith("model,parameters,ms_per_megapixel")
    assert len(lines) == 4


# ---------------------------------------------------------------------------
# 13. pipeline determinism


def _run_pipeline(root):
    root.mkdir(exist_ok=True)
    data = root / "scenes"
    enc = root / "encoder.abck"
    model = root / "model.abck"
    mask = root / "mask.sbsf"
    report = root / "report.csv"
    assert cli_main([
        "synth", "--sensor", "synth_alpha", "--count", "3", "--size", "48",
        "--seed", "9", "--out", str(data),
    ]) == 0
    assert cli_main([
        "pretrain", "--steps", "8", "--batch", "8", "--seed", "1",
        "--out", str(enc),
    ]) == 0
    assert cli_main([
        "train", "--data", str(data), "--mode", "random-subset",
        "--encoder", str(enc), "--epochs", "1", "--steps-per-epoch", "5",
        "--batch", "2", "--patch", "32", "--seed", "3", "--out", str(model),
    ]) == 0
    scene = sorted(data.glob("*.sbsf"))[0]
    assert cli_main([
        "predict", "--model", str(model), "--input", str(scene),
        "--output", str(mask),
    ]) == 0
    assert cli_main([
        "eval", "--pred", str(mask), "--truth", str(scene),
        "--report", str(report),
    ]) == 0
    return {
        "encoder": enc.read_bytes(),
        "model": model.read_bytes(),
        "mask": mask.read_bytes(),
        "report": report.read_bytes(),
    }


def test_cli_pipeline_byte_identical(tmp_path):
    first = _run_pipeline(tmp_path / "a")
    second = _run_pipeline(tmp_path / "b")
    for name in first:
        assert first[name] == second[name], f"{name} differs between reruns"
