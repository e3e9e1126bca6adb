"""Command-line surface: synth, pretrain, train, predict, eval, bench.

Exit codes: 0 success, 2 usage/configuration error, 1 runtime error.
All randomness is controlled by --seed; identical invocations produce
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import metrics as metrics_mod
from .bench import bench, format_bench
from .descriptors import builtin_sensors, load_registry
from .encoder import MIN_BANDS, SpectralStack
from .nn import ConfigurationError
from .pretrain import PretrainConfig, pretrain_run
from .stackfile import read_stack, write_stack
from .supervised import (
    AugmentConfig,
    MaskModel,
    TrainingConfig,
    load_encoder_checkpoint,
    predict_mask,
    save_encoder_checkpoint,
    train_run,
)
from .synth import synth_scene


class UsageError(ValueError):
    pass


def _cmd_synth(args):
    sensors = load_registry(args.registry) if args.registry else builtin_sensors()
    if args.sensor not in sensors:
        raise UsageError(
            f"unknown sensor {args.sensor!r}; available: {', '.join(sorted(sensors))}"
        )
    spec = sensors[args.sensor]
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for i in range(args.count):
        stack = synth_scene(spec, rng, size=args.size,
                            cloud_fraction=args.cloud_fraction)
        write_stack(os.path.join(args.out, f"scene_{i:04d}.sbsf"), stack)
    print(f"wrote {args.count} scenes to {args.out}")
    return 0


def _cmd_pretrain(args):
    config = PretrainConfig(steps=args.steps, batch_size=args.batch,
                            seed=args.seed, log_path=args.log)
    result = pretrain_run(config)
    save_encoder_checkpoint(args.out, result.encoder)
    last = result.history[-1]
    print(f"pretrained {args.steps} steps; final L_total={last[3]:.4f} "
          f"disc_acc={result.holdout_disc_accuracy:.3f} "
          f"est_mse={result.holdout_est_mse:.4f}")
    print(f"encoder checkpoint: {args.out}")
    return 0


def _load_dataset(path):
    files = sorted(
        f for f in os.listdir(path) if f.endswith(".sbsf")
    )
    if not files:
        raise UsageError(f"no .sbsf files in {path}")
    return [read_stack(os.path.join(path, f)) for f in files]


def _cmd_train(args):
    data = _load_dataset(args.data)
    extent = min(min(s.extent) for s in data)
    patch = min(args.patch, extent)
    config = TrainingConfig(
        patch_size=patch,
        crop_source=patch,
        batch_size=args.batch,
        steps_per_epoch=args.steps_per_epoch,
        max_epochs=args.epochs,
        band_mode=args.mode,
        seed=args.seed,
        augment=AugmentConfig(crop=patch),
    )
    encoder = load_encoder_checkpoint(args.encoder) if args.encoder else None
    if args.mode == "random-subset" and encoder is None:
        raise UsageError("random-subset mode requires --encoder")
    result = train_run(config, data, encoder)
    result.model.save(args.out)
    print(f"trained {args.epochs} epochs; final epoch loss "
          f"{result.epoch_losses[-1]:.4f}")
    print(f"model checkpoint: {args.out}")
    return 0


def _parse_bands(text, n_bands):
    if text == "all":
        return None
    try:
        idx = [int(p) for p in text.split(",")]
    except ValueError:
        raise UsageError(f"--bands must be 'all' or comma-separated ints, "
                         f"got {text!r}")
    return idx


def _cmd_predict(args):
    stack = read_stack(args.input)
    model = MaskModel.load(args.model)
    subset = _parse_bands(args.bands, stack.n_bands)
    if model.uses_encoder and subset is not None and len(subset) < MIN_BANDS:
        raise UsageError(
            f"encoder models need at least {MIN_BANDS} bands, got {len(subset)}"
        )
    mask, prob = predict_mask(model, stack, band_subset=subset)
    out = SpectralStack([stack.descriptors[0]], prob[None], mask)
    write_stack(args.output, out)
    print(f"predicted mask ({mask.mean() * 100:.1f}% cloud): {args.output}")
    return 0


def _cmd_eval(args):
    pred = read_stack(args.pred)
    truth = read_stack(args.truth)
    if pred.mask is None or truth.mask is None:
        raise UsageError("both --pred and --truth files must carry masks")
    counts = metrics_mod.accumulate_confusion(pred.mask, truth.mask)
    tags = []
    if args.tags:
        with open(args.tags, "r", encoding="utf-8") as f:
            tags = [ln.strip() for ln in f if ln.strip()
                    and not ln.startswith("#")]
    table = metrics_mod.tagged_aggregate([(tags, counts)])
    print(metrics_mod.format_summary(table["total"]))
    report = metrics_mod.format_report(table)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            f.write(report)
    else:
        sys.stdout.write(report)
    return 0


def _cmd_bench(args):
    model = MaskModel.load(args.model)
    rows = bench(model, n_repeats=args.repeats, patch=args.patch)
    sys.stdout.write(format_bench(rows))
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="anyband",
        description="Sensor-independent spectral encoding and cloud masking",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic labeled scenes")
    s.add_argument("--sensor", required=True)
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--cloud-fraction", type=float, default=0.4)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--registry", default=None)
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("pretrain", help="unsupervised encoder pretraining")
    s.add_argument("--steps", type=int, default=5000)
    s.add_argument("--batch", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--log", default=None)
    s.set_defaults(func=_cmd_pretrain)

    s = sub.add_parser("train", help="supervised cloud-mask training")
    s.add_argument("--data", required=True)
    s.add_argument("--mode", choices=["fixed", "random-subset"], default="fixed")
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--steps-per-epoch", type=int, default=1000)
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--patch", type=int, default=257)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--encoder", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("predict", help="predict a cloud mask for a stack file")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--bands", default="all")
    s.add_argument("--output", required=True)
    s.set_defaults(func=_cmd_predict)

    s = sub.add_parser("eval", help="score a predicted mask against truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--tags", default=None)
    s.add_argument("--report", default=None)
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("bench", help="timing report per band count")
    s.add_argument("--model", required=True)
    s.add_argument("--repeats", type=int, default=1600)
    s.add_argument("--patch", type=int, default=257)
    s.set_defaults(func=_cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
