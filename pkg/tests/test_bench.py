import numpy as np

from anyband.bench import BenchRow, bench, format_bench
from anyband.encoder import FEATURE_WIDTH, EncoderWeights
from anyband.supervised import MaskModel, PixelHeadWeights


def encoder_model(seed=0):
    rng = np.random.default_rng(seed)
    return MaskModel(PixelHeadWeights.create(FEATURE_WIDTH, 32, rng),
                     EncoderWeights.create(rng))


def test_bench_row_per_band_count():
    rows = bench(encoder_model(), n_repeats=3, patch=32, warmup=1)
    assert [r.label for r in rows] == [
        "encoder+head (3 bands)", "encoder+head (8 bands)",
        "encoder+head (13 bands)",
    ]
    assert all(r.ms_per_megapixel > 0 for r in rows)
    assert all(r.ms_spread >= 0 for r in rows)
    assert len({r.parameters for r in rows}) == 1


def test_bench_raw_model_single_row():
    rng = np.random.default_rng(1)
    model = MaskModel(PixelHeadWeights.create(13, 77, rng), None)
    rows = bench(model, n_repeats=3, patch=32, warmup=1)
    assert len(rows) == 1
    assert "13 bands" in rows[0].label


def test_format_bench_is_csv():
    rows = [BenchRow("m (3 bands)", 100, 1.25, 0.1)]
    text = format_bench(rows)
    lines = text.strip().split("\n")
    assert lines[0].startswith("model,parameters,")
    assert lines[1] == "m (3 bands),100,1.25,0.10"
