import numpy as np
import pytest

from anyband.cli import main
from anyband.encoder import FEATURE_WIDTH, EncoderWeights
from anyband.stackfile import read_stack, write_stack
from anyband.supervised import MaskModel, PixelHeadWeights
from anyband.synth import synth_scene
from anyband.descriptors import builtin_sensors


def test_unknown_flag_exits_2(capsys):
    assert main(["synth", "--sensor", "synth_alpha", "--out", "x",
                 "--frobnicate"]) == 2


def test_missing_subcommand_exits_2():
    assert main([]) == 2


def test_synth_unknown_sensor_exits_2(tmp_path, capsys):
    rc = main(["synth", "--sensor", "nope", "--out", str(tmp_path)])
    assert rc == 2
    assert "available" in capsys.readouterr().err


def test_synth_writes_scene_files(tmp_path):
    rc = main(["synth", "--sensor", "synth_alpha", "--count", "2",
               "--size", "16", "--out", str(tmp_path / "scenes")])
    assert rc == 0
    files = sorted((tmp_path / "scenes").glob("*.sbsf"))
    assert len(files) == 2
    stack = read_stack(files[0])
    assert stack.extent == (16, 16)
    assert stack.mask is not None


def test_predict_two_bands_with_encoder_model_exits_2(tmp_path, rng):
    model = MaskModel(
        PixelHeadWeights.create(FEATURE_WIDTH, 8, rng),
        EncoderWeights.create(np.random.default_rng(0)),
    )
    ckpt = tmp_path / "m.abck"
    model.save(ckpt)
    scene = synth_scene(builtin_sensors()["synth_alpha"],
                        np.random.default_rng(1), size=16)
    inp = tmp_path / "scene.sbsf"
    write_stack(inp, scene)
    rc = main(["predict", "--model", str(ckpt), "--input", str(inp),
               "--bands", "1,2", "--output", str(tmp_path / "o.sbsf")])
    assert rc == 2


def test_predict_bad_bands_syntax_exits_2(tmp_path, rng):
    model = MaskModel(PixelHeadWeights.create(4, 8, rng), None)
    ckpt = tmp_path / "m.abck"
    model.save(ckpt)
    scene = synth_scene(builtin_sensors()["synth_beta"],
                        np.random.default_rng(1), size=16)
    inp = tmp_path / "scene.sbsf"
    write_stack(inp, scene)
    rc = main(["predict", "--model", str(ckpt), "--input", str(inp),
               "--bands", "a,b,c", "--output", str(tmp_path / "o.sbsf")])
    assert rc == 2


def test_missing_input_file_exits_1(tmp_path, rng):
    model = MaskModel(PixelHeadWeights.create(4, 8, rng), None)
    ckpt = tmp_path / "m.abck"
    model.save(ckpt)
    rc = main(["predict", "--model", str(ckpt),
               "--input", str(tmp_path / "absent.sbsf"),
               "--output", str(tmp_path / "o.sbsf")])
    assert rc == 1


def _pipeline(tmp_path, tag, capsys):
    """synth -> train (raw baseline) -> predict -> eval, tiny sizes."""
    scenes = tmp_path / f"scenes_{tag}"
    model = tmp_path / f"model_{tag}.abck"
    pred = tmp_path / f"pred_{tag}.sbsf"
    assert main(["synth", "--sensor", "synth_beta", "--count", "3",
                 "--size", "24", "--seed", "7", "--out", str(scenes)]) == 0
    assert main(["train", "--data", str(scenes), "--epochs", "1",
                 "--steps-per-epoch", "3", "--batch", "2", "--patch", "16",
                 "--seed", "7", "--out", str(model)]) == 0
    assert main(["predict", "--model", str(model),
                 "--input", str(scenes / "scene_0000.sbsf"),
                 "--output", str(pred)]) == 0
    capsys.readouterr()
    assert main(["eval", "--pred", str(pred),
                 "--truth", str(scenes / "scene_0000.sbsf")]) == 0
    out = capsys.readouterr().out
    return model.read_bytes(), pred.read_bytes(), out


def test_pipeline_smoke_prints_five_metrics(tmp_path, capsys):
    _, _, out = _pipeline(tmp_path, "a", capsys)
    for name in ("OA", "BA", "Precision", "Recall", "F1"):
        assert name in out
    assert "metric,tag,value" in out


def test_pipeline_rerun_is_byte_identical(tmp_path, capsys):
    a = _pipeline(tmp_path, "a", capsys)
    b = _pipeline(tmp_path, "b", capsys)
    assert a[0] == b[0]  # checkpoint bytes
    assert a[1] == b[1]  # mask/probability bytes
    assert a[2] == b[2]  # report text


def test_eval_requires_masks(tmp_path, rng):
    from conftest import random_stack
    s = random_stack(rng, 3, h=8, w=8, with_mask=False)
    p = tmp_path / "nomask.sbsf"
    write_stack(p, s)
    assert main(["eval", "--pred", str(p), "--truth", str(p)]) == 2
