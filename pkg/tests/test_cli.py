import csv
import json
import subprocess
import sys

import pytest

from lesionkit.cli import build_parser, main
from lesionkit.data import load_checkpoint, load_manifest, load_mask


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "d"
    assert main(["synth", "--count", "20", "--size", "24", "--seed", "3",
                 "--val-fraction", "0.25", "--out", str(out)]) == 0
    return out


def run(*args):
    return main([str(a) for a in args])


def test_synth_writes_dataset(data_dir):
    assert len(load_manifest(data_dir / "manifest.csv")) == 20
    # 6/6/8 per class at 0.25 rounds half-up to 2 + 2 + 2 validation images
    assert len(load_manifest(data_dir / "train.csv")) == 14
    assert len(load_manifest(data_dir / "val.csv")) == 6


def test_full_recipe_flags_parse():
    args = build_parser().parse_args(
        "train-seg --manifest m.csv --preset tiny-8 --epochs1 60 --lr1 0.0016 --epochs2 80 "
        "--lr2 0.0008 --batch 10 --seed 1 --out model.lsnw".split())
    assert (args.epochs1, args.lr1, args.epochs2, args.lr2, args.batch, args.seed) == \
        (60, 0.0016, 80, 0.0008, 10, 1)
    for strategy in ("multiclass", "binary", "ensemble"):
        args = build_parser().parse_args(
            f"train-cls --manifest m.csv --epochs 150 --lr 0.01 --batch 90 --strategy {strategy} "
            "--out c.lsnw".split())
        assert (args.epochs, args.lr, args.batch, args.strategy) == (150, 0.01, 90, strategy)


def test_train_seg_deterministic_and_resumable(data_dir, tmp_path):
    common = ["train-seg", "--manifest", data_dir / "train.csv", "--epochs1", 1, "--epochs2", 2,
              "--batch", 5, "--seed", 2, "--target-long-side", 24]
    assert run(*common, "--out", tmp_path / "a.lsnw") == 0
    assert run(*common, "--out", tmp_path / "b.lsnw", "--checkpoint", tmp_path / "ck.lsnw") == 0
    assert (tmp_path / "a.lsnw").read_bytes() == (tmp_path / "b.lsnw").read_bytes()
    # the file holds the final epoch of the second phase; resuming from it must
    # restore that exact state (mid-run resume is covered by the trainer tests)
    assert load_checkpoint(tmp_path / "ck.lsnw").phase == 1
    assert run(*common, "--out", tmp_path / "c.lsnw", "--resume", tmp_path / "ck.lsnw") == 0
    assert (tmp_path / "a.lsnw").read_bytes() == (tmp_path / "c.lsnw").read_bytes()


def test_seg_eval_and_predict(data_dir, tmp_path, capsys):
    model = tmp_path / "m.lsnw"
    assert run("train-seg", "--manifest", data_dir / "train.csv", "--epochs1", 1, "--epochs2", 0,
               "--batch", 5, "--target-long-side", 24, "--out", model) == 0
    assert run("eval-seg", "--manifest", data_dir / "val.csv", "--model", model,
               "--scales", "1.0", "--out", tmp_path / "r.json") == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["n_images"] == 6 and 0 <= report["mean_jaccard"] <= 1
    assert "Jaccard" in capsys.readouterr().out
    assert run("predict-seg", "--manifest", data_dir / "val.csv", "--model", model,
               "--scales", "1.0", "--out-dir", tmp_path / "pred") == 0
    rec = load_manifest(data_dir / "val.csv")[0]
    mask = load_mask(tmp_path / "pred" / f"{rec.image_id}.pgm")
    assert mask.shape == (24, 24)
    assert run("eval-seg", "--manifest", data_dir / "val.csv", "--predictions", tmp_path / "pred",
               "--out", tmp_path / "r2.json") == 0
    assert json.loads((tmp_path / "r2.json").read_text()) == report


def test_cls_train_predict_eval(data_dir, tmp_path, capsys):
    model = tmp_path / "c.lsnw"
    assert run("train-cls", "--manifest", data_dir / "train.csv", "--epochs", 1, "--batch", 8,
               "--image-size", 16, "--strategy", "ensemble", "--out", model) == 0
    assert run("predict-cls", "--manifest", data_dir / "val.csv", "--model", model,
               "--out", tmp_path / "p.csv") == 0
    with open(tmp_path / "p.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["image_id", "p_melanoma", "p_seborrheic_keratosis", "p_nevus"]
    assert len(rows) == 7 and all(len(r[1].split(".")[1]) == 6 for r in rows[1:])
    capsys.readouterr()
    assert run("eval-cls", "--manifest", data_dir / "val.csv", "--predictions", tmp_path / "p.csv",
               "--out", tmp_path / "r.json") == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert set(report) == {"melanoma_auc", "sk_auc", "average_auc"}
    assert "Average AUC" in capsys.readouterr().out
    assert run("info", "--model", model) == 0
    assert "multiclass" in capsys.readouterr().out


def test_gradcheck_command(capsys):
    assert run("gradcheck") == 0
    out = capsys.readouterr().out
    assert "conv2d" in out and "residual_block_projection" in out and "max relative error" in out
    # an impossible tolerance must fail the harness
    assert run("gradcheck", "--tol", "1e-30") == 1


def test_usage_errors(capsys):
    for argv in (["bogus"], ["synth"], ["train-seg", "--manifest", "x", "--out", "y", "--nope"], []):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_runtime_error_exit_code(tmp_path, capsys):
    assert run("eval-seg", "--manifest", tmp_path / "missing.csv", "--model", "x") == 1
    assert "error" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lesionkit", "info"], capture_output=True, text=True)
    assert proc.returncode == 0 and "tiny-8" in proc.stdout
