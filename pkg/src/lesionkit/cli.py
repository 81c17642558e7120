"""Command-line interface: ``lesionkit <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classification import CLASSES
from .data import (
    ManifestRecord,
    SyntheticConfig,
    load_bundle,
    load_checkpoint,
    load_image,
    load_manifest,
    load_mask,
    save_checkpoint,
    save_mask,
    split,
    synth_generate,
    write_manifest,
)
from .estimators import LesionClassifier, LesionSegmenter
from .exceptions import LesionKitError
from .gradsuite import STEP, TOLERANCE, run_suite
from .metrics import evaluate_cls, evaluate_seg, to_json
from .resnet import PRESETS, count_paths, preset

log = logging.getLogger("lesionkit")


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _size(text):
    parts = [int(v) for v in text.lower().replace("x", ",").split(",")]
    return (parts[0], parts[0]) if len(parts) == 1 else tuple(parts[:2])


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(path).write_text(text if text.endswith("\n") else text + "\n")


def _load_records(path, need_label=False, need_mask=False):
    records = load_manifest(path)
    for r in records:
        if need_label and r.label is None:
            raise LesionKitError(f"{path}: record {r.image_id!r} has no label")
        if need_mask and r.mask_path is None:
            raise LesionKitError(f"{path}: record {r.image_id!r} has no mask")
    if not records:
        raise LesionKitError(f"{path}: manifest has no records")
    return records


# ----------------------------------------------------------------- commands


def cmd_synth(args):
    cfg = SyntheticConfig(count=args.count, size=args.size, class_mix=args.mix, seed=args.seed,
                          hair=not args.no_hair, color_jitter=not args.no_jitter,
                          fuzzy_border=not args.no_fuzzy)
    out = Path(args.out)
    ds = synth_generate(cfg, out)
    msg = f"wrote {len(ds)} images to {out}"
    if args.val_fraction:
        train, val = split(ds.manifest, args.val_fraction, seed=args.seed, labels=ds.labels)
        write_manifest(out / "train.csv", train)
        write_manifest(out / "val.csv", val)
        msg += f" (train {len(train)}, validation {len(val)})"
    print(msg)


def cmd_train_seg(args):
    records = _load_records(args.manifest, need_mask=True)
    X = [load_image(r.image_path) for r in records]
    y = [load_mask(r.mask_path) for r in records]
    X2 = y2 = None
    if args.finetune_manifest:
        rec2 = _load_records(args.finetune_manifest, need_mask=True)
        X2 = [load_image(r.image_path) for r in rec2]
        y2 = [load_mask(r.mask_path) for r in rec2]
    est = LesionSegmenter(preset=args.preset, epochs_fixed=args.epochs1, lr_fixed=args.lr1,
                          epochs_linear=args.epochs2, lr_linear=args.lr2, batch_size=args.batch,
                          momentum=args.momentum, target_long_side=args.target_long_side,
                          scales=args.scales, threshold=args.threshold, seed=args.seed)
    hook = None
    if args.checkpoint:
        hook = lambda trainer: save_checkpoint(args.checkpoint, trainer.checkpoint())
    resume = load_checkpoint(args.resume) if args.resume else None
    est.fit(X, y, X2, y2, checkpoint=resume, on_epoch_end=hook)
    est.save(args.out)
    for phase, hist in enumerate(est.history_, start=1):
        if hist:
            print(f"phase {phase}: {len(hist)} epochs, final loss {hist[-1]:.5f}")
    print(f"saved {args.out}")


def cmd_train_cls(args):
    records = _load_records(args.manifest, need_label=True)
    X = [load_image(r.image_path) for r in records]
    y = [r.label for r in records]
    est = LesionClassifier(strategy=args.strategy, preset=args.preset, epochs=args.epochs,
                           lr=args.lr, batch_size=args.batch, momentum=args.momentum,
                           image_size=args.image_size, class_weights=args.class_weights,
                           seed=args.seed)
    est.fit(X, y)
    est.save(args.out)
    for key, hist in est.history_.items():
        if hist:
            print(f"{key}: {len(hist)} epochs, final loss {hist[-1]:.5f}")
    print(f"saved {args.out}")


def _segmenter(args):
    est = LesionSegmenter.load(args.model)
    if args.no_tta:
        est.scales = None
    elif args.scales is not None:
        est.scales = args.scales
    if args.threshold is not None:
        est.threshold = args.threshold
    return est


def cmd_predict_seg(args):
    est = _segmenter(args)
    records = _load_records(args.manifest)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r in records:
        mask = est.predict([load_image(r.image_path)])[0]
        save_mask(out / f"{r.image_id}.pgm", mask)
    print(f"wrote {len(records)} masks to {out}")


def cmd_eval_seg(args):
    records = _load_records(args.manifest, need_mask=True)
    truth = {r.image_id: load_mask(r.mask_path) for r in records}
    if args.predictions:
        pred_dir = Path(args.predictions)
        preds = {r.image_id: load_mask(pred_dir / f"{r.image_id}.pgm") for r in records}
    else:
        est = _segmenter(args)
        preds = {r.image_id: est.predict([load_image(r.image_path)])[0] for r in records}
    result = evaluate_seg(preds, truth)
    print(result.render(method=args.method))
    _write(args.out, to_json(result))


def _cls_scores(args, records):
    est = LesionClassifier.load(args.model)
    if args.strategy:
        est.strategy = args.strategy
    X = [load_image(r.image_path) for r in records]
    return est.predict_proba(X), est.strategy


def cmd_predict_cls(args):
    records = _load_records(args.manifest)
    scores, _ = _cls_scores(args, records)
    lines = ["image_id,p_melanoma,p_seborrheic_keratosis,p_nevus"]
    for r, s in zip(records, scores):
        lines.append(f"{r.image_id},{s[0]:.6f},{s[1]:.6f},{s[2]:.6f}")
    _write(args.out, "\n".join(lines))


def _read_predictions_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return {row["image_id"]: [float(row["p_melanoma"]), float(row["p_seborrheic_keratosis"]),
                                  float(row["p_nevus"])] for row in reader}


def cmd_eval_cls(args):
    records = _load_records(args.manifest, need_label=True)
    labels = [r.label for r in records]
    if args.predictions:
        table = _read_predictions_csv(args.predictions)
        missing = [r.image_id for r in records if r.image_id not in table]
        if missing:
            raise LesionKitError(f"predictions missing for {missing[:5]}")
        scores = np.array([table[r.image_id] for r in records])
        method = args.method
    else:
        scores, strategy = _cls_scores(args, records)
        method = args.method if args.method != "model" else f"ResNet ({strategy})"
    result = evaluate_cls(scores, labels)
    print(result.render(method=method))
    _write(args.out, to_json(result))


def cmd_gradcheck(args):
    results = run_suite(seed=args.seed, step=args.step)
    worst = 0.0
    for name, err in results.items():
        status = "ok" if err < args.tol else "FAIL"
        print(f"{name:<28} {err:.3e}  {status}")
        worst = max(worst, err)
    print(f"max relative error {worst:.3e} (tolerance {args.tol:g})")
    return 0 if worst < args.tol else 1


def cmd_info(args):
    print(f"lesionkit {__version__}")
    print(f"classes: {', '.join(CLASSES)}")
    for name in sorted(PRESETS):
        spec = preset(name)
        stages = ", ".join(f"{s.blocks}x{s.width}/s{s.stride}" for s in spec.stages)
        print(f"preset {name}: stem {spec.stem.channels}, stages [{stages}], "
              f"paths {count_paths(spec)}")
    if args.model:
        nets, meta = load_bundle(args.model)
        print(f"model {args.model}: {meta.get('estimator', meta.get('kind'))}")
        for key, net in nets.items():
            n_params = sum(p.data.size for p in net.parameters())
            print(f"  {key}: {net.spec.name}, head {net.spec.head.kind}/{net.spec.head.outputs}, "
                  f"{n_params} parameters, paths {count_paths(net.spec)}")


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lesionkit", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic lesion dataset")
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--size", type=_size, default=(64, 64), help="H or HxW")
    s.add_argument("--mix", type=_floats, default=(0.3, 0.3, 0.4),
                   help="melanoma,sk,nevus fractions")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--val-fraction", type=float, default=0.0,
                   help="also write stratified train.csv / val.csv")
    s.add_argument("--no-hair", action="store_true")
    s.add_argument("--no-jitter", action="store_true")
    s.add_argument("--no-fuzzy", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-seg", help="train the segmentation network (two phases)")
    s.add_argument("--manifest", required=True)
    s.add_argument("--finetune-manifest", help="second-phase data (default: --manifest)")
    s.add_argument("--preset", default="tiny-8", choices=sorted(PRESETS))
    s.add_argument("--epochs1", type=int, default=60)
    s.add_argument("--lr1", type=float, default=0.0016)
    s.add_argument("--epochs2", type=int, default=80)
    s.add_argument("--lr2", type=float, default=0.0008)
    s.add_argument("--batch", type=int, default=10)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--target-long-side", type=int, default=500)
    s.add_argument("--scales", type=_floats, default=(0.8, 1.0, 1.2))
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--checkpoint", help="write a resumable checkpoint after every epoch")
    s.add_argument("--resume", help="resume from a checkpoint file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_seg)

    s = sub.add_parser("train-cls", help="train classification network(s)")
    s.add_argument("--manifest", required=True)
    s.add_argument("--strategy", default="ensemble", choices=["multiclass", "binary", "ensemble"])
    s.add_argument("--preset", default="tiny-8", choices=sorted(PRESETS))
    s.add_argument("--epochs", type=int, default=150)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--batch", type=int, default=90)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--image-size", type=int, default=224, help="shorter-side target")
    s.add_argument("--class-weights", choices=["balanced"], default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_cls)

    for name, func, help_ in (("eval-seg", cmd_eval_seg, "Jaccard report for a segmenter"),
                              ("predict-seg", cmd_predict_seg, "write predicted 0/255 masks")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--manifest", required=True)
        s.add_argument("--model", required=(name == "predict-seg"))
        s.add_argument("--scales", type=_floats, default=None)
        s.add_argument("--no-tta", action="store_true")
        s.add_argument("--threshold", type=float, default=None)
        if name == "eval-seg":
            s.add_argument("--predictions", help="directory of <image_id>.pgm masks")
            s.add_argument("--method", default="model")
            s.add_argument("--out", default=None, help="JSON report path (default stdout)")
        else:
            s.add_argument("--out-dir", required=True)
        s.set_defaults(func=func)

    for name, func, help_ in (("eval-cls", cmd_eval_cls, "AUC report for a classifier"),
                              ("predict-cls", cmd_predict_cls, "write the prediction CSV")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--manifest", required=True)
        s.add_argument("--model", required=(name == "predict-cls"))
        s.add_argument("--strategy", choices=["multiclass", "binary", "ensemble"])
        if name == "eval-cls":
            s.add_argument("--predictions", help="prediction CSV instead of a model")
            s.add_argument("--method", default="model")
        s.add_argument("--out", default=None, help="output path (default stdout)")
        s.set_defaults(func=func)

    s = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--step", type=float, default=STEP)
    s.add_argument("--tol", type=float, default=TOLERANCE)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("info", help="show presets and optionally a model summary")
    s.add_argument("--model")
    s.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    if getattr(args, "command", None) in ("eval-seg", "eval-cls"):
        if not args.model and not args.predictions:
            parser.error(f"{args.command} needs --model or --predictions")
    try:
        code = args.func(args)
    except (LesionKitError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
