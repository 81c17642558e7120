"""End-to-end acceptance suite: one test per criterion, one PASS/FAIL line each.

Run alone with ``pytest tests/test_acceptance.py -v`` (about 6 minutes on one
CPU core); the status lines are written to the terminal even under capture.
"""
import contextlib
import math
import time

import numpy as np
import pytest

from lesionkit.autodiff import Variable, conv2d, transposed_conv2d
from lesionkit.data import SyntheticConfig, load_checkpoint, save_checkpoint, split, synth_generate
from lesionkit.estimators import LesionClassifier, LesionSegmenter
from lesionkit.gradsuite import TOLERANCE, run_suite
from lesionkit.imaging import flip_array, resize_image, resize_map
from lesionkit.metrics import audit_average, auc, average_auc, format_percent, jaccard
from lesionkit.resnet import (
    BasicBlock,
    HeadSpec,
    NetworkSpec,
    ResidualBlockSpec,
    StageSpec,
    StemSpec,
    build,
    count_paths,
    drop_block,
    preset,
)
from lesionkit.segmentation import FLIPS, TtaConfig, predict_mask, scaled_size, tta_fuse

from oracles import conv_oracle, transposed_oracle
from test_metrics import auc_brute, jaccard_brute

SEG_SEED, CLS_SEED = 1, 2
SEG_PARAMS = dict(preset="tiny-8", epochs_fixed=10, lr_fixed=0.0016, epochs_linear=10,
                  lr_linear=0.0008, batch_size=10, threshold=0.5, seed=SEG_SEED)
# shorter side 32 px keeps three networks x 30 epochs inside the CPU budget
CLS_PARAMS = dict(strategy="ensemble", preset="tiny-8", epochs=30, lr=0.01, batch_size=30,
                  image_size=32, seed=CLS_SEED)


@pytest.fixture
def criterion(request):
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    @contextlib.contextmanager
    def run(number, title):
        info = {}
        start = time.perf_counter()
        try:
            yield info
        except BaseException as exc:
            detail = info.get("detail") or f"{type(exc).__name__}: {exc}".splitlines()[0]
            _emit(reporter, f"criterion {number} ({title}): FAIL - {detail}")
            raise
        # training criteria time their shared fixture and report it in the detail
        timing = "" if info.get("timed") else f" [{time.perf_counter() - start:.1f} s]"
        _emit(reporter, f"criterion {number} ({title}): PASS - {info.get('detail', '')}{timing}")

    return run


def _emit(reporter, line):
    if reporter is not None:
        reporter.ensure_newline()
        reporter.write_line(line)
    else:
        print(line)


# ---------------------------------------------------------------- shared runs


def seg_data():
    ds = synth_generate(SyntheticConfig(count=240, size=(64, 64), seed=SEG_SEED))
    items = list(zip(ds.images, ds.masks))
    train, val = split(items, 40 / 240, seed=SEG_SEED, labels=ds.labels)
    return train, val


def cls_data():
    ds = synth_generate(SyntheticConfig(count=300, size=(64, 64), seed=CLS_SEED))
    items = list(zip(ds.images, ds.labels))
    return split(items, 0.2, seed=CLS_SEED, labels=ds.labels)


def train_segmenter(train, on_epoch_end=None, checkpoint=None):
    X, y = [im for im, _ in train], [m for _, m in train]
    return LesionSegmenter(**SEG_PARAMS).fit(X, y, checkpoint=checkpoint, on_epoch_end=on_epoch_end)


@pytest.fixture(scope="module")
def seg_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("seg")
    train, val = seg_data()
    start = time.perf_counter()
    ckpt_path = out / "mid.lsnw"

    def hook(trainer):
        if trainer.phase == 0 and trainer.epoch == 5:
            save_checkpoint(ckpt_path, trainer.checkpoint())

    est = train_segmenter(train, hook)
    X_val, y_val = [im for im, _ in val], [m for _, m in val]
    score = est.score(X_val, y_val)
    elapsed = time.perf_counter() - start
    est.save(out / "run1.lsnw")
    return dict(est=est, train=train, val=val, score=score, seconds=elapsed,
                weights=out / "run1.lsnw", checkpoint=ckpt_path, dir=out)


@pytest.fixture(scope="module")
def cls_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("cls")
    train, val = cls_data()
    start = time.perf_counter()
    est = LesionClassifier(**CLS_PARAMS).fit([im for im, _ in train], [l for _, l in train])
    X_val = [im for im, _ in val]
    result = est.evaluate(X_val, [l for _, l in val])
    scores = est.strategy_scores(X_val)
    elapsed = time.perf_counter() - start
    est.save(out / "run1.lsnw")
    return dict(est=est, val=val, result=result, scores=scores, seconds=elapsed,
                weights=out / "run1.lsnw", dir=out)


# ----------------------------------------------------------------- criteria


def test_criterion_1_gradient_suite(criterion):
    with criterion(1, "gradient suite") as info:
        start = time.perf_counter()
        results = run_suite(seed=0, step=1e-5)
        elapsed = time.perf_counter() - start
        worst = max(results, key=results.get)
        info["detail"] = (f"{len(results)} ops, max rel. error {results[worst]:.2e} ({worst}) "
                          f"< {TOLERANCE:g}, {elapsed:.1f} s")
        required = {"conv2d", "transposed_conv2d", "batch_norm_train", "batch_norm_inference",
                    "relu", "linear", "softmax_cross_entropy", "bilinear_resize_up",
                    "residual_block_identity", "residual_block_projection"}
        assert required <= set(results)
        assert all(v < TOLERANCE for v in results.values()), results
        assert elapsed < 60


def test_criterion_2_oracle_equivalence(criterion):
    with criterion(2, "oracle equivalence") as info:
        start = time.perf_counter()
        r = np.random.default_rng(2024)
        conv_err = tconv_err = adj_err = 0.0
        n_conv = n_tconv = 0
        while n_conv < 100 or n_tconv < 100:
            k = int(r.integers(1, 4))
            stride, pad = int(r.integers(1, 3)), int(r.integers(0, k))
            h, w = int(r.integers(k, 7)), int(r.integers(k, 7))
            cin, cout = int(r.integers(1, 4)), int(r.integers(1, 4))
            x = r.standard_normal((2, cin, h, w))
            wt = r.standard_normal((cout, cin, k, k))
            b = r.standard_normal(cout)
            if (h + 2 * pad - k) >= 0 and (w + 2 * pad - k) >= 0:
                y = conv2d(x, wt, b, stride, pad).data
                conv_err = max(conv_err, np.abs(y - conv_oracle(x, wt, b, stride, pad)).max())
                n_conv += 1
                # adjointness: <conv(x), z> = <x, conv^T(z)> when sizes map back exactly
                if (h + 2 * pad - k) % stride == 0 and (w + 2 * pad - k) % stride == 0:
                    y0 = conv2d(x, wt, None, stride, pad).data
                    z = r.standard_normal(y0.shape)
                    back = transposed_conv2d(z, wt, None, stride, pad).data
                    lhs, rhs = float(np.sum(y0 * z)), float(np.sum(x * back))
                    adj_err = max(adj_err, abs(lhs - rhs) / max(1.0, abs(lhs)))
            xt = r.standard_normal((2, cout, int(r.integers(1, 5)), int(r.integers(1, 5))))
            if min((xt.shape[2] - 1) * stride + k, (xt.shape[3] - 1) * stride + k) - 2 * pad >= 1:
                bt = r.standard_normal(cin)
                yt = transposed_conv2d(xt, wt, bt, stride, pad).data
                ref = transposed_oracle(xt, wt, bt, stride, pad)
                tconv_err = max(tconv_err, np.abs(yt - ref).max())
                n_tconv += 1
        j_mismatch = a_mismatch = 0
        n_metric = 0
        while n_metric < 1000:
            n = int(r.integers(2, 201))
            a, bm = r.random(n) < r.random(), r.random(n) < r.random()
            j_mismatch += jaccard(a, bm) != jaccard_brute(a, bm)
            scores = r.integers(0, int(r.integers(2, 30)), n) / 8
            if a.any() and not a.all():
                a_mismatch += auc(scores, a) != float(auc_brute(scores.tolist(), a.tolist()))
                n_metric += 1
        elapsed = time.perf_counter() - start
        info["detail"] = (f"conv {n_conv} shapes err {conv_err:.1e}, transposed {n_tconv} shapes "
                          f"err {tconv_err:.1e}, adjoint err {adj_err:.1e}, "
                          f"{n_metric} jaccard/auc instances, {j_mismatch + a_mismatch} mismatches, "
                          f"{elapsed:.1f} s")
        assert conv_err < 1e-6 and tconv_err < 1e-6
        assert adj_err < 1e-5
        assert j_mismatch == 0 and a_mismatch == 0
        assert elapsed < 60


def test_criterion_3_reported_averages(criterion):
    with criterion(3, "reported averages") as info:
        rows = {"multi-class": (84.30, 96.90, "90.60"), "ensembled": (85.40, 97.60, "91.50")}
        for mel, sk, expected in rows.values():
            assert format_percent(average_auc(mel, sk), True) == expected
            assert audit_average(mel, sk, float(expected)).consistent
        audit = audit_average(85.50, 97.00, 91.30)
        assert format_percent(audit.computed, True) == "91.25"
        assert not audit.consistent and audit.note().startswith("DISCREPANCY")
        info["detail"] = f"90.60 and 91.50 reproduced; binary row: {audit.note()}"


def test_criterion_4_tta_invariants(criterion, seg_net):
    with criterion(4, "test-time augmentation invariants") as info:
        start = time.perf_counter()
        r = np.random.default_rng(4)
        cfg = TtaConfig()
        mean_err = equi_err = 0.0
        for _ in range(10):
            img = r.random((48, 48, 3)).astype(np.float32)
            fused = tta_fuse(seg_net, img, cfg)
            preds = []
            for s in cfg.scales:
                scaled = resize_image(img, *scaled_size(48, 48, s))
                for f in FLIPS:
                    p = predict_mask(seg_net, np.ascontiguousarray(flip_array(scaled, f)))
                    preds.append(resize_map(np.ascontiguousarray(flip_array(p, f)), 48, 48))
            mean_err = max(mean_err, np.abs(fused - np.mean(preds, axis=0)).max())
            for f in FLIPS:
                a = tta_fuse(seg_net, np.ascontiguousarray(flip_array(img, f)), cfg)
                equi_err = max(equi_err, np.abs(a - flip_array(fused, f)).max())
        elapsed = time.perf_counter() - start
        info["detail"] = (f"mean-of-{len(preds)} error {mean_err:.1e}, flip equivariance error "
                          f"{equi_err:.1e}, {elapsed:.1f} s")
        assert mean_err < 1e-6 and equi_err < 1e-6
        assert elapsed < 60


def test_criterion_5_residual_identities(criterion):
    with criterion(5, "residual identities") as info:
        r = np.random.default_rng(5)
        trunk = [BasicBlock(ResidualBlockSpec(6, 6, 1), r) for _ in range(4)]
        for block in trunk:
            block.bn2.state.scale.data[...] = 0
        x = np.abs(r.standard_normal((3, 6, 9, 9))).astype(np.float32)
        h = Variable(x)
        for block in trunk:
            h = block(h)
        assert np.array_equal(h.data, x)
        net = build(preset("small-18"), seed=5, zero_init_residual=True).eval()
        xin = r.standard_normal((2, 3, 16, 16)).astype(np.float32)
        base = net.forward(xin).data
        dropped = 0
        for si, stage in enumerate(net.stages):
            for bi, block in enumerate(stage):
                if block.spec.shortcut == "identity":
                    assert np.array_equal(drop_block(net, si, bi).eval().forward(xin).data, base)
                    dropped += 1
        for b in range(11):
            spec = (NetworkSpec("t", StemSpec(8), (StageSpec(b, 8, 1),), HeadSpec()) if b else
                    NetworkSpec("t", StemSpec(8), (StageSpec(1, 16, 2),), HeadSpec()))
            assert count_paths(spec) == 2 ** b
        info["detail"] = (f"4-block zero trunk exact, {dropped} droppable blocks bit-identical, "
                          "count_paths(B) = 2^B for B = 0..10")


def test_criterion_6_segmentation_run(criterion, seg_run):
    with criterion(6, "desk-scale segmentation") as info:
        n_train, n_val = len(seg_run["train"]), len(seg_run["val"])
        info["timed"] = True
        info["detail"] = (f"{n_train}/{n_val} split, mean validation Jaccard "
                          f"{seg_run['score']:.4f} (need >= 0.80), {seg_run['seconds']:.0f} s")
        assert (n_train, n_val) == (200, 40)
        assert seg_run["score"] >= 0.80
        assert seg_run["seconds"] < 600


def test_criterion_7_classification_run(criterion, cls_run):
    with criterion(7, "desk-scale classification") as info:
        res, s = cls_run["result"], cls_run["scores"]
        lo = np.minimum(s["multiclass"], s["binary"])
        hi = np.maximum(s["multiclass"], s["binary"])
        between = bool(np.all((s["ensemble"] >= lo) & (s["ensemble"] <= hi)))
        exact_mean = bool(np.array_equal(s["ensemble"], (s["multiclass"] + s["binary"]) / 2))
        info["timed"] = True
        info["detail"] = (f"melanoma AUC {res.melanoma_auc:.4f}, SK AUC {res.sk_auc:.4f} "
                          f"(need >= 0.95), ensemble between strategies: {between}, "
                          f"{cls_run['seconds']:.0f} s")
        assert res.melanoma_auc >= 0.95 and res.sk_auc >= 0.95
        assert between and exact_mean
        assert cls_run["seconds"] < 900


def test_criterion_8_determinism_and_resume(criterion, seg_run, cls_run):
    with criterion(8, "determinism and persistence") as info:
        seg2 = train_segmenter(seg_run["train"])
        seg2.save(seg_run["dir"] / "run2.lsnw")
        seg_same = seg_run["weights"].read_bytes() == (seg_run["dir"] / "run2.lsnw").read_bytes()

        train, _ = cls_data()
        cls2 = LesionClassifier(**CLS_PARAMS).fit([im for im, _ in train], [l for _, l in train])
        cls2.save(cls_run["dir"] / "run2.lsnw")
        cls_same = cls_run["weights"].read_bytes() == (cls_run["dir"] / "run2.lsnw").read_bytes()

        ckpt = load_checkpoint(seg_run["checkpoint"])
        resumed = train_segmenter(seg_run["train"], checkpoint=ckpt)
        resumed.save(seg_run["dir"] / "resumed.lsnw")
        resume_same = (seg_run["weights"].read_bytes()
                       == (seg_run["dir"] / "resumed.lsnw").read_bytes())
        info["detail"] = (f"segmentation weights identical: {seg_same}, classification weights "
                          f"identical: {cls_same}, resume from epoch {ckpt.epoch} of phase {ckpt.phase + 1} "
                          f"identical: {resume_same}")
        assert seg_same and cls_same and resume_same
        assert math.isfinite(seg_run["score"])


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
