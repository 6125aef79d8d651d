"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run just this module with ``pytest tests/test_acceptance.py -v`` (the lines
appear in the terminal summary) or directly with
``python tests/test_acceptance.py``.
"""
import os
import time

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from landmark_cascade.balance import nca_plan, uniform_plan
from landmark_cascade.cascade import (TrainConfig, batch_inits, inits_digest, load_model,
                                      predict_batch, predict_with_inits, save_model,
                                      train_cascade, train_fern)
from landmark_cascade.dataset import (SynthConfig, generate_synthetic, load_manifest,
                                      load_samples, parse_pts, serialize_pts, write_dataset)
from landmark_cascade.features import PairIndex, TifIndex, pair_point, sample_pool, tif_point
from landmark_cascade.headpose import (CameraIntrinsics, builtin_model, posit, project,
                                       rotation_from_euler)
from landmark_cascade.metrics import Normalizer, nme, slr
from landmark_cascade.pipeline import make_plan, parse_aug_spec

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script
    ACCEPTANCE_LINES = {}

IOD = Normalizer("interocular", 0, 1)
THREADS = max(1, min(4, os.cpu_count() or 1))


def record(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


def _test_nme(model, test, seed=7):
    pred = predict_batch(model, [s.image for s in test], [s.box for s in test], seed=seed,
                         threads=THREADS)
    return np.array([nme(p, s.truth, s.box, IOD) for p, s in zip(pred, test)])


def test_c01_tif_affine_equivariance():
    rng = np.random.default_rng(101)
    cases = []
    for _ in range(10_000):
        k = int(rng.integers(3, 9))
        i, j, kk = rng.choice(k, 3, replace=False)
        cases.append((rng.normal(size=(k, 2)) * 100, rng.normal(size=(2, 2)) * 2,
                      rng.normal(size=2) * 100,
                      TifIndex(int(i), int(j), int(kk), *rng.uniform(-0.4, 1.4, size=2))))
    t0 = time.perf_counter()
    worst = 0.0
    for s, a, b, idx in cases:
        got = tif_point(s @ a.T + b, idx)
        want = a @ tif_point(s, idx) + b
        worst = max(worst, float(np.max(np.abs(got - want))))
    elapsed = time.perf_counter() - t0
    record(1, "TIF affine equivariance", worst < 1e-9 and elapsed < 1.0,
           f"max deviation {worst:.2e} (< 1e-9), {elapsed:.2f} s (< 1 s)")


def test_c02_pair_restriction_vs_tif_coverage():
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(10_000):
        s = rng.normal(size=(5, 2)) * 50
        i, j = rng.choice(5, 2, replace=False)
        p = pair_point(s, PairIndex(int(i), int(j), rng.uniform()))
        d = s[j] - s[i]
        v = p - s[i]
        # distance from the line through the two anchors
        worst = max(worst, abs(d[0] * v[1] - d[1] * v[0]) / max(np.hypot(*d), 1e-300))
    shapes = 1000
    covered = 0
    for n in range(shapes):
        s = rng.normal(size=(5, 2)) * 50
        pool = sample_pool("tif", 5, 20, 5, np.random.default_rng([202, n]))
        pts = np.array([tif_point(s, a) for a in pool.anchors()])
        covered += ConvexHull(pts).volume > 1e-9 * np.ptp(s) ** 2
    frac = covered / shapes
    record(2, "pair collinearity / TIF area coverage", worst < 1e-9 and frac >= 0.99,
           f"max off-line distance {worst:.2e} (< 1e-9), TIF hull area > 0 on {frac:.1%} (>= 99%)")


def test_c03_fern_matches_bruteforce_bin_means():
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 21))
        depth = int(rng.integers(1, 5))
        m = int(rng.integers(depth, depth + 6))
        feats = rng.integers(-30, 31, size=(n, m))
        res = rng.normal(size=(n, int(rng.integers(1, 7))))
        fern = train_fern(feats, res, depth, 0.0, rng)
        groups: dict[int, list] = {}
        for row, r in zip(feats.tolist(), res):
            b = sum(1 << f for f, (slot, thr) in enumerate(zip(fern.slots, fern.thresholds))
                    if row[slot] >= thr)
            groups.setdefault(b, []).append(r)
        for b in range(2 ** depth):
            want = np.mean(groups[b], axis=0) if b in groups else np.zeros(res.shape[1])
            worst = max(worst, float(np.max(np.abs(fern.updates[b] - want))))
    record(3, "fern oracle equivalence", worst < 1e-9, f"max |update - bin mean| {worst:.2e} (< 1e-9)")


def test_c04_monotone_training():
    train = generate_synthetic(SynthConfig(count=150, image_size=96, seed=404, id_prefix="m"))
    cfg = TrainConfig(stages=6, ferns=40, anchors=200, pair_count=200, seed=4, threads=THREADS)
    runs = []
    for mode in ("tif", "pair", "offset"):
        for spec in ("uniform:20", "nca:11,40,20N"):
            plan, _ = make_plan(spec, train)
            # every fern is checked against the shrunk bin-mean identity inside
            # train_cascade, which raises on any violation
            model = train_cascade(train, plan, mode, cfg)
            nmes = [e.mean_nme for e in model.train_log]
            sses = [e.sse for e in model.train_log]
            runs.append(all(b <= a for a, b in zip(nmes, nmes[1:]))
                        and all(b <= a for a, b in zip(sses, sses[1:])))
    record(4, "monotone training", all(runs),
           f"{sum(runs)}/{len(runs)} runs with non-increasing stage NME and SSE")


def test_c05_nca_contracts():
    rng = np.random.default_rng(505)
    bad = []
    for t in range(1000):
        n = int(rng.integers(1, 80))
        pdf = rng.gamma(0.5, size=n) * 10 ** rng.uniform(-6, 3)
        lo = int(rng.integers(0, 30))
        hi = int(rng.integers(lo, 60))
        budget = int(rng.integers(n * lo, n * hi + 1))
        counts = np.array(nca_plan(pdf, budget, lo, hi).counts)
        ok = counts.sum() == budget and counts.min() >= lo and counts.max() <= hi
        order = np.lexsort((-np.arange(n), pdf))
        # sorted by density, any strictly denser sample must not get more
        for a in range(n - 1):
            if pdf[order[a + 1]] > pdf[order[a]]:
                ok &= counts[order[a + 1]] <= counts[order[:a + 1]].min()
        ok &= nca_plan(pdf * rng.uniform(0.01, 100), budget, lo, hi).counts == tuple(counts)
        if not ok:
            bad.append(t)
    n = 500
    kind, args = parse_aug_spec("nca:11,40,20N", n)
    canonical = nca_plan(rng.random(n), args[2], args[0], args[1])
    canonical_ok = (kind, args) == ("nca", (11, 40, 20 * n)) and sum(canonical.counts) == 20 * n \
        and min(canonical.counts) >= 11 and max(canonical.counts) <= 40
    record(5, "NCA plan contracts", not bad and canonical_ok,
           f"{1000 - len(bad)}/1000 instances satisfy budget, bounds, monotonicity and scale "
           f"invariance; (11, 40, 20N) accepted: {canonical_ok}")


def test_c06_posit_recovery():
    rng = np.random.default_rng(606)
    model = builtin_model("face68")
    cam = CameraIntrinsics.for_image(640, 480)
    cases = []
    for _ in range(100):
        truth = (rng.uniform(-45, 45), rng.uniform(-45, 45), rng.uniform(-180, 180))
        trans = (rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(6, 20))
        cases.append((truth, project(model, rotation_from_euler(*truth), trans, cam)))
    t0 = time.perf_counter()
    worst = 0.0
    for truth, pts in cases:
        est = posit(pts, model, cam)
        diff = (np.array(est.angles) - truth + 180) % 360 - 180
        worst = max(worst, float(np.max(np.abs(diff))))
    elapsed = time.perf_counter() - t0
    record(6, "POSIT recovery", worst < 2.0 and elapsed < 1.0,
           f"max angle error {worst:.2e} deg (< 2), {elapsed:.3f} s (< 1 s)")


@pytest.mark.slow
def test_c07_tif_beats_pair_on_sparse_landmarks():
    t0 = time.perf_counter()
    rows = []
    for seed in range(5):
        train = generate_synthetic(SynthConfig(count=500, k=5, pose_std=15, seed=100 + seed,
                                               id_prefix="tr"))
        test = generate_synthetic(SynthConfig(count=100, k=5, pose_std=15, seed=200 + seed,
                                              id_prefix="te"))
        plan = uniform_plan(len(train), 20)
        res, digests = {}, set()
        for mode in ("tif", "pair"):
            model = train_cascade(train, plan, mode, TrainConfig(seed=seed, threads=THREADS))
            digests.add(inits_digest(batch_inits(model, len(test), model.config.restarts, 7)))
            res[mode] = _test_nme(model, test).mean()
        assert len(digests) == 1, "modes must consume identical initialisations"
        rows.append((res["tif"], res["pair"]))
    elapsed = time.perf_counter() - t0
    tif, pair = np.array(rows).T
    wins = int(np.sum(tif <= pair))
    detail = ", ".join(f"s{s}: {a:.4f}/{b:.4f}" for s, (a, b) in enumerate(rows))
    record(7, "TIF vs pair direction (K=5)", wins >= 4 and tif.mean() < pair.mean() and elapsed < 600,
           f"TIF <= pair on {wins}/5 seeds, means {tif.mean():.4f} < {pair.mean():.4f}, "
           f"{elapsed:.0f} s (< 600 s) [tif/pair NME {detail}]")


@pytest.mark.slow
def test_c08_nca_improves_success_rate_under_pose_imbalance():
    # 80% of a centred Gaussian lies within +-1.2816 sigma
    std = 10.0 / 1.2815515655446004
    t0 = time.perf_counter()
    rows = []
    within = []
    for seed in range(5):
        train = generate_synthetic(SynthConfig(count=500, k=5, pose_std=std, out_of_plane=10,
                                               seed=300 + seed, id_prefix="tr"))
        test = generate_synthetic(SynthConfig(count=100, k=5, pose_law="uniform",
                                              pose_range=(-40, 40), out_of_plane=10,
                                              seed=400 + seed, id_prefix="te"))
        within.append(np.mean([max(abs(a) for a in s.pose) <= 10 for s in train]))
        rates = []
        for spec in ("uniform:20", "nca:11,40,20N"):
            plan, _ = make_plan(spec, train)
            model = train_cascade(train, plan, "tif", TrainConfig(seed=seed, threads=THREADS))
            rates.append(slr(_test_nme(model, test), 0.1))
        rows.append(tuple(rates))
    elapsed = time.perf_counter() - t0
    uni, nca = np.array(rows).T
    wins = int(np.sum(nca >= uni))
    detail = ", ".join(f"s{s}: {b:.2f}/{a:.2f}" for s, (a, b) in enumerate(rows))
    record(8, "NCA vs uniform direction", wins >= 4 and elapsed < 900,
           f"NCA SLR >= uniform on {wins}/5 seeds, {elapsed:.0f} s (< 900 s), "
           f"train poses within 10 deg {np.mean(within):.0%} [nca/uniform SLR {detail}]")


def test_c09_determinism_across_runs_and_threads():
    train = generate_synthetic(SynthConfig(count=150, image_size=80, seed=909, id_prefix="d"))
    test = generate_synthetic(SynthConfig(count=20, image_size=80, seed=910, id_prefix="q"))
    plan, _ = make_plan("nca:11,40,20N", train)  # 3000 instances spans several worker chunks
    blobs, preds = [], []
    for threads in (1, 1, 4):
        cfg = TrainConfig(stages=3, ferns=20, anchors=100, pair_count=100, seed=9, threads=threads)
        blob = save_model(train_cascade(train, plan, "offset", cfg))
        model = load_model(blob)
        blobs.append(blob)
        preds.append(predict_batch(model, [s.image for s in test], [s.box for s in test],
                                   seed=3, threads=threads).tobytes())
    ok = len(set(blobs)) == 1 and len(set(preds)) == 1
    record(9, "determinism & serialization", ok,
           f"{len(set(blobs))} distinct model files and {len(set(preds))} distinct prediction "
           f"sets over runs x threads {{1, 4}}")


def test_c10_format_fidelity(tmp_path):
    rng = np.random.default_rng(1010)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(1, 100))
        shape = rng.normal(size=(k, 2)) * 10 ** rng.uniform(-2, 4)
        worst = max(worst, float(np.max(np.abs(parse_pts(serialize_pts(shape)) - shape))))

    samples = generate_synthetic(SynthConfig(count=25, image_size=64, seed=1011, id_prefix="f"))
    back = load_samples(load_manifest(write_dataset(samples, tmp_path / "ds")))
    same_data = all(
        a.id == b.id and np.array_equal(a.image, b.image) and a.box == b.box and a.pose == b.pose
        and np.max(np.abs(a.truth - b.truth)) <= 1e-6 for a, b in zip(samples, back))

    cfg = TrainConfig(stages=2, ferns=10, anchors=60, pair_count=60, seed=10)
    model = train_cascade(back[:20], uniform_plan(20, 5), "tif", cfg)
    path = tmp_path / "m.cascade.json"
    path.write_bytes(save_model(model))
    reloaded = load_model(path.read_bytes())
    images = [s.image for s in back[20:]]
    boxes = [s.box for s in back[20:]]
    inits = batch_inits(model, len(images), 5, seed=2)
    same_model = (predict_with_inits(model, images, boxes, inits).tobytes()
                  == predict_with_inits(reloaded, images, boxes, inits).tobytes())
    ok = worst <= 1e-6 and same_data and same_model
    record(10, "format fidelity", ok,
           f".pts max round-trip error {worst:.1e} (<= 1e-6), manifest reload equal: {same_data}, "
           f"model reload predictions equal: {same_model}")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in sorted(globals().items()):
        if not name.startswith("test_c"):
            continue
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
