import numpy as np
import pytest

from landmark_cascade import kernels
from landmark_cascade.balance import uniform_plan
from landmark_cascade.cascade import TrainConfig, save_model, train_cascade

needs_ext = pytest.mark.skipif("cython" not in kernels.available_backends(),
                               reason="compiled kernels not built")


def _random_inputs(rng, n=3000, m=64, offsets=True):
    images = [rng.integers(0, 256, (int(h), int(w))).astype(np.uint8)
              for h, w in rng.integers(5, 40, size=(4, 2))]
    bank = kernels.ImageBank(images)
    img_idx = rng.integers(0, 4, n)
    shapes = rng.uniform(-10, 50, size=(n, 5, 2))
    p = 30
    base = rng.integers(0, 5, p)
    j = rng.integers(0, 5, p)
    k = rng.integers(0, 5, p)
    alpha, beta = rng.uniform(-0.4, 1.4, size=(2, p))
    off = rng.normal(size=(p, 2)) * (0.2 if offsets else 0.0)
    pairs = np.stack([rng.permutation(p)[:2] for _ in range(m)])
    sim = rng.normal(size=(n, 2)) * 30 if offsets else None
    return bank, img_idx, shapes, (base, j, k, alpha, beta, off), pairs, sim


@needs_ext
@pytest.mark.parametrize("offsets", [False, True])
def test_indexed_diffs_backends_identical(offsets):
    args = _random_inputs(np.random.default_rng(5), offsets=offsets)
    a = kernels.indexed_diffs(*args[:5], sim=args[5], backend="python")
    b = kernels.indexed_diffs(*args[:5], sim=args[5], backend="cython")
    assert a.dtype == b.dtype == np.int16
    np.testing.assert_array_equal(a, b)


def test_indexed_diffs_thread_count_independent():
    args = _random_inputs(np.random.default_rng(6), n=5000)
    one = kernels.indexed_diffs(*args[:5], sim=args[5], threads=1)
    four = kernels.indexed_diffs(*args[:5], sim=args[5], threads=4)
    np.testing.assert_array_equal(one, four)


@needs_ext
def test_fern_bins_and_sums_backends_identical():
    rng = np.random.default_rng(8)
    feats = rng.integers(-255, 256, size=(4000, 50)).astype(np.int16)
    slots = rng.choice(50, 5, replace=False)
    thr = rng.integers(-100, 100, 5)
    b_py = kernels.fern_bins(feats, slots, thr, backend="python")
    b_cy = kernels.fern_bins(feats, slots, thr, backend="cython")
    np.testing.assert_array_equal(b_py, b_cy)
    res = rng.normal(size=(4000, 10))
    s_py, c_py = kernels.bin_sums(b_py, res, 32, backend="python")
    s_cy, c_cy = kernels.bin_sums(b_cy, res, 32, backend="cython")
    np.testing.assert_array_equal(c_py, c_cy)
    assert s_py.tobytes() == s_cy.tobytes()


def test_bin_sums_matches_loop_oracle():
    rng = np.random.default_rng(9)
    bins = rng.integers(0, 8, 200)
    res = rng.normal(size=(200, 4))
    sums, counts = kernels.bin_sums(bins, res, 8)
    for b in range(8):
        assert counts[b] == np.sum(bins == b)
        np.testing.assert_allclose(sums[b], res[bins == b].sum(axis=0), rtol=1e-12, atol=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.fern_bins(np.zeros((1, 1), np.int16), [0], [0], backend="fortran")


@needs_ext
def test_training_backends_produce_identical_models(small_train, monkeypatch):
    cfg = TrainConfig(stages=2, ferns=10, anchors=60, pair_count=60, seed=3)
    plan = uniform_plan(len(small_train), 3)
    blobs = {}
    for name in ("python", "cython"):
        monkeypatch.setattr(kernels, "BACKEND", name)
        blobs[name] = save_model(train_cascade(small_train, plan, "offset", cfg))
    assert blobs["python"] == blobs["cython"]
