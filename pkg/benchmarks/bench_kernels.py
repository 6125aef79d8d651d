"""Compare the compiled and numpy kernel backends.

Usage: ``python benchmarks/bench_kernels.py [--instances N] [--repeat R]``
"""
import argparse
import timeit

import numpy as np

from landmark_cascade import kernels
from landmark_cascade.balance import uniform_plan
from landmark_cascade.cascade import TrainConfig, train_cascade
from landmark_cascade.dataset import SynthConfig, generate_synthetic
from landmark_cascade.features import sample_pool, similarity_for


def _workload(n, seed=0):
    rng = np.random.default_rng(seed)
    images = [rng.integers(0, 256, (128, 128)).astype(np.uint8) for _ in range(50)]
    bank = kernels.ImageBank(images)
    mean = np.array([[0.3, 0.4], [0.7, 0.4], [0.5, 0.6], [0.35, 0.8], [0.65, 0.8]])
    shapes = mean * 128 + rng.normal(size=(n, 5, 2)) * 4
    idx = rng.integers(0, 50, n)
    pools = {m: sample_pool(m, 5, 400, 400, rng) for m in ("tif", "offset")}
    feats = rng.integers(-255, 256, (n, 400)).astype(np.int16)
    res = rng.normal(size=(n, 10))
    return bank, idx, shapes, mean, pools, feats, res


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    backends = kernels.available_backends()
    bank, idx, shapes, mean, pools, feats, res = _workload(args.instances)
    slots, thr = np.array([3, 50, 120, 200, 399]), np.zeros(5, np.int64)
    bins = kernels.fern_bins(feats, slots, thr)
    jobs = {
        "indexed_diffs[tif]": lambda b: kernels.indexed_diffs(
            bank, idx, shapes, pools["tif"].anchor_arrays, pools["tif"].pairs, backend=b),
        "indexed_diffs[offset]": lambda b: kernels.indexed_diffs(
            bank, idx, shapes, pools["offset"].anchor_arrays, pools["offset"].pairs,
            sim=similarity_for(pools["offset"], mean, shapes), backend=b),
        "fern_bins": lambda b: kernels.fern_bins(feats, slots, thr, backend=b),
        "bin_sums": lambda b: kernels.bin_sums(bins, res, 32, backend=b),
    }
    print(f"{args.instances} instances, best of {args.repeat}")
    print(f"{'kernel':24s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name, job in jobs.items():
        outs = [job(b) for b in backends]
        assert all(_same(outs[0], o) for o in outs[1:]), f"{name}: backends disagree"
        times = [min(timeit.repeat(lambda: job(b), number=1, repeat=args.repeat)) for b in backends]
        speed = f"{times[0] / times[-1]:10.1f}x" if len(times) > 1 else ""
        print(f"{name:24s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times) + speed)

    train = generate_synthetic(SynthConfig(count=100, image_size=96, seed=1))
    cfg = TrainConfig(stages=3, ferns=30, seed=0)
    plan = uniform_plan(len(train), 20)
    times = []
    for b in backends:
        kernels.BACKEND = b
        times.append(min(timeit.repeat(lambda: train_cascade(train, plan, "tif", cfg),
                                       number=1, repeat=2)))
    speed = f"{times[0] / times[-1]:10.1f}x" if len(times) > 1 else ""
    print(f"{'train (100x20, 3x30)':24s}" + "".join(f"{t:11.2f}s" for t in times) + speed)


if __name__ == "__main__":
    main()
