#!/usr/bin/env python3
"""Compare the numba and numpy kernel backends.

Times the three hot kernels (connected-component labeling, bilinear
resizing, pairwise mask costs) on growing inputs plus one full
training step, and prints the speedup of the jitted path.

Usage: python benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from promptseg import backends
from promptseg.fixtures import SynthSpec, make_reference_fixture
from promptseg.train import TrainConfig, pretrain


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_label(rng, side, repeats):
    fg = rng.random((side, side)) < 0.55  # percolating blobs
    return {name: _time(lambda m=backends._IMPLS[name]: m.label_components(fg),
                        repeats)
            for name in backends.available_backends()}


def bench_resize(rng, side, repeats):
    src = rng.random((side, side))
    return {name: _time(lambda m=backends._IMPLS[name]:
                        m.resize_bilinear(src, 200, 200), repeats)
            for name in backends.available_backends()}


def bench_pair_costs(rng, n, targets, pixels, repeats):
    logits = rng.normal(size=(n, pixels))
    gt = (rng.random((targets, pixels)) > 0.5).astype(float)
    return {name: _time(lambda m=backends._IMPLS[name]:
                        m.mask_pair_costs(logits, gt, 1e-3), repeats)
            for name in backends.available_backends()}


def bench_train_step(repeats):
    bank, scenes = make_reference_fixture(SynthSpec(seed=0))
    cfg = TrainConfig(steps=10, seed=0)
    out = {}
    for name in backends.available_backends():
        backends.set_backend(name)
        pretrain(scenes, bank, cfg)  # warm caches
        start = time.perf_counter()
        pretrain(scenes, bank, cfg)
        out[name] = (time.perf_counter() - start) / cfg.steps
    return out


def _row(label, timings):
    cols = [f"{label:<34}"]
    for name in sorted(timings):
        cols.append(f"{name}={timings[name] * 1e3:9.3f} ms")
    if "numpy" in timings and "numba" in timings and timings["numba"] > 0:
        cols.append(f"speedup={timings['numpy'] / timings['numba']:6.2f}x")
    print("  ".join(cols))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    names = backends.available_backends()
    print(f"available backends: {', '.join(names)}")
    if "numba" not in names:
        print("numba is not importable; only the numpy path will be timed")
    backends.warmup()
    rng = np.random.default_rng(0)

    print("\nconnected-component labeling (4-conn, ~55% foreground)")
    for side in (32, 128, 512, 1024):
        _row(f"  {side}x{side}", bench_label(rng, side, args.repeats))

    print("\nbilinear resize to 200x200 (corner-aligned)")
    for side in (32, 128, 512):
        _row(f"  from {side}x{side}", bench_resize(rng, side, args.repeats))

    print("\npairwise mask costs (dice + cross entropy)")
    for n, targets, pixels in ((8, 4, 1024), (100, 16, 4096), (100, 32, 16384)):
        _row(f"  N={n} L={targets} px={pixels}",
             bench_pair_costs(rng, n, targets, pixels, args.repeats))

    print("\nfull training step on the reference fixture (amortized)")
    _row("  8 kernels, 32x32, 3 stages", bench_train_step(max(1, args.repeats // 5)))


if __name__ == "__main__":
    main()
