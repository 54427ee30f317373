"""Time the compiled and numpy kernel backends on pipeline-sized inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per (kernel, backend) with the best wall time over
``repeat`` runs and the speed-up of the compiled backend.
"""

import argparse
import timeit

import numpy as np

from tanmil import _kernels


def cases(rng):
    frames = rng.integers(0, 256, size=(2, 64, 64), dtype=np.uint8)
    shifted = np.roll(frames[0], (1, 2), axis=(0, 1))
    x = rng.standard_normal((8, 30, 64, 64)).astype(np.float32)
    cols = _kernels._pure.im2col(x, 3, 2, 1)
    return {
        "block_match 64x64 b8 r4": lambda mod: mod.block_match(frames[0], shifted, 8, 4),
        "im2col 8x30x64x64 k3 s2": lambda mod: mod.im2col(x, 3, 2, 1),
        "col2im 8x30x64x64 k3 s2": lambda mod: mod.col2im(cols, x.shape, 3, 2, 1),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = _kernels.backends()
    if "native" not in backends:
        print("compiled backend not built; timing numpy only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'backend':8s} {'best ms':>9s} {'speed-up':>9s}")
    for name, fn in cases(rng).items():
        times = {}
        for label, mod in backends.items():
            fn(mod)  # warm-up
            times[label] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        for label, t in times.items():
            ratio = times["pure"] / t if label != "pure" else 1.0
            print(f"{name:28s} {label:8s} {t * 1e3:9.3f} {ratio:8.1f}x")


if __name__ == "__main__":
    main()
