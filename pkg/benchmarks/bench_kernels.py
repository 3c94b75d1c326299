"""Compare the numba and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is called once to trigger compilation, then timed with
``timeit``; the best of ``--repeat`` runs is reported per call.
"""
import argparse
import timeit

import numpy as np

from dualsam import kernels
from dualsam.codec import OFFSETS


def cases(rng):
    xp = rng.standard_normal((8, 16, 20, 20))
    cols = kernels.numpy_impl.im2col(xp, 3, 3, 2, 16, 16)
    mask = (rng.random((256, 256)) < 0.3).astype(np.uint8)
    label = kernels.numpy_impl.c3p_encode(mask, OFFSETS)
    return {
        "im2col 8x16x20x20 k3 d2": lambda k: k.im2col(xp, 3, 3, 2, 16, 16),
        "col2im 8x16x20x20 k3 d2": lambda k: k.col2im(cols, 16, 20, 20, 3, 3, 2, 16, 16),
        "c3p_encode 256x256": lambda k: k.c3p_encode(mask, OFFSETS),
        "c3p_decode 256x256": lambda k: k.c3p_decode(label, OFFSETS),
        "or_pool 256x256 /4": lambda k: k.or_pool(mask, 4),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    jit = kernels.numba_impl()
    if jit is None:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':<26}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, call in cases(np.random.default_rng(0)).items():
        np.testing.assert_array_equal(call(kernels.numpy_impl), call(jit))
        times = []
        for impl in (kernels.numpy_impl, jit):
            timer = timeit.Timer(lambda impl=impl: call(impl))
            number, _ = timer.autorange()
            times.append(min(timer.repeat(args.repeat, number)) / number * 1e3)
        print(f"{name:<26}{times[0]:>10.3f}{times[1]:>10.3f}{times[0] / times[1]:>8.1f}x")


if __name__ == "__main__":
    main()
