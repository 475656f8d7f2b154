"""Compare the compiled GLCM kernel against the numpy fallback.

    python3 benchmarks/bench_glcm.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from trgan_privacy import _kernels
from trgan_privacy.radiomics import unit_offsets


def case(shape, levels, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.integers(0, levels, size=shape).astype(np.int32)
    m = (rng.random(shape) < 0.4).astype(np.uint8)
    return q, m


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    offsets = unit_offsets()
    print(f"compiled kernel available: {_kernels.COMPILED}")
    print(f"{'grid':>14} {'numpy ms':>10} {'compiled ms':>12} {'speedup':>8}")
    for shape in [(8, 16, 16), (16, 32, 32), (32, 64, 64), (64, 128, 128)]:
        q, m = case(shape, 8)
        ref = _kernels.glcm_counts_py(q, m, 8, offsets)
        t_py = min(timeit.repeat(lambda: _kernels.glcm_counts_py(q, m, 8, offsets),
                                 number=1, repeat=args.repeat))
        if _kernels.COMPILED:
            assert np.array_equal(ref, _kernels.glcm_counts(q, m, 8, offsets))
            t_c = min(timeit.repeat(lambda: _kernels.glcm_counts(q, m, 8, offsets),
                                    number=1, repeat=args.repeat))
            print(f"{'x'.join(map(str, shape)):>14} {t_py * 1e3:10.3f} {t_c * 1e3:12.3f} {t_py / t_c:8.1f}")
        else:
            print(f"{'x'.join(map(str, shape)):>14} {t_py * 1e3:10.3f} {'n/a':>12} {'n/a':>8}")


if __name__ == "__main__":
    main()
