"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the median time of each backend and the
speed-up, plus a check that both backends agree bit for bit.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from hmmafi import _kernels_py as py

try:
    from hmmafi import _kernels as ext
except ImportError:  # extension not built
    ext = None


def median_time(fn, repeat: int) -> float:
    fn()  # warm-up
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def cases():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(1_000_000) * np.exp2(rng.integers(-30, 30, 1_000_000))
    bits = rng.integers(0, 1 << 16, 1_000_000).astype(np.uint32)
    a = rng.standard_normal((512, 128)).astype(np.float32)
    b = rng.standard_normal((128, 64)).astype(np.float32)
    c = np.zeros((512, 64), np.float32)
    init = rng.standard_normal(4096).astype(np.float32)
    terms = rng.standard_normal((4096, 16)).astype(np.float32)
    return [
        ("encode_bits 1e6 -> bf16", "encode_bits", (x, 8, 7)),
        ("decode_bits 1e6 fp16", "decode_bits", (bits, 5, 10)),
        ("gemm_f32 512x64x128", "gemm_f32", (a, b, c)),
        ("accumulate_f32 4096x16", "accumulate_f32", (init, terms)),
    ]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()
    if ext is None:
        print("compiled extension not available; only the NumPy fallback can run")
    print(f"{'kernel':28s} {'numpy':>10s} {'compiled':>10s} {'speed-up':>9s}  agree")
    for label, name, argv in cases():
        t_py = median_time(lambda: getattr(py, name)(*argv), args.repeat)
        if ext is None:
            print(f"{label:28s} {t_py * 1e3:8.2f}ms {'-':>10s} {'-':>9s}  -")
            continue
        t_ext = median_time(lambda: getattr(ext, name)(*argv), args.repeat)
        with np.errstate(all="ignore"):
            same = np.array_equal(np.asarray(getattr(py, name)(*argv)).view(np.uint8),
                                  np.asarray(getattr(ext, name)(*argv)).view(np.uint8))
        print(f"{label:28s} {t_py * 1e3:8.2f}ms {t_ext * 1e3:8.2f}ms {t_py / t_ext:8.1f}x  {same}")


if __name__ == "__main__":
    main()
