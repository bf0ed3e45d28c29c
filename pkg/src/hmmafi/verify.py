"""Self-test suites behind ``hmmafi verify``.

The GEMM oracle here is a scalar triple loop that never looks at fragment
maps or the compiled kernels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .formats import FORMATS, FpFormat, decode_array, encode_array, get_format, quantize
from .gemm import GemmProblem, run_gemm
from .hmma import FragmentMap, build_fragment_map, execute_hmma, is_bijection, shape_for


@dataclass(frozen=True)
class SuiteResult:
    name: str
    format: str
    passed: bool
    detail: str = ""


def reference_gemm(a, b, c) -> np.ndarray:
    """Triple loop: binary64 product (exact) rounded to binary32, summed in ascending k."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float32)
    m, k = a.shape
    n = b.shape[1]
    out = np.empty((m, n), dtype=np.float32)
    with np.errstate(all="ignore"):
        for i in range(m):
            for j in range(n):
                acc = c[i, j]
                for kk in range(k):
                    acc = np.float32(acc + np.float32(a[i, kk] * b[kk, j]))
                out[i, j] = acc
    return out


def check_fragment_map(fmap: FragmentMap) -> tuple[bool, str]:
    s = fmap.shape
    for name, mp, rows, cols in (("A", fmap.a_map, s.m, s.k), ("B", fmap.b_map, s.k, s.n), ("D", fmap.d_map, s.m, s.n)):
        if not is_bijection(mp, rows, cols):
            return False, f"{name} map is not a bijection onto {rows}x{cols}"
    for lane in range(32):
        g = lane // 4
        for name, mp in (("A", fmap.a_map), ("D", fmap.d_map)):
            if not set(int(r) for r in mp[lane, :, 0]) <= {g, g + 8}:
                return False, f"lane {lane} touches {name} rows outside ThreadGroup {g}"
    return True, "A, B, D bijective; ThreadGroup rows confined"


def _random_tile(rng: np.random.Generator, fmap: FragmentMap):
    s = fmap.shape
    fmt = s.input_format
    a = quantize(rng.standard_normal((s.m, s.k)), fmt)
    b = quantize(rng.standard_normal((s.k, s.n)), fmt)
    c = rng.standard_normal((s.m, s.n)).astype(np.float32)
    return a, b, c


def check_hmma(fmap: FragmentMap, n_ops: int = 100, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    for op in range(n_ops):
        a, b, c = _random_tile(rng, fmap)
        d, _ = execute_hmma(a, b, c, fmap)
        ref = reference_gemm(a, b, c)
        if not np.array_equal(d.view(np.uint32), ref.view(np.uint32)):
            return False, f"op {op}: fragment execution differs from the triple loop"
    return True, f"{n_ops} random {fmap.shape.name} ops bit-identical to the triple loop"


def check_codec(fmt: FpFormat) -> tuple[bool, str]:
    bits = np.arange(1 << fmt.total_bits, dtype=np.uint32)
    values = decode_array(bits, fmt)
    finite = np.isfinite(values)
    back = encode_array(values[finite], fmt)
    bad = int(np.sum(back != bits[finite]))
    return bad == 0, f"{int(finite.sum())} finite patterns, {bad} round-trip failures"


def check_gemm(fmt: FpFormat, seed: int = 1) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    p = GemmProblem(rng.standard_normal((40, 20)), rng.standard_normal((20, 12)),
                    rng.standard_normal((40, 12)).astype(np.float32), fmt)
    d = run_gemm(p)
    ref = reference_gemm(p.a, p.b, p.c)
    if not np.array_equal(d.view(np.uint32), ref.view(np.uint32)):
        return False, "padded tiled GEMM differs from the triple loop"

    class Identity:
        instr_index = 3

        def __call__(self, state):
            return None

    if not np.array_equal(run_gemm(p, Identity()).view(np.uint32), d.view(np.uint32)):
        return False, "identity hook changed the result"
    return True, "40x12x20 padded GEMM and identity hook match the triple loop"


def run_suites(formats=None, map_factory: Callable[[FpFormat], FragmentMap] | None = None,
               hmma_ops: int = 100) -> list[SuiteResult]:
    fmts = [get_format(f) for f in (formats or FORMATS.values())]
    factory = map_factory or (lambda f: build_fragment_map(shape_for(f)))
    results = []
    for fmt in fmts:
        fmap = factory(fmt)
        ok, detail = check_fragment_map(fmap)
        results.append(SuiteResult("fragment-map", fmt.name, ok, detail))
        if ok:
            ok, detail = check_hmma(fmap, hmma_ops)
        else:
            ok, detail = False, "skipped: fragment map invalid"
        results.append(SuiteResult("hmma-oracle", fmt.name, ok, detail))
        results.append(SuiteResult("codec-roundtrip", fmt.name, *check_codec(fmt)))
        results.append(SuiteResult("gemm-oracle", fmt.name, *check_gemm(fmt)))
    return results
