"""Warp-level HMMA simulation (Ampere m16n8k8 / m16n8k16 fragments).

Lane ``l`` belongs to ThreadGroup ``g = l // 4`` with in-group index
``t = l % 4``. A ThreadGroup owns rows ``g`` and ``g + 8`` of A and D and
column ``g`` of B. Each lane computes four dot products, one per
destination register, by reading the A/B elements it needs out of the
whole warp's registers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .formats import TF32, Encoded, FpFormat, decode_array, encode_array, get_format

WARP_SIZE = 32
N_DREGS = 4


@dataclass(frozen=True)
class HmmaShape:
    input_format: FpFormat
    m: int = 16
    n: int = 8
    k: int = 0

    def __post_init__(self) -> None:
        expected = 8 if self.input_format == TF32 else 16
        if self.k == 0:
            object.__setattr__(self, "k", expected)
        if (self.m, self.n, self.k) != (16, 8, expected):
            raise ValueError(f"{self.input_format.name} HMMA is 16x8x{expected}, got {self.m}x{self.n}x{self.k}")

    @property
    def name(self) -> str:
        return f"m{self.m}n{self.n}k{self.k}"


def shape_for(fmt: FpFormat | str) -> HmmaShape:
    return HmmaShape(get_format(fmt))


@dataclass(frozen=True, eq=False)
class FragmentMap:
    """(lane, slot) -> (row, col) maps for the A, B and D fragments.

    For 16-bit inputs a slot is ``2 * register + half``: each 32-bit register
    packs two consecutive elements. TF32 uses one register per slot.
    """

    shape: HmmaShape
    a_map: np.ndarray  # (32, slots_a, 2)
    b_map: np.ndarray  # (32, slots_b, 2)
    d_map: np.ndarray  # (32, 4, 2)
    # thread/register buffer: where lane l, dreg d finds its i-th A and B operand
    a_src: np.ndarray = field(repr=False)  # (32, 4, k, 2) -> (lane, slot)
    b_src: np.ndarray = field(repr=False)

    @property
    def slots_a(self) -> int:
        return self.a_map.shape[1]

    @property
    def slots_b(self) -> int:
        return self.b_map.shape[1]


def _inverse(mapping: np.ndarray, rows: int, cols: int) -> np.ndarray:
    inv = np.full((rows, cols, 2), -1, dtype=np.int64)
    for lane in range(mapping.shape[0]):
        for slot in range(mapping.shape[1]):
            r, c = mapping[lane, slot]
            inv[r, c] = (lane, slot)
    return inv


def build_fragment_map(shape: HmmaShape) -> FragmentMap:
    a_map, b_map, d_map = [], [], []
    for lane in range(WARP_SIZE):
        g, t = divmod(lane, 4)
        if shape.k == 8:
            a_map.append([(g, t), (g + 8, t), (g, t + 4), (g + 8, t + 4)])
            b_map.append([(t, g), (t + 4, g)])
        else:
            a_map.append([
                (g, 2 * t), (g, 2 * t + 1), (g + 8, 2 * t), (g + 8, 2 * t + 1),
                (g, 2 * t + 8), (g, 2 * t + 9), (g + 8, 2 * t + 8), (g + 8, 2 * t + 9),
            ])
            b_map.append([(2 * t, g), (2 * t + 1, g), (2 * t + 8, g), (2 * t + 9, g)])
        d_map.append([(g, 2 * t), (g, 2 * t + 1), (g + 8, 2 * t), (g + 8, 2 * t + 1)])
    return _assemble(shape, np.array(a_map), np.array(b_map), np.array(d_map))


def _assemble(shape: HmmaShape, a_map: np.ndarray, b_map: np.ndarray, d_map: np.ndarray) -> FragmentMap:
    inv_a = _inverse(a_map, shape.m, shape.k)
    inv_b = _inverse(b_map, shape.k, shape.n)
    ks = np.arange(shape.k)
    rows = d_map[:, :, 0][:, :, None]
    cols = d_map[:, :, 1][:, :, None]
    a_src = inv_a[rows, ks[None, None, :]]
    b_src = inv_b[ks[None, None, :], cols]
    for arr in (a_map, b_map, d_map, a_src, b_src):
        arr.setflags(write=False)
    return FragmentMap(shape, a_map, b_map, d_map, a_src, b_src)


def with_maps(fmap: FragmentMap, a_map=None, b_map=None, d_map=None) -> FragmentMap:
    """Rebuild a map with replaced tables (used by self-tests to inject defects)."""
    return _assemble(
        fmap.shape,
        np.array(fmap.a_map if a_map is None else a_map),
        np.array(fmap.b_map if b_map is None else b_map),
        np.array(fmap.d_map if d_map is None else d_map),
    )


def is_bijection(mapping: np.ndarray, rows: int, cols: int) -> bool:
    flat = mapping.reshape(-1, 2)
    if flat.shape[0] != rows * cols:
        return False
    if flat.min() < 0 or (flat[:, 0] >= rows).any() or (flat[:, 1] >= cols).any():
        return False
    return len({(int(r), int(c)) for r, c in flat}) == rows * cols


_MAPS: dict[FpFormat, FragmentMap] = {}


def fragment_map(fmt: FpFormat | str) -> FragmentMap:
    """Cached stock map for a format."""
    fmt = get_format(fmt)
    if fmt not in _MAPS:
        _MAPS[fmt] = build_fragment_map(shape_for(fmt))
    return _MAPS[fmt]


@dataclass(frozen=True, eq=False)
class WarpState:
    fmap: FragmentMap
    a_frag: np.ndarray  # (32, slots_a) uint32 encodings
    b_frag: np.ndarray  # (32, slots_b) uint32 encodings
    c_frag: np.ndarray  # (32, 4) binary32
    term_products: np.ndarray  # (32, 4, k) binary32
    d_frag: np.ndarray  # (32, 4) binary32

    @property
    def format(self) -> FpFormat:
        return self.fmap.shape.input_format

    def destination(self, lane: int, dreg: int) -> tuple[int, int]:
        _check_index(lane, dreg, 0, self.fmap.shape.k)
        r, c = self.fmap.d_map[lane, dreg]
        return int(r), int(c)

    def operands(self, lane: int, dreg: int, k_index: int) -> tuple[Encoded, Encoded]:
        """The A and B encodings multiplied in one term, fetched from the owning lanes."""
        _check_index(lane, dreg, k_index, self.fmap.shape.k)
        al, aslot = self.fmap.a_src[lane, dreg, k_index]
        bl, bslot = self.fmap.b_src[lane, dreg, k_index]
        fmt = self.format
        return Encoded(fmt, int(self.a_frag[al, aslot])), Encoded(fmt, int(self.b_frag[bl, bslot]))


def _check_index(lane: int, dreg: int, k_index: int, k: int) -> None:
    if not 0 <= lane < WARP_SIZE:
        raise IndexError(f"lane {lane} outside [0, {WARP_SIZE})")
    if not 0 <= dreg < N_DREGS:
        raise IndexError(f"dreg {dreg} outside [0, {N_DREGS})")
    if not 0 <= k_index < k:
        raise IndexError(f"term {k_index} outside [0, {k})")


def execute_hmma(a, b, c, fmap: FragmentMap) -> tuple[np.ndarray, WarpState]:
    """D = A @ B + C for one 16x8xk tile, computed lane by lane.

    ``a`` and ``b`` are rounded into the input format; ``c`` is binary32.
    Products are exact in binary32 and summed onto C in ascending k.
    """
    shape = fmap.shape
    fmt = shape.input_format
    a = np.asarray(a)
    b = np.asarray(b)
    c = np.asarray(c, dtype=np.float32)
    if a.shape != (shape.m, shape.k) or b.shape != (shape.k, shape.n) or c.shape != (shape.m, shape.n):
        raise ValueError(f"operand shapes {a.shape}, {b.shape}, {c.shape} do not match {shape.name}")

    a_bits = encode_array(a, fmt)
    b_bits = encode_array(b, fmt)
    a_frag = a_bits[fmap.a_map[..., 0], fmap.a_map[..., 1]]
    b_frag = b_bits[fmap.b_map[..., 0], fmap.b_map[..., 1]]
    c_frag = c[fmap.d_map[..., 0], fmap.d_map[..., 1]]

    a_vals = decode_array(a_frag, fmt).astype(np.float32)[fmap.a_src[..., 0], fmap.a_src[..., 1]]
    b_vals = decode_array(b_frag, fmt).astype(np.float32)[fmap.b_src[..., 0], fmap.b_src[..., 1]]
    with np.errstate(all="ignore"):
        products = a_vals * b_vals
    d_frag = kernels.accumulate_f32(c_frag.reshape(-1), products.reshape(-1, shape.k)).reshape(WARP_SIZE, N_DREGS)

    d = np.empty((shape.m, shape.n), dtype=np.float32)
    d[fmap.d_map[..., 0], fmap.d_map[..., 1]] = d_frag
    for arr in (a_frag, b_frag, c_frag, products, d_frag):
        arr.setflags(write=False)
    return d, WarpState(fmap, a_frag, b_frag, c_frag, products, d_frag)


def term_value(state: WarpState, lane: int, dreg: int, k_index: int) -> np.float32:
    _check_index(lane, dreg, k_index, state.fmap.shape.k)
    return state.term_products[lane, dreg, k_index]


__all__ = [
    "WARP_SIZE",
    "N_DREGS",
    "HmmaShape",
    "FragmentMap",
    "WarpState",
    "shape_for",
    "build_fragment_map",
    "fragment_map",
    "with_maps",
    "is_bijection",
    "execute_hmma",
    "term_value",
]
