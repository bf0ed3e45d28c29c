"""Tile a whole GEMM into simulated HMMA instructions.

Tiles run in (tile_n, tile_m, tile_k) nested order, tile_k innermost, with
each tile's binary32 partial sum chained into the next tile_k step. Every
element of D is therefore C plus its products added in ascending k, which is
what :func:`kernels.gemm_f32` computes in one call; only the intercepted
instruction goes through the per-lane fragment path.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from . import kernels
from .formats import FpFormat, get_format, quantize
from .hmma import N_DREGS, WARP_SIZE, HmmaShape, WarpState, execute_hmma, fragment_map, shape_for


class WriteBackHook(Protocol):
    """Intercepts one dynamic HMMA instruction.

    Called with the executed instruction's :class:`WarpState`; returns
    ``(lane, dreg, value)`` triples that overwrite destination registers.
    """

    instr_index: int

    def __call__(self, state: WarpState) -> Iterable[tuple[int, int, float]] | None: ...


def _round_up(x: int, to: int) -> int:
    return -(-x // to) * to


@dataclass(frozen=True, eq=False)
class GemmProblem:
    """D = A @ B + C with A, B rounded into ``input_format`` and C in binary32."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    input_format: FpFormat

    def __post_init__(self) -> None:
        fmt = get_format(self.input_format)
        a = np.asarray(self.a)
        b = np.asarray(self.b)
        c = np.zeros((a.shape[0], b.shape[1]), np.float32) if self.c is None else np.asarray(self.c, np.float32)
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0] or c.shape != (a.shape[0], b.shape[1]):
            raise ValueError(f"incompatible GEMM operands {a.shape} x {b.shape} + {c.shape}")
        object.__setattr__(self, "input_format", fmt)
        object.__setattr__(self, "a", quantize(a, fmt))
        object.__setattr__(self, "b", quantize(b, fmt))
        object.__setattr__(self, "c", c)

    @classmethod
    def create(cls, a, b, c=None, input_format: FpFormat | str = "BF16") -> "GemmProblem":
        return cls(a, b, c, get_format(input_format))

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def n(self) -> int:
        return self.b.shape[1]

    @property
    def k(self) -> int:
        return self.a.shape[1]

    @property
    def shape(self) -> HmmaShape:
        return shape_for(self.input_format)

    @property
    def padded_extents(self) -> tuple[int, int, int]:
        s = self.shape
        return _round_up(self.m, s.m), _round_up(self.n, s.n), _round_up(self.k, s.k)

    def padded(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pm, pn, pk = self.padded_extents
        a = np.zeros((pm, pk), np.float32)
        b = np.zeros((pk, pn), np.float32)
        c = np.zeros((pm, pn), np.float32)
        a[: self.m, : self.k] = self.a
        b[: self.k, : self.n] = self.b
        c[: self.m, : self.n] = self.c
        return a, b, c


@dataclass(frozen=True)
class InstructionStream:
    tiles_m: int
    tiles_n: int
    tiles_k: int

    @classmethod
    def of(cls, p: GemmProblem) -> "InstructionStream":
        pm, pn, pk = p.padded_extents
        s = p.shape
        return cls(pm // s.m, pn // s.n, pk // s.k)

    @property
    def total_count(self) -> int:
        return self.tiles_m * self.tiles_n * self.tiles_k

    def __len__(self) -> int:
        return self.total_count

    def tile(self, index: int) -> tuple[int, int, int]:
        """(tile_m, tile_n, tile_k) of the ``index``-th executed instruction."""
        if not 0 <= index < self.total_count:
            raise IndexError(f"instruction {index} outside [0, {self.total_count})")
        rest, tk = divmod(index, self.tiles_k)
        tn, tm = divmod(rest, self.tiles_m)
        return tm, tn, tk

    def __iter__(self):
        for tn in range(self.tiles_n):
            for tm in range(self.tiles_m):
                for tk in range(self.tiles_k):
                    yield tm, tn, tk


def run_gemm(p: GemmProblem, hook: WriteBackHook | None = None, *, crop: bool = True) -> np.ndarray:
    """Execute ``p`` and return binary32 D (cropped to the unpadded extents)."""
    a, b, c = p.padded()
    d = kernels.gemm_f32(a, b, c)
    if hook is not None:
        stream = InstructionStream.of(p)
        tm, tn, tk_hit = stream.tile(hook.instr_index)
        s = p.shape
        fmap = fragment_map(p.input_format)
        rows = slice(tm * s.m, (tm + 1) * s.m)
        cols = slice(tn * s.n, (tn + 1) * s.n)
        acc = c[rows, cols]
        for tk in range(stream.tiles_k):
            ks = slice(tk * s.k, (tk + 1) * s.k)
            if tk != tk_hit:
                acc = kernels.gemm_f32(a[rows, ks], b[ks, cols], acc)
                continue
            acc, state = execute_hmma(a[rows, ks], b[ks, cols], acc, fmap)
            for lane, dreg, value in hook(state) or ():
                r, col = state.destination(lane, dreg)
                acc[r, col] = np.float32(value)
        d[rows, cols] = acc
    return d[: p.m, : p.n] if crop else d


def enumerate_sites(p: GemmProblem) -> int:
    return InstructionStream.of(p).total_count * WARP_SIZE * N_DREGS * p.shape.k


# -- matrix files ------------------------------------------------------------

_BINARY_SUFFIXES = {".bin", ".f32", ".raw"}


def save_matrix(path: str | Path, matrix) -> None:
    """Write a matrix column-major: ``.csv`` holds one column per line, binary
    suffixes hold little-endian binary32."""
    path = Path(path)
    m = np.asarray(matrix, dtype=np.float32)
    if path.suffix == ".csv":
        lines = (",".join(repr(float(x)) for x in col) for col in m.T)
        path.write_text("\n".join(lines) + "\n")
    elif path.suffix in _BINARY_SUFFIXES:
        path.write_bytes(m.T.astype("<f4").tobytes())
    else:
        raise ValueError(f"unsupported matrix file type {path.suffix!r}")


def load_matrix(path: str | Path, shape: tuple[int, int] | None = None) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        cols = [[float(x) for x in line.split(",")] for line in path.read_text().splitlines() if line.strip()]
        m = np.array(cols, dtype=np.float32).T
        if shape is not None and m.shape != tuple(shape):
            raise ValueError(f"{path}: expected shape {shape}, found {m.shape}")
        return np.ascontiguousarray(m)
    if path.suffix in _BINARY_SUFFIXES:
        if shape is None:
            raise ValueError("binary matrix files need an explicit shape")
        flat = np.frombuffer(path.read_bytes(), dtype="<f4")
        rows, ncols = shape
        if flat.size != rows * ncols:
            raise ValueError(f"{path}: {flat.size} values, expected {rows * ncols}")
        return np.ascontiguousarray(flat.reshape(ncols, rows).T.astype(np.float32))
    raise ValueError(f"unsupported matrix file type {path.suffix!r}")
