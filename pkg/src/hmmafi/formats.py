"""Reduced-precision float formats: FP16, BF16 and TF32.

Encodings are plain unsigned integers, right-aligned. TF32 occupies the low
19 bits of a 32-bit container (sign at bit 18). Rounding is always
round-to-nearest-even; overflow goes to infinity and underflow through the
subnormals to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import kernels

__all__ = [
    "FpFormat",
    "Encoded",
    "FP16",
    "BF16",
    "TF32",
    "FORMATS",
    "get_format",
    "encode",
    "decode",
    "flip_bits",
    "exponent_field",
    "replace_exponent_field",
    "encode_array",
    "decode_array",
    "quantize",
]


@dataclass(frozen=True)
class FpFormat:
    name: str
    exponent_bits: int
    mantissa_bits: int
    sign_bits: int = 1

    def __post_init__(self) -> None:
        if self.sign_bits != 1:
            raise ValueError("formats carry exactly one sign bit")

    @property
    def total_bits(self) -> int:
        return self.sign_bits + self.exponent_bits + self.mantissa_bits

    @property
    def exponent_bias(self) -> int:
        return (1 << (self.exponent_bits - 1)) - 1

    @property
    def exponent_max(self) -> int:
        """All-ones exponent field (infinity / NaN)."""
        return (1 << self.exponent_bits) - 1

    @property
    def sign_position(self) -> int:
        return self.exponent_bits + self.mantissa_bits

    @property
    def exponent_msb_position(self) -> int:
        return self.exponent_bits + self.mantissa_bits - 1

    @property
    def hex_digits(self) -> int:
        return -(-self.total_bits // 4)

    def bit_role(self, position: int) -> str:
        """'sign', 'exponent' or 'mantissa' for a bit index (0 = LSB)."""
        if not 0 <= position < self.total_bits:
            raise IndexError(f"bit {position} outside {self.name} ({self.total_bits} bits)")
        if position == self.sign_position:
            return "sign"
        return "exponent" if position >= self.mantissa_bits else "mantissa"

    def __str__(self) -> str:
        return self.name


FP16 = FpFormat("FP16", exponent_bits=5, mantissa_bits=10)
BF16 = FpFormat("BF16", exponent_bits=8, mantissa_bits=7)
TF32 = FpFormat("TF32", exponent_bits=8, mantissa_bits=10)

FORMATS = {f.name: f for f in (FP16, BF16, TF32)}


def get_format(name: str | FpFormat) -> FpFormat:
    if isinstance(name, FpFormat):
        return name
    try:
        return FORMATS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown format {name!r}; expected one of {sorted(FORMATS)}") from None


@dataclass(frozen=True)
class Encoded:
    """A bit pattern interpreted under ``format``."""

    format: FpFormat
    bits: int

    def __post_init__(self) -> None:
        if not 0 <= self.bits < (1 << self.format.total_bits):
            raise ValueError(f"{self.bits:#x} does not fit in {self.format.total_bits} bits")

    @property
    def sign(self) -> int:
        return self.bits >> self.format.sign_position

    @property
    def exponent(self) -> int:
        return (self.bits >> self.format.mantissa_bits) & self.format.exponent_max

    @property
    def mantissa(self) -> int:
        return self.bits & ((1 << self.format.mantissa_bits) - 1)

    @property
    def is_nan(self) -> bool:
        return self.exponent == self.format.exponent_max and self.mantissa != 0

    @property
    def value(self) -> float:
        return decode(self)

    def hex(self) -> str:
        return f"{self.bits:0{self.format.hex_digits}x}"

    @classmethod
    def from_hex(cls, fmt: FpFormat, text: str) -> "Encoded":
        return cls(fmt, int(text, 16))

    @classmethod
    def from_fields(cls, fmt: FpFormat, sign: int, exponent: int, mantissa: int) -> "Encoded":
        if not 0 <= exponent <= fmt.exponent_max or not 0 <= mantissa < (1 << fmt.mantissa_bits):
            raise ValueError("field out of range")
        return cls(fmt, (sign << fmt.sign_position) | (exponent << fmt.mantissa_bits) | mantissa)

    def __repr__(self) -> str:
        return f"Encoded({self.format.name}, 0x{self.hex()}, {decode(self)!r})"


def decode(e: Encoded) -> float:
    """Exact binary64 value of an encoding (NaN encodings decode to ``nan``)."""
    fmt = e.format
    exp, man = e.exponent, e.mantissa
    if exp == fmt.exponent_max:
        out = math.inf if man == 0 else math.nan
    elif exp == 0:
        out = math.ldexp(man, 1 - fmt.exponent_bias - fmt.mantissa_bits)
    else:
        out = math.ldexp(man + (1 << fmt.mantissa_bits), exp - fmt.exponent_bias - fmt.mantissa_bits)
    return -out if e.sign else out


def encode(v: float, fmt: FpFormat) -> Encoded:
    """Round ``v`` to the nearest ``fmt`` value, ties to even."""
    fmt = get_format(fmt)
    sign = 1 if math.copysign(1.0, v) < 0 else 0
    a = abs(v)
    inf_mag = fmt.exponent_max << fmt.mantissa_bits
    if math.isnan(v):
        mag = inf_mag | (1 << (fmt.mantissa_bits - 1))
    elif math.isinf(a):
        mag = inf_mag
    elif a == 0.0:
        mag = 0
    else:
        emin = 1 - fmt.exponent_bias
        scale = max(math.frexp(a)[1] - 1, emin)
        # power-of-two scaling is exact; round() on a float is ties-to-even
        n = round(math.ldexp(a, fmt.mantissa_bits - scale))
        mag = min(((scale + fmt.exponent_bias - 1) << fmt.mantissa_bits) + n, inf_mag)
    return Encoded(fmt, (sign << fmt.sign_position) | mag)


def flip_bits(e: Encoded, positions: Iterable[int]) -> Encoded:
    positions = list(positions)
    if len(set(positions)) != len(positions):
        raise ValueError(f"duplicate bit positions in {positions}")
    mask = 0
    for p in positions:
        if not 0 <= p < e.format.total_bits:
            raise IndexError(f"bit {p} outside {e.format.name} ({e.format.total_bits} bits)")
        mask |= 1 << p
    return Encoded(e.format, e.bits ^ mask)


def exponent_field(e: Encoded) -> int:
    return e.exponent


def replace_exponent_field(e: Encoded, new_field: int) -> Encoded:
    fmt = e.format
    if not 0 <= new_field <= fmt.exponent_max:
        raise ValueError(f"exponent field {new_field} outside [0, {fmt.exponent_max}]")
    cleared = e.bits & ~(fmt.exponent_max << fmt.mantissa_bits)
    return Encoded(fmt, cleared | (new_field << fmt.mantissa_bits))


# -- array versions (kernel backed) -------------------------------------


def encode_array(values, fmt: FpFormat) -> np.ndarray:
    """Vectorised :func:`encode`; returns uint32 bit patterns."""
    fmt = get_format(fmt)
    return kernels.encode_bits(values, fmt.exponent_bits, fmt.mantissa_bits)


def decode_array(bits, fmt: FpFormat) -> np.ndarray:
    fmt = get_format(fmt)
    return kernels.decode_bits(bits, fmt.exponent_bits, fmt.mantissa_bits)


def quantize(values, fmt: FpFormat) -> np.ndarray:
    """Round to ``fmt`` and return binary32 values (every format value fits binary32)."""
    return decode_array(encode_array(values, fmt), fmt).astype(np.float32)
