"""Exponent-only detection and correction for BF16 multiplication results.

All three guards look only at the exponent field of the (possibly faulty)
product register and never touch the sign or mantissa.

* ``BoundCheck``: with the exponent MSB set, any 1 among the next three
  exponent bits (pattern ``1eeexxxx``) marks a value of at least 2**17;
  those three bits are cleared.
* ``RangeCheck-max``: the product of ``m1 * 2**e1`` and ``m2 * 2**e2`` has
  exponent at most ``e1 + e2 + 1``. A larger exponent is replaced by the bound.
* ``RangeCheck-flip``: same detection, but 1-bits of the exponent are cleared
  from the least significant end until the field is within the bound.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .formats import BF16, Encoded, FpFormat, replace_exponent_field


class GuardKind(enum.Enum):
    NONE = "none"
    BOUND_CHECK = "bound_check"
    RANGE_CHECK_MAX = "range_check_max"
    RANGE_CHECK_FLIP = "range_check_flip"

    @classmethod
    def parse(cls, text: "str | GuardKind | None") -> "GuardKind":
        if isinstance(text, GuardKind):
            return text
        if text is None:
            return cls.NONE
        key = text.strip().lower().replace("-", "_")
        aliases = {"nodc": "none", "boundcheck": "bound_check", "rangecheck_max": "range_check_max",
                   "rangecheck_flip": "range_check_flip"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown guard {text!r}; expected one of {[g.value for g in cls]}") from None


@dataclass(frozen=True)
class GuardReport:
    kind: GuardKind
    detected: bool
    corrected: Encoded
    exponent_before: int
    exponent_after: int
    bound_used: int | None = None


# exponent bits 6..4 of the 8-bit field, i.e. the "eee" of 1eeexxxx
_EEE_MASK = 0b0111_0000
_MSB = 0b1000_0000


def _require_bf16(product: Encoded) -> None:
    if product.format != BF16:
        raise ValueError(f"exponent guards are BF16-only, got {product.format.name}")


def bound_check(product: Encoded) -> GuardReport:
    _require_bf16(product)
    exp = product.exponent
    if exp & _MSB and exp & _EEE_MASK:
        fixed = exp & ~_EEE_MASK
        return GuardReport(GuardKind.BOUND_CHECK, True, replace_exponent_field(product, fixed), exp, fixed)
    return GuardReport(GuardKind.BOUND_CHECK, False, product, exp, exp)


def range_bound(e1_raw: int, e2_raw: int, fmt: FpFormat = BF16) -> int:
    """Largest biased exponent field a product of the two operands can carry."""
    return min(max(e1_raw + e2_raw - fmt.exponent_bias + 1, 0), fmt.exponent_max)


def _operands_bypass(e1_raw: int, e2_raw: int) -> bool:
    # zero/subnormal operands fall outside the normalised-significand argument
    return e1_raw == 0 or e2_raw == 0


def range_check_max(product: Encoded, e1_raw: int, e2_raw: int) -> GuardReport:
    _require_bf16(product)
    exp = product.exponent
    if _operands_bypass(e1_raw, e2_raw):
        return GuardReport(GuardKind.RANGE_CHECK_MAX, False, product, exp, exp, None)
    bound = range_bound(e1_raw, e2_raw, product.format)
    if exp <= bound:
        return GuardReport(GuardKind.RANGE_CHECK_MAX, False, product, exp, exp, bound)
    return GuardReport(GuardKind.RANGE_CHECK_MAX, True, replace_exponent_field(product, bound), exp, bound, bound)


def range_check_flip(product: Encoded, e1_raw: int, e2_raw: int) -> GuardReport:
    _require_bf16(product)
    exp = product.exponent
    if _operands_bypass(e1_raw, e2_raw):
        return GuardReport(GuardKind.RANGE_CHECK_FLIP, False, product, exp, exp, None)
    bound = range_bound(e1_raw, e2_raw, product.format)
    if exp <= bound:
        return GuardReport(GuardKind.RANGE_CHECK_FLIP, False, product, exp, exp, bound)
    fixed = exp
    while fixed > bound:
        fixed &= fixed - 1  # clear the lowest set bit
    return GuardReport(GuardKind.RANGE_CHECK_FLIP, True, replace_exponent_field(product, fixed), exp, fixed, bound)


def apply_guard(kind: GuardKind, product: Encoded, e1_raw: int, e2_raw: int) -> GuardReport | None:
    """Run ``kind`` on a product; ``None`` for the unguarded arm."""
    if kind is GuardKind.NONE:
        return None
    if kind is GuardKind.BOUND_CHECK:
        return bound_check(product)
    if kind is GuardKind.RANGE_CHECK_MAX:
        return range_check_max(product, e1_raw, e2_raw)
    return range_check_flip(product, e1_raw, e2_raw)
