"""Fault sites, bit-flip patterns and the write-back injection.

A trial takes one product term as held in a format-width register (the
exact binary32 product rounded to nearest-even), flips bits in it to get
``re_err`` and plants ``(re_sum - re_term) + re_err`` into the destination
register, both operations in binary32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .formats import Encoded, FpFormat, decode, encode, flip_bits
from .guards import GuardKind, GuardReport, apply_guard
from .hmma import N_DREGS, WARP_SIZE, HmmaShape, WarpState, term_value

ALLOWED_BITS = (1, 2, 4)


@dataclass(frozen=True)
class FaultSpec:
    """How many bits to flip and where.

    ``fixed_position`` pins a single bit (``n_bits`` must be 1). ``n_bits == 0``
    is the no-fault control arm and is not accepted from user input.
    """

    n_bits: int = 1
    fixed_position: int | None = None

    def __post_init__(self) -> None:
        if self.n_bits not in ALLOWED_BITS and self.n_bits != 0:
            raise ValueError(f"n_bits must be one of {ALLOWED_BITS}, got {self.n_bits}")
        if self.fixed_position is not None and self.n_bits != 1:
            raise ValueError("a fixed bit position requires n_bits == 1")

    @property
    def mode(self) -> str:
        return "random" if self.fixed_position is None else "fixed"

    def draw_positions(self, rng: np.random.Generator, fmt: FpFormat) -> tuple[int, ...]:
        if self.fixed_position is not None:
            if not 0 <= self.fixed_position < fmt.total_bits:
                raise IndexError(f"bit {self.fixed_position} outside {fmt.name} ({fmt.total_bits} bits)")
            return (self.fixed_position,)
        if self.n_bits == 0:
            return ()
        # without replacement: n distinct bits always change
        return tuple(sorted(int(p) for p in rng.choice(fmt.total_bits, size=self.n_bits, replace=False)))


@dataclass(frozen=True)
class FaultSite:
    instr_index: int
    lane: int
    dreg: int
    term: int
    bit_positions: tuple[int, ...] = ()

    def to_json(self) -> dict:
        return {"instr": self.instr_index, "lane": self.lane, "dreg": self.dreg, "term": self.term,
                "bits": list(self.bit_positions)}

    @classmethod
    def from_json(cls, obj: dict) -> "FaultSite":
        return cls(int(obj["instr"]), int(obj["lane"]), int(obj["dreg"]), int(obj["term"]),
                   tuple(int(b) for b in obj["bits"]))


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    """Counter-based stream for one trial: Philox keyed by the seed, counter block by trial."""
    if master_seed < 0 or trial_index < 0:
        raise ValueError("seed and trial index must be non-negative")
    return np.random.Generator(np.random.Philox(key=master_seed, counter=[0, 0, trial_index, 0]))


def sites_per_instruction(shape: HmmaShape) -> int:
    return WARP_SIZE * N_DREGS * shape.k


def sample_site(
    total_instructions: int,
    shape: HmmaShape,
    seed: int,
    trial_index: int,
    spec: FaultSpec = FaultSpec(),
) -> FaultSite:
    """Uniform draw over instruction x lane x dreg x term, plus the bit pattern."""
    per_instr = sites_per_instruction(shape)
    if total_instructions < 1:
        raise ValueError("empty site space")
    rng = trial_rng(seed, trial_index)
    flat = int(rng.integers(total_instructions * per_instr))
    instr, rest = divmod(flat, per_instr)
    lane, rest = divmod(rest, N_DREGS * shape.k)
    dreg, term = divmod(rest, shape.k)
    bits = spec.draw_positions(rng, shape.input_format)
    return FaultSite(instr, lane, dreg, term, bits)


def pin_site(site: FaultSite, shape: HmmaShape, total_instructions: int) -> FaultSite:
    """Validate user-supplied coordinates against the site space."""
    if not 0 <= site.instr_index < total_instructions:
        raise IndexError(f"instr {site.instr_index} outside [0, {total_instructions})")
    if not 0 <= site.lane < WARP_SIZE:
        raise IndexError(f"lane {site.lane} outside [0, {WARP_SIZE})")
    if not 0 <= site.dreg < N_DREGS:
        raise IndexError(f"dreg {site.dreg} outside [0, {N_DREGS})")
    if not 0 <= site.term < shape.k:
        raise IndexError(f"term {site.term} outside [0, {shape.k}) for {shape.input_format.name}")
    for b in site.bit_positions:
        if not 0 <= b < shape.input_format.total_bits:
            raise IndexError(f"bit {b} outside {shape.input_format.name}")
    return site


def encode_term(re_term: float, fmt: FpFormat) -> Encoded:
    return encode(float(re_term), fmt)


@dataclass(frozen=True)
class InjectionOutcome:
    re_sum: float
    re_term: float
    re_err: float
    re_sum_prime: float
    diff: float
    original_encoding: str
    faulty_encoding: str


def write_back(re_sum, re_term, re_err) -> np.float32:
    f32 = np.float32
    with np.errstate(all="ignore"):
        return f32(f32(f32(re_sum) - f32(re_term)) + f32(re_err))


def inject(state: WarpState, site: FaultSite, guard: GuardKind = GuardKind.NONE) -> tuple[InjectionOutcome, GuardReport | None]:
    fmt = state.format
    re_sum = state.d_frag[site.lane, site.dreg]
    # the multiplier's result register is format-width; its content is the term we take out
    original = encode_term(term_value(state, site.lane, site.dreg, site.term), fmt)
    re_term = np.float32(decode(original))
    faulty = flip_bits(original, site.bit_positions)

    report = None
    if guard is not GuardKind.NONE:
        a_op, b_op = state.operands(site.lane, site.dreg, site.term)
        report = apply_guard(guard, faulty, a_op.exponent, b_op.exponent)
    written = report.corrected if report is not None else faulty

    if not site.bit_positions and written == original:
        # control arm: the register is untouched, nothing to write back
        re_err, re_sum_prime = np.float32(re_term), np.float32(re_sum)
    else:
        re_err = np.float32(decode(written))
        re_sum_prime = write_back(re_sum, re_term, re_err)
    with np.errstate(all="ignore"):
        diff = float(re_sum_prime) - float(re_sum)
    outcome = InjectionOutcome(float(re_sum), float(re_term), float(re_err), float(re_sum_prime), diff,
                               original.hex(), faulty.hex())
    return outcome, report


@dataclass
class InjectionHook:
    """Write-back hook for :func:`gemm.run_gemm`; keeps what it did for the record."""

    instr_index: int
    site: FaultSite
    guard: GuardKind = GuardKind.NONE
    outcome: InjectionOutcome | None = field(default=None, init=False)
    report: GuardReport | None = field(default=None, init=False)

    def __call__(self, state: WarpState):
        self.outcome, self.report = inject(state, self.site, self.guard)
        return [(self.site.lane, self.site.dreg, self.outcome.re_sum_prime)]
