from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmmafi.formats import BF16, FP16, TF32, Encoded
from hmmafi.faults import (
    FaultSite,
    FaultSpec,
    InjectionHook,
    encode_term,
    inject,
    pin_site,
    sample_site,
    sites_per_instruction,
    write_back,
)
from hmmafi.guards import GuardKind
from hmmafi.hmma import execute_hmma, fragment_map, shape_for
from hmmafi.workloads import RandomGemmSpec, RandomGemmWorkload


def single_term_state(fmt, a00, b00, c00):
    s = shape_for(fmt)
    a = np.zeros((s.m, s.k))
    b = np.zeros((s.k, s.n))
    c = np.zeros((s.m, s.n), np.float32)
    a[0, 0], b[0, 0], c[0, 0] = a00, b00, c00
    return execute_hmma(a, b, c, fragment_map(fmt))[1]


def test_fault_spec_validation():
    for bad in (3, 5, -1):
        with pytest.raises(ValueError):
            FaultSpec(bad)
    with pytest.raises(ValueError):
        FaultSpec(2, fixed_position=3)
    assert FaultSpec(1, 7).mode == "fixed"
    with pytest.raises(IndexError):
        FaultSpec(1, 16).draw_positions(np.random.default_rng(0), BF16)


@pytest.mark.parametrize("n", [1, 2, 4])
def test_positions_distinct(n):
    rng = np.random.default_rng(0)
    for _ in range(200):
        pos = FaultSpec(n).draw_positions(rng, TF32)
        assert len(set(pos)) == n and all(0 <= p < 19 for p in pos)


def test_encode_term_examples():
    assert encode_term(2.0, BF16).hex() == "4000"
    e = encode_term(2.25, BF16)
    assert (e.exponent, e.mantissa) == (0b10000000, 0b0010000)


def test_inject_bf16_exponent_bit():
    state = single_term_state(BF16, 1.0, 2.0, 8.0)
    out, report = inject(state, FaultSite(0, 0, 0, 0, (13,)))
    assert report is None
    assert (out.re_sum, out.re_term) == (10.0, 2.0)
    assert out.re_err == pytest.approx(3.68935e19, rel=1e-6)
    assert out.diff == pytest.approx(3.68935e19, rel=1e-6)
    assert (out.original_encoding, out.faulty_encoding) == ("4000", "6000")


def test_inject_fp16_zero_mantissa_msb():
    state = single_term_state(FP16, 0.0, 1.0, 1.0)
    out, _ = inject(state, FaultSite(0, 0, 0, 0, (9,)))
    assert out.re_term == 0.0
    assert out.re_err == 3.0517578125e-5
    assert out.re_sum_prime != out.re_sum


def test_inject_absorbed_by_rounding():
    # mantissa LSB of 6.0 is far below the binary32 ulp of a 2^30 sum
    state = single_term_state(BF16, 3.0, 2.0, 2.0**30 + 4.0)
    out, _ = inject(state, FaultSite(0, 0, 0, 0, (0,)))
    assert out.re_err != out.re_term
    assert out.diff == 0.0 and out.re_sum_prime == out.re_sum


def test_control_arm_is_identity():
    state = single_term_state(BF16, 3.0, 2.0, 4.0)
    out, report = inject(state, FaultSite(0, 0, 0, 0, ()), GuardKind.RANGE_CHECK_MAX)
    assert out.diff == 0.0 and not report.detected


def test_inject_with_guard_corrects():
    state = single_term_state(BF16, 1.0, 2.0, 8.0)
    out, report = inject(state, FaultSite(0, 0, 0, 0, (13,)), GuardKind.BOUND_CHECK)
    assert report.detected and out.re_err == 2.0 and out.diff == 0.0


def test_write_back_arithmetic():
    assert write_back(10.0, 6.0, 6.0) == 10.0
    assert write_back(np.float32(1.0), 0.0, 2.0**-127) == 1.0
    assert write_back(np.float32(1.0), 0.0, 2.0**-15) == np.float32(1.0 + 2.0**-15)


@settings(max_examples=300, deadline=None)
@given(st.integers(-2**20, 2**20), st.integers(-2**10, 2**10), st.integers(-2**10, 2**10))
def test_write_back_involution_on_integers(s, t, e):
    once = write_back(s, t, e)
    assert write_back(once, e, t) == np.float32(s)


def test_sample_site_space():
    shape = shape_for(TF32)
    assert sites_per_instruction(shape) == 1024
    site = sample_site(1, shape, 5, 0)
    assert site == sample_site(1, shape, 5, 0)
    assert 0 <= site.lane < 32 and 0 <= site.dreg < 4 and 0 <= site.term < 8
    sites = {sample_site(3, shape, 5, i) for i in range(50)}
    assert len(sites) > 40


def test_sample_site_chi_square():
    shape = shape_for(TF32)
    n = 100_000
    counts = np.zeros(1024, np.int64)
    for i in range(n):
        s = sample_site(1, shape, 123, i)
        counts[(s.lane * 4 + s.dreg) * 8 + s.term] += 1
    expected = n / 1024
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    dof = 1023
    assert abs(chi2 - dof) < 5 * np.sqrt(2 * dof)


def test_pin_site_validation():
    shape = shape_for(TF32)
    assert pin_site(FaultSite(1, 31, 3, 7, (18,)), shape, 2).term == 7
    for bad in (FaultSite(2, 0, 0, 0), FaultSite(0, 32, 0, 0), FaultSite(0, 0, 4, 0),
                FaultSite(0, 0, 0, 8), FaultSite(0, 0, 0, 0, (19,))):
        with pytest.raises(IndexError):
            pin_site(bad, shape, 2)


def test_site_json_round_trip():
    s = FaultSite(3, 4, 1, 9, (2, 7))
    assert FaultSite.from_json(s.to_json()) == s
    assert s.to_json() == {"instr": 3, "lane": 4, "dreg": 1, "term": 9, "bits": [2, 7]}


def test_fault_locality():
    w = RandomGemmWorkload(RandomGemmSpec(32, 16, 48, "normal", BF16, seed=1))
    golden = w.golden().outputs
    for i in range(20):
        site = sample_site(w.total_instructions, w.shape, 9, i, FaultSpec(2))
        res = w.run(site)
        changed = np.argwhere(golden.view(np.uint32) != res.outputs.view(np.uint32))
        assert len(changed) <= 1
        if res.hook.outcome.diff != 0:
            assert len(changed) == 1


def test_hook_records_outcome():
    state = single_term_state(BF16, 1.0, 2.0, 8.0)
    hook = InjectionHook(0, FaultSite(0, 0, 0, 0, (13,)))
    [(lane, dreg, value)] = hook(state)
    assert (lane, dreg) == (0, 0) and value == hook.outcome.re_sum_prime


def test_encoded_sign_flip():
    state = single_term_state(BF16, 1.0, 2.0, 8.0)
    out, _ = inject(state, FaultSite(0, 0, 0, 0, (15,)))
    assert Encoded.from_hex(BF16, out.faulty_encoding).sign == 1
    assert out.re_sum_prime == 6.0
