from __future__ import annotations

import numpy as np
import pytest

import oracles
from hmmafi.formats import BF16, FP16, TF32, decode, quantize
from hmmafi.hmma import (
    HmmaShape,
    build_fragment_map,
    execute_hmma,
    fragment_map,
    is_bijection,
    shape_for,
    term_value,
    with_maps,
)

ALL = [FP16, BF16, TF32]


def tile(rng, fmt, low=None):
    s = shape_for(fmt)
    if low is not None:
        a = rng.integers(low, -low + 1, (s.m, s.k)).astype(np.float64)
        b = rng.integers(low, -low + 1, (s.k, s.n)).astype(np.float64)
        c = rng.integers(low, -low + 1, (s.m, s.n)).astype(np.float32)
    else:
        a = quantize(rng.standard_normal((s.m, s.k)), fmt)
        b = quantize(rng.standard_normal((s.k, s.n)), fmt)
        c = rng.standard_normal((s.m, s.n)).astype(np.float32)
    return a, b, c


def test_shapes():
    assert shape_for(TF32).name == "m16n8k8"
    assert shape_for(BF16).name == "m16n8k16"
    assert shape_for(FP16).k == 16
    with pytest.raises(ValueError):
        HmmaShape(TF32, k=16)


def test_tf32_slot_table():
    fm = fragment_map(TF32)
    for lane in range(32):
        g, t = divmod(lane, 4)
        assert [tuple(x) for x in fm.a_map[lane]] == [(g, t), (g + 8, t), (g, t + 4), (g + 8, t + 4)]
        assert [tuple(x) for x in fm.b_map[lane]] == [(t, g), (t + 4, g)]
        assert [tuple(x) for x in fm.d_map[lane]] == [(g, 2 * t), (g, 2 * t + 1), (g + 8, 2 * t), (g + 8, 2 * t + 1)]


@pytest.mark.parametrize("fmt", [FP16, BF16], ids=str)
def test_16bit_slot_table(fmt):
    fm = fragment_map(fmt)
    for lane in range(32):
        g, t = divmod(lane, 4)
        want_a = [(g, 2 * t), (g, 2 * t + 1), (g + 8, 2 * t), (g + 8, 2 * t + 1),
                  (g, 2 * t + 8), (g, 2 * t + 9), (g + 8, 2 * t + 8), (g + 8, 2 * t + 9)]
        assert [tuple(x) for x in fm.a_map[lane]] == want_a
        assert [tuple(x) for x in fm.b_map[lane]] == [(2 * t, g), (2 * t + 1, g), (2 * t + 8, g), (2 * t + 9, g)]


def test_quoted_lanes():
    fm = fragment_map(TF32)
    assert tuple(fm.d_map[0, 0]) == (0, 0)
    assert tuple(fm.a_map[5, 1]) == (9, 1)


@pytest.mark.parametrize("fmt", ALL, ids=str)
def test_maps_are_bijections(fmt):
    fm = fragment_map(fmt)
    s = fm.shape
    assert is_bijection(fm.a_map, s.m, s.k)
    assert is_bijection(fm.b_map, s.k, s.n)
    assert is_bijection(fm.d_map, s.m, s.n)
    broken = fm.a_map.copy()
    broken[3, 0] = broken[4, 0]
    assert not is_bijection(broken, s.m, s.k)


def test_with_maps_rebuilds_sources():
    fm = build_fragment_map(shape_for(BF16))
    swapped = fm.d_map.copy()
    swapped[[0, 1]] = swapped[[1, 0]]
    alt = with_maps(fm, d_map=swapped)
    rng = np.random.default_rng(0)
    a, b, c = tile(rng, BF16)
    # any bijective D layout computes the same matrix
    assert np.array_equal(execute_hmma(a, b, c, alt)[0], execute_hmma(a, b, c, fm)[0])


def test_all_ones_tf32():
    s = shape_for(TF32)
    d, state = execute_hmma(np.ones((s.m, s.k)), np.ones((s.k, s.n)), np.zeros((s.m, s.n)), fragment_map(TF32))
    assert (d == 8.0).all()
    assert (state.term_products == 1.0).all()


def test_single_term():
    s = shape_for(BF16)
    a = np.zeros((s.m, s.k))
    b = np.zeros((s.k, s.n))
    a[3, 5], b[5, 7] = 2.0, 3.0
    d, _ = execute_hmma(a, b, np.zeros((s.m, s.n)), fragment_map(BF16))
    expect = np.zeros((s.m, s.n), np.float32)
    expect[3, 7] = 6.0
    assert np.array_equal(d, expect)


def test_term_value_and_operands():
    s = shape_for(TF32)
    a = np.zeros((s.m, s.k))
    b = np.zeros((s.k, s.n))
    a[0, 2], b[2, 0] = 0.5, 4.0
    _, state = execute_hmma(a, b, np.zeros((s.m, s.n)), fragment_map(TF32))
    assert state.destination(0, 0) == (0, 0)
    assert term_value(state, 0, 0, 2) == 2.0
    ea, eb = state.operands(0, 0, 2)
    assert (decode(ea), decode(eb)) == (0.5, 4.0)
    with pytest.raises(IndexError):
        term_value(state, 0, 0, 8)
    with pytest.raises(IndexError):
        term_value(state, 32, 0, 0)


@pytest.mark.parametrize("fmt", ALL, ids=str)
def test_random_ops_match_triple_loop(fmt):
    rng = np.random.default_rng(21)
    fm = fragment_map(fmt)
    for _ in range(200):
        a, b, c = tile(rng, fmt)
        d, _ = execute_hmma(a, b, c, fm)
        assert np.array_equal(d.view(np.uint32), oracles.triple_loop(a, b, c).view(np.uint32))


@pytest.mark.parametrize("fmt", ALL, ids=str)
def test_integer_inputs_exact(fmt):
    rng = np.random.default_rng(2)
    for _ in range(50):
        a, b, c = tile(rng, fmt, low=-8)
        d, _ = execute_hmma(a, b, c, fragment_map(fmt))
        exact = a.astype(np.int64) @ b.astype(np.int64) + c.astype(np.int64)
        assert np.array_equal(d.astype(np.int64), exact)


@pytest.mark.parametrize("fmt", ALL, ids=str)
def test_terms_are_exact_products(fmt):
    rng = np.random.default_rng(4)
    a, b, c = tile(rng, fmt)
    _, state = execute_hmma(a, b, c, fragment_map(fmt))
    for lane in range(0, 32, 3):
        for dreg in range(4):
            r, col = state.destination(lane, dreg)
            for k in range(state.fmap.shape.k):
                assert float(term_value(state, lane, dreg, k)) == float(a[r, k]) * float(b[k, col])


@pytest.mark.parametrize("fmt", ALL, ids=str)
def test_re_sum_reconstruction(fmt):
    rng = np.random.default_rng(9)
    a, b, c = tile(rng, fmt)
    _, state = execute_hmma(a, b, c, fragment_map(fmt))
    for lane in range(32):
        for dreg in range(4):
            acc = np.float32(state.c_frag[lane, dreg])
            for p in state.term_products[lane, dreg]:
                acc = np.float32(acc + p)
            assert acc.view(np.uint32) == np.float32(state.d_frag[lane, dreg]).view(np.uint32)


@pytest.mark.parametrize("fmt", ALL, ids=str)
def test_row_confinement(fmt):
    rng = np.random.default_rng(13)
    fm = fragment_map(fmt)
    a, b, c = tile(rng, fmt)
    d0, s0 = execute_hmma(a, b, c, fm)
    for r in (0, 5, 11):
        a2 = a.copy()
        a2[r] = quantize(rng.standard_normal(a.shape[1]) + 3.0, fmt)
        d1, s1 = execute_hmma(a2, b, c, fm)
        changed_rows = set(np.nonzero((d0 != d1).any(axis=1))[0])
        assert changed_rows == {r}
        changed_lanes = set(np.nonzero((s0.d_frag != s1.d_frag).any(axis=1))[0])
        assert {lane // 4 for lane in changed_lanes} == {r % 8}


def test_state_is_read_only():
    rng = np.random.default_rng(1)
    a, b, c = tile(rng, BF16)
    _, state = execute_hmma(a, b, c, fragment_map(BF16))
    with pytest.raises(ValueError):
        state.term_products[0, 0, 0] = 1.0


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        execute_hmma(np.zeros((16, 8)), np.zeros((8, 8)), np.zeros((16, 8)), fragment_map(BF16))
