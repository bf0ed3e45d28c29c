from __future__ import annotations

import numpy as np
import pytest

import oracles
from hmmafi.formats import BF16, FP16, TF32
from hmmafi.gemm import GemmProblem, InstructionStream, enumerate_sites, load_matrix, run_gemm, save_matrix


class Identity:
    def __init__(self, instr_index):
        self.instr_index = instr_index
        self.calls = 0

    def __call__(self, state):
        self.calls += 1
        return None


def random_problem(m, n, k, fmt, seed=0):
    rng = np.random.default_rng(seed)
    return GemmProblem(rng.standard_normal((m, k)), rng.standard_normal((k, n)),
                       rng.standard_normal((m, n)).astype(np.float32), fmt)


def test_identity_a_tf32():
    b = np.random.default_rng(0).standard_normal((8, 8))
    p = GemmProblem.create(np.eye(16, 8), b, input_format=TF32)
    d = run_gemm(p)
    assert d.shape == (16, 8)
    assert np.array_equal(d[:8], p.b)
    assert (d[8:] == 0).all()


def test_bf16_32x16x32_matches_triple_loop():
    p = random_problem(32, 16, 32, BF16)
    assert np.array_equal(run_gemm(p).view(np.uint32), oracles.triple_loop(p.a, p.b, p.c).view(np.uint32))


@pytest.mark.parametrize("fmt", [FP16, BF16, TF32], ids=str)
def test_padding_neutral(fmt):
    p = random_problem(21, 13, 37, fmt, seed=5)
    assert p.padded_extents[0] % 16 == 0 and p.padded_extents[1] % 8 == 0
    d = run_gemm(p)
    assert d.shape == (21, 13)
    assert np.array_equal(d.view(np.uint32), oracles.triple_loop(p.a, p.b, p.c).view(np.uint32))
    full = run_gemm(p, crop=False)
    assert np.array_equal(full[:21, :13], d)
    assert (full[21:] == 0).all() and (full[:, 13:] == 0).all()


def test_operands_are_quantized():
    p = GemmProblem.create(np.full((16, 16), 1.0 + 2.0**-10), np.ones((16, 8)), input_format=BF16)
    assert (p.a == 1.0).all()
    assert p.c.dtype == np.float32 and (p.c == 0).all()


def test_instruction_count_and_sites():
    p = GemmProblem.create(np.zeros((64, 64)), np.zeros((64, 32)), input_format=FP16)
    stream = InstructionStream.of(p)
    assert stream.total_count == 64
    assert enumerate_sites(p) == 131072
    assert enumerate_sites(GemmProblem.create(np.zeros((16, 8)), np.zeros((8, 8)), input_format=TF32)) == 1024
    assert enumerate_sites(GemmProblem.create(np.zeros((16, 16)), np.zeros((16, 8)), input_format=BF16)) == 2048


def test_tile_order():
    stream = InstructionStream(2, 3, 4)
    order = list(stream)
    assert order == [stream.tile(i) for i in range(stream.total_count)]
    assert order[:5] == [(0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 0, 3), (1, 0, 0)]
    assert order[8] == (0, 1, 0)
    with pytest.raises(IndexError):
        stream.tile(24)


@pytest.mark.parametrize("instr", [0, 5, 17, 26])
def test_identity_hook_is_neutral(instr):
    p = random_problem(40, 24, 48, BF16, seed=3)
    hook = Identity(instr)
    assert np.array_equal(run_gemm(p, hook).view(np.uint32), run_gemm(p).view(np.uint32))
    assert hook.calls == 1


def test_hook_changes_only_its_element():
    p = random_problem(32, 16, 32, BF16, seed=8)
    golden = run_gemm(p)

    class Poke:
        instr_index = InstructionStream.of(p).total_count - 1  # last k step of the last block

        def __call__(self, state):
            return [(6, 2, 1e6)]

    d = run_gemm(p, Poke())
    diff = np.argwhere(d != golden)
    assert len(diff) == 1
    tm, tn, _ = InstructionStream.of(p).tile(Poke.instr_index)
    r, c = diff[0]
    assert r // 16 == tm and c // 8 == tn


def test_deterministic():
    p = random_problem(33, 17, 40, TF32, seed=2)
    assert np.array_equal(run_gemm(p).view(np.uint32), run_gemm(p).view(np.uint32))


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
def test_matrix_io(tmp_path, suffix):
    m = np.random.default_rng(0).standard_normal((5, 3)).astype(np.float32)
    path = tmp_path / f"m{suffix}"
    save_matrix(path, m)
    back = load_matrix(path, (5, 3))
    assert np.array_equal(back, m)


def test_matrix_io_layout(tmp_path):
    m = np.arange(6, dtype=np.float32).reshape(2, 3)
    save_matrix(tmp_path / "m.bin", m)
    assert np.frombuffer((tmp_path / "m.bin").read_bytes(), "<f4").tolist() == [0, 3, 1, 4, 2, 5]
    save_matrix(tmp_path / "m.csv", m)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "0.0,3.0"
    with pytest.raises(ValueError):
        load_matrix(tmp_path / "m.bin")
    with pytest.raises(ValueError):
        save_matrix(tmp_path / "m.txt", m)
