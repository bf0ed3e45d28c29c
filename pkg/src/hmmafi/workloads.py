"""Deterministic injection targets: random GEMMs and a small MLP classifier.

Every matmul goes through :func:`gemm.run_gemm`. Instruction indices are
global across a workload's GEMMs, in execution order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .faults import FaultSite, InjectionHook
from .formats import FpFormat, get_format
from .gemm import GemmProblem, InstructionStream, run_gemm
from .guards import GuardKind
from .hmma import HmmaShape, shape_for

DISTRIBUTIONS = ("uniform", "normal", "integer")


@dataclass(frozen=True)
class RandomGemmSpec:
    m: int = 32
    n: int = 16
    k: int = 32
    distribution: str = "uniform"
    input_format: FpFormat = get_format("BF16")
    seed: int = 0

    kind = "random_gemm"

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_format", get_format(self.input_format))
        if min(self.m, self.n, self.k) < 1:
            raise ValueError(f"GEMM extents must be positive, got {self.m}x{self.n}x{self.k}")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {DISTRIBUTIONS}, got {self.distribution!r}")

    def label(self) -> str:
        return f"random_gemm:{self.m}x{self.n}x{self.k}:{self.distribution}:seed={self.seed}"


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple[int, ...] = (64, 128, 64, 10)
    weight_seed: int = 42
    dataset_size: int = 512
    input_format: FpFormat = get_format("BF16")
    seed: int = 0

    kind = "mlp"

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_format", get_format(self.input_format))
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ValueError(f"layer_dims needs at least two positive entries, got {self.layer_dims}")
        if self.dataset_size < 1:
            raise ValueError("dataset_size must be positive")

    def label(self) -> str:
        dims = "-".join(str(d) for d in self.layer_dims)
        return f"mlp:{dims}:w{self.weight_seed}:n{self.dataset_size}:seed={self.seed}"


WorkloadSpec = RandomGemmSpec | MlpSpec


@dataclass(frozen=True)
class GoldenResult:
    outputs: np.ndarray
    predictions: np.ndarray | None = None
    metric: float | None = None


@dataclass
class RunResult:
    outputs: np.ndarray
    predictions: np.ndarray | None = None
    metric: float | None = None
    hook: InjectionHook | None = None


def _draw(rng: np.random.Generator, shape, distribution: str) -> np.ndarray:
    if distribution == "uniform":
        return rng.uniform(-1.0, 1.0, shape)
    if distribution == "normal":
        return rng.standard_normal(shape)
    return rng.integers(-8, 9, shape).astype(np.float64)


class Workload:
    """A chain of GEMMs with a cached golden execution."""

    spec: WorkloadSpec

    def __init__(self, spec: WorkloadSpec):
        self.spec = spec
        self._golden: GoldenResult | None = None
        self._golden_inputs: list[np.ndarray] = []

    @property
    def input_format(self) -> FpFormat:
        return self.spec.input_format

    @property
    def shape(self) -> HmmaShape:
        return shape_for(self.input_format)

    # subclasses provide the per-GEMM streams and the layer semantics
    def streams(self) -> list[InstructionStream]:
        raise NotImplementedError

    @property
    def instruction_offsets(self) -> list[int]:
        offsets, total = [], 0
        for s in self.streams():
            offsets.append(total)
            total += s.total_count
        return offsets

    @property
    def total_instructions(self) -> int:
        return sum(s.total_count for s in self.streams())

    @property
    def total_sites(self) -> int:
        from .faults import sites_per_instruction

        return self.total_instructions * sites_per_instruction(self.shape)

    def locate(self, instr_index: int) -> tuple[int, int]:
        """(gemm index, local instruction index) of a global instruction."""
        if not 0 <= instr_index < self.total_instructions:
            raise IndexError(f"instr {instr_index} outside [0, {self.total_instructions})")
        for layer, (off, s) in enumerate(zip(self.instruction_offsets, self.streams())):
            if instr_index < off + s.total_count:
                return layer, instr_index - off
        raise AssertionError("unreachable")

    def golden(self) -> GoldenResult:
        if self._golden is None:
            self._golden = run_golden(self)
        return self._golden

    def run(self, site: FaultSite | None = None, guard: GuardKind = GuardKind.NONE) -> RunResult:
        raise NotImplementedError


class RandomGemmWorkload(Workload):
    spec: RandomGemmSpec

    def __init__(self, spec: RandomGemmSpec):
        super().__init__(spec)
        rng = np.random.default_rng(spec.seed)
        a = _draw(rng, (spec.m, spec.k), spec.distribution)
        b = _draw(rng, (spec.k, spec.n), spec.distribution)
        c = _draw(rng, (spec.m, spec.n), spec.distribution).astype(np.float32)
        self.problem = GemmProblem(a, b, c, spec.input_format)

    @property
    def problems(self) -> list[GemmProblem]:
        return [self.problem]

    def streams(self) -> list[InstructionStream]:
        return [InstructionStream.of(self.problem)]

    def run(self, site: FaultSite | None = None, guard: GuardKind = GuardKind.NONE) -> RunResult:
        hook = None if site is None else InjectionHook(self.locate(site.instr_index)[1], site, guard)
        return RunResult(run_gemm(self.problem, hook), hook=hook)


def _relu(x: np.ndarray) -> np.ndarray:
    # NaN stays NaN so faults remain visible downstream
    return np.where(x < 0, np.float32(0), x).astype(np.float32)


def argmax_first(logits: np.ndarray) -> np.ndarray:
    """Row argmax, lowest index on ties; a NaN entry wins its row (first NaN)."""
    return np.argmax(logits, axis=1)


class MlpWorkload(Workload):
    spec: MlpSpec

    def __init__(self, spec: MlpSpec, weights: Sequence[np.ndarray] | None = None):
        super().__init__(spec)
        dims = spec.layer_dims
        if weights is None:
            wrng = np.random.default_rng(spec.weight_seed)
            weights = [wrng.normal(0.0, 1.0 / np.sqrt(dims[i]), (dims[i], dims[i + 1])) for i in range(len(dims) - 1)]
        weights = [np.asarray(w, dtype=np.float64) for w in weights]
        if len(weights) != len(dims) - 1 or any(w.shape != (dims[i], dims[i + 1]) for i, w in enumerate(weights)):
            raise ValueError(f"weights {[w.shape for w in weights]} do not match layer_dims {dims}")
        self.weights = weights
        drng = np.random.default_rng(spec.seed)
        self.inputs = drng.standard_normal((spec.dataset_size, dims[0]))
        self.labels = argmax_first(self.teacher_logits())

    def teacher_logits(self) -> np.ndarray:
        """binary64 forward pass on the unrounded inputs and weights."""
        h = self.inputs
        for i, w in enumerate(self.weights):
            h = h @ w
            if i < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
        return h

    def _problem(self, layer: int, activations: np.ndarray) -> GemmProblem:
        w = self.weights[layer]
        return GemmProblem(activations, w, np.zeros((activations.shape[0], w.shape[1]), np.float32),
                           self.input_format)

    def streams(self) -> list[InstructionStream]:
        s = self.shape
        rows = -(-self.spec.dataset_size // s.m)
        dims = self.spec.layer_dims
        return [InstructionStream(rows, -(-dims[i + 1] // s.n), -(-dims[i] // s.k)) for i in range(len(dims) - 1)]

    def _forward(self, start: int, activations: np.ndarray, hook: InjectionHook | None,
                 record: list[np.ndarray] | None = None) -> np.ndarray:
        h = activations
        for layer in range(start, len(self.weights)):
            if record is not None:
                record.append(h)
            out = run_gemm(self._problem(layer, h), hook if layer == start else None)
            h = _relu(out) if layer < len(self.weights) - 1 else out
        return h

    def accuracy(self, logits: np.ndarray) -> float:
        return float(np.mean(argmax_first(logits) == self.labels))

    def golden_inputs(self) -> list[np.ndarray]:
        self.golden()
        return self._golden_inputs

    def run(self, site: FaultSite | None = None, guard: GuardKind = GuardKind.NONE) -> RunResult:
        if site is None:
            record: list[np.ndarray] = []
            logits = self._forward(0, self.inputs, None, record)
            self._golden_inputs = record
            hook = None
        else:
            layer, local = self.locate(site.instr_index)
            hook = InjectionHook(local, site, guard)
            # upstream layers are fault-free and deterministic: reuse their golden outputs
            logits = self._forward(layer, self.golden_inputs()[layer], hook)
        return RunResult(logits, argmax_first(logits), self.accuracy(logits), hook)


def build_workload(spec: WorkloadSpec) -> Workload:
    if isinstance(spec, RandomGemmSpec):
        return RandomGemmWorkload(spec)
    if isinstance(spec, MlpSpec):
        return MlpWorkload(spec)
    raise TypeError(f"unknown workload spec {type(spec).__name__}")


def run_golden(workload: Workload) -> GoldenResult:
    res = workload.run(None)
    return GoldenResult(res.outputs, res.predictions, res.metric)


# -- weight files --------------------------------------------------------------

_MAGIC = b"MPWL"
_VERSION = 1


def save_weights(path: str | Path, layer_dims: Sequence[int], weights: Sequence[np.ndarray]) -> None:
    """Header (magic, version, n_dims, dims as little-endian uint32) then each
    layer column-major as little-endian binary32."""
    dims = [int(d) for d in layer_dims]
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(dims)), struct.pack(f"<{len(dims)}I", *dims)]
    for i, w in enumerate(weights):
        w = np.asarray(w, dtype=np.float32)
        if w.shape != (dims[i], dims[i + 1]):
            raise ValueError(f"layer {i} weights {w.shape} do not match dims {dims}")
        parts.append(w.T.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path: str | Path) -> tuple[tuple[int, ...], list[np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a weight file (bad magic)")
    version, n = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    dims = struct.unpack_from(f"<{n}I", data, 12)
    offset = 12 + 4 * n
    weights = []
    for i in range(n - 1):
        count = dims[i] * dims[i + 1]
        flat = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        weights.append(flat.reshape(dims[i + 1], dims[i]).T.astype(np.float32))
        offset += 4 * count
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return tuple(dims), weights
