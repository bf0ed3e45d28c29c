"""Bit-level simulator of tensor-core mixed-precision GEMM with fault injection."""

from __future__ import annotations

from .formats import BF16, FORMATS, FP16, TF32, Encoded, FpFormat, decode, encode, flip_bits, get_format
from .guards import GuardKind, GuardReport, apply_guard
from .hmma import HmmaShape, WarpState, execute_hmma, fragment_map, shape_for
from .gemm import GemmProblem, InstructionStream, run_gemm
from .faults import FaultSite, FaultSpec, inject, sample_site
from .workloads import MlpSpec, MlpWorkload, RandomGemmSpec, RandomGemmWorkload, build_workload
from .campaign import CampaignConfig, CampaignSummary, TrialRecord, classify, run_campaign, summarize
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BF16", "FORMATS", "FP16", "TF32", "Encoded", "FpFormat", "decode", "encode", "flip_bits",
    "get_format", "GuardKind", "GuardReport", "apply_guard", "HmmaShape", "WarpState", "execute_hmma",
    "fragment_map", "shape_for", "GemmProblem", "InstructionStream", "run_gemm", "FaultSite", "FaultSpec",
    "inject", "sample_site", "MlpSpec", "MlpWorkload", "RandomGemmSpec", "RandomGemmWorkload",
    "build_workload", "CampaignConfig", "CampaignSummary", "TrialRecord", "classify", "run_campaign",
    "summarize",
]
