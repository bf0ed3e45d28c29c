"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the NumPy versions.
Set ``HMMAFI_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("HMMAFI_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

encode_bits = _impl.encode_bits
decode_bits = _impl.decode_bits
gemm_f32 = _impl.gemm_f32
accumulate_f32 = _impl.accumulate_f32

__all__ = ["BACKEND", "encode_bits", "decode_bits", "gemm_f32", "accumulate_f32"]
