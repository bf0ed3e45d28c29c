"""Campaign configuration files.

An INI-style document with four sections; every key is optional and
lowercase snake_case. Unknown sections or keys are errors.

    [workload]
    kind = random_gemm        ; or mlp
    format = bf16             ; fp16 | bf16 | tf32
    m = 32                    ; random_gemm extents
    n = 16
    k = 32
    distribution = uniform    ; uniform | normal | integer
    layer_dims = 64,128,64,10 ; mlp only
    weight_seed = 42
    dataset_size = 512
    weights = w.mpwl          ; optional weight file for mlp
    seed = 0

    [fault]
    bits = 1                  ; 1 | 2 | 4
    position = 14             ; optional fixed bit (bits must be 1)
    sweep = false             ; one campaign per bit position

    [guard]
    kind = none               ; none | bound_check | range_check_max | range_check_flip

    [campaign]
    trials = 1000
    master_seed = 0
    sdc_tolerance = 0
    output_dir = results
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .campaign import CampaignConfig
from .faults import ALLOWED_BITS, FaultSpec
from .formats import get_format
from .guards import GuardKind
from .workloads import MlpSpec, MlpWorkload, RandomGemmSpec, Workload, build_workload, load_weights

SCHEMA: dict[str, dict[str, type]] = {
    "workload": {"kind": str, "format": str, "m": int, "n": int, "k": int, "distribution": str,
                 "layer_dims": str, "weight_seed": int, "dataset_size": int, "weights": str, "seed": int},
    "fault": {"bits": int, "position": int, "sweep": bool},
    "guard": {"kind": str},
    "campaign": {"trials": int, "master_seed": int, "sdc_tolerance": float, "output_dir": str},
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class Settings:
    config: CampaignConfig
    output_dir: Path
    weights: Path | None = None

    def build_workload(self) -> Workload:
        spec = self.config.workload
        if self.weights is not None:
            if not isinstance(spec, MlpSpec):
                raise ConfigError("workload.weights", "weight files only apply to kind = mlp")
            dims, weights = load_weights(self.weights)
            if tuple(dims) != spec.layer_dims:
                raise ConfigError("workload.weights", f"file has layer_dims {dims}, config has {spec.layer_dims}")
            return MlpWorkload(spec, weights)
        return build_workload(spec)


def _coerce(section: str, key: str, raw: Any) -> Any:
    kind = SCHEMA[section][key]
    if not isinstance(raw, str):
        return raw
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{section}.{key}", f"expected {kind.__name__}, got {raw!r}") from None


def read_config_file(path: str | Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc)) from exc
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(section, f"unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(key, f"unknown key in [{section}]: {key!r}")
            out.setdefault(section, {})[key] = value
    return out


def build_settings(raw: dict[str, dict[str, Any]]) -> Settings:
    """Validate a {section: {key: value}} mapping (strings or typed values)."""
    for section, keys in raw.items():
        if section not in SCHEMA:
            raise ConfigError(section, f"unknown section [{section}]")
        for key in keys:
            if key not in SCHEMA[section]:
                raise ConfigError(key, f"unknown key in [{section}]: {key!r}")
    get = lambda sec, key, default: _coerce(sec, key, raw.get(sec, {}).get(key, default))  # noqa: E731

    try:
        fmt = get_format(get("workload", "format", "bf16"))
    except ValueError as exc:
        raise ConfigError("workload.format", str(exc)) from None
    kind = get("workload", "kind", "random_gemm")
    seed = get("workload", "seed", 0)
    try:
        if kind == "random_gemm":
            spec = RandomGemmSpec(get("workload", "m", 32), get("workload", "n", 16), get("workload", "k", 32),
                                  get("workload", "distribution", "uniform"), fmt, seed)
        elif kind == "mlp":
            dims_raw = get("workload", "layer_dims", "64,128,64,10")
            try:
                dims = tuple(int(x) for x in str(dims_raw).split(","))
            except ValueError:
                raise ConfigError("workload.layer_dims", f"expected comma-separated integers, got {dims_raw!r}") from None
            spec = MlpSpec(dims, get("workload", "weight_seed", 42), get("workload", "dataset_size", 512), fmt, seed)
        else:
            raise ConfigError("workload.kind", f"expected random_gemm or mlp, got {kind!r}")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("workload", str(exc)) from None

    bits = get("fault", "bits", 1)
    if bits not in ALLOWED_BITS:
        raise ConfigError("fault.bits", f"must be one of {ALLOWED_BITS}, got {bits}")
    position = raw.get("fault", {}).get("position")
    position = None if position is None else _coerce("fault", "position", position)
    if position is not None and not 0 <= position < fmt.total_bits:
        raise ConfigError("fault.position", f"bit {position} outside {fmt.name} ({fmt.total_bits} bits)")
    try:
        fault = FaultSpec(bits, position)
    except ValueError as exc:
        raise ConfigError("fault.position", str(exc)) from None

    try:
        guard = GuardKind.parse(get("guard", "kind", "none"))
    except ValueError as exc:
        raise ConfigError("guard.kind", str(exc)) from None

    try:
        cfg = CampaignConfig(spec, fault, guard, get("campaign", "trials", 1000), get("campaign", "master_seed", 0),
                             get("campaign", "sdc_tolerance", 0.0), get("fault", "sweep", False))
    except ValueError as exc:
        msg = str(exc)
        key = "guard.kind" if "guard" in msg else "fault.sweep" if "sweep" in msg else "campaign"
        raise ConfigError(key, msg) from None

    weights = raw.get("workload", {}).get("weights")
    return Settings(cfg, Path(get("campaign", "output_dir", "results")), Path(weights) if weights else None)
