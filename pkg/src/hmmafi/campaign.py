"""Fault-injection campaigns, outcome classification and summary statistics."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .faults import FaultSite, FaultSpec, InjectionOutcome, pin_site, sample_site, trial_rng
from .guards import GuardKind, GuardReport
from .formats import BF16, Encoded, get_format, replace_exponent_field
from .workloads import Workload, WorkloadSpec, build_workload

log = logging.getLogger(__name__)

THREADS_ENV = "MPGEMMFI_THREADS"
# smallest positive normal binary32; relative tolerances never shrink below it
DENORM_FLOOR = float(np.finfo(np.float32).tiny)


@dataclass(frozen=True)
class CampaignConfig:
    workload: WorkloadSpec
    fault: FaultSpec = FaultSpec()
    guard: GuardKind = GuardKind.NONE
    trials: int = 1000
    master_seed: int = 0
    sdc_tolerance: float = 0.0
    sweep: bool = False  # one fixed-position campaign per bit of the format

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.sdc_tolerance < 0:
            raise ValueError("sdc_tolerance must be >= 0")
        if self.guard is not GuardKind.NONE and self.workload.input_format != BF16:
            raise ValueError(f"guard {self.guard.value} is BF16-only; {self.workload.input_format.name} campaigns use 'none'")
        if self.sweep and self.fault.n_bits != 1:
            raise ValueError("bit-position sweeps flip exactly one bit")


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    format: str
    workload: str
    site: FaultSite
    outcome: str  # "SDC" | "Benign"
    injection: InjectionOutcome
    guard_kind: GuardKind = GuardKind.NONE
    guard_report: GuardReport | None = None
    metric_delta: float | None = None

    @property
    def diff(self) -> float:
        return self.injection.diff

    @property
    def detected(self) -> bool:
        return self.guard_report is not None and self.guard_report.detected

    def to_json(self) -> dict:
        inj = self.injection
        if self.guard_report is not None:
            g = self.guard_report
            guard = {"kind": self.guard_kind.value, "detected": g.detected, "exp_before": g.exponent_before,
                     "exp_after": g.exponent_after}
        else:
            exp = _exponent_of_hex(inj.faulty_encoding, self.format)
            guard = {"kind": self.guard_kind.value, "detected": False, "exp_before": exp, "exp_after": exp}
        return {
            "trial_id": self.trial_id,
            "format": self.format,
            "workload": self.workload,
            "site": self.site.to_json(),
            "orig_hex": inj.original_encoding,
            "fault_hex": inj.faulty_encoding,
            "re_sum": inj.re_sum,
            "re_sum_prime": inj.re_sum_prime,
            "diff": inj.diff,
            "guard": guard,
            "outcome": self.outcome,
            "metric_delta": self.metric_delta,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrialRecord":
        """Rebuild the fields the analysis needs (term values are not serialised)."""
        g = obj["guard"]
        kind = GuardKind.parse(g["kind"])
        report = None
        if kind is not GuardKind.NONE:
            fmt = get_format(obj["format"])
            corrected = replace_exponent_field(Encoded.from_hex(fmt, obj["fault_hex"]), int(g["exp_after"]))
            report = GuardReport(kind, bool(g["detected"]), corrected, int(g["exp_before"]), int(g["exp_after"]))
        inj = InjectionOutcome(float(obj["re_sum"]), math.nan, math.nan, float(obj["re_sum_prime"]),
                               float(obj["diff"]), obj["orig_hex"], obj["fault_hex"])
        md = obj.get("metric_delta")
        return cls(int(obj["trial_id"]), obj["format"], obj["workload"], FaultSite.from_json(obj["site"]),
                   obj["outcome"], inj, kind, report, None if md is None else float(md))


def _exponent_of_hex(text: str, fmt_name: str) -> int:
    return Encoded.from_hex(get_format(fmt_name), text).exponent


# -- classification -------------------------------------------------------------


def classify(golden, faulty, tolerance: float = 0.0) -> str:
    """'Benign' when every element matches, else 'SDC'.

    ``tolerance == 0`` compares binary32 bit patterns (any NaN matches any
    NaN in the same position); otherwise ``|f - g| <= tol * max(|g|, floor)``.
    """
    g = np.asarray(golden, dtype=np.float32)
    f = np.asarray(faulty, dtype=np.float32)
    if g.shape != f.shape:
        raise ValueError(f"shape mismatch: golden {g.shape} vs faulty {f.shape}")
    g_nan, f_nan = np.isnan(g), np.isnan(f)
    if not np.array_equal(g_nan, f_nan):
        return "SDC"
    if tolerance == 0:
        same = (g.view(np.uint32) == f.view(np.uint32)) | g_nan
        return "Benign" if bool(same.all()) else "SDC"
    gd = g[~g_nan].astype(np.float64)
    fd = f[~f_nan].astype(np.float64)
    inf_mismatch = (np.isinf(gd) | np.isinf(fd)) & (gd != fd)
    with np.errstate(invalid="ignore"):
        ok = np.abs(fd - gd) <= tolerance * np.maximum(np.abs(gd), DENORM_FLOOR)
    ok |= gd == fd
    return "Benign" if bool(ok.all()) and not inf_mismatch.any() else "SDC"


# -- running --------------------------------------------------------------------


def _thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
    return os.cpu_count() or 1


def trial_site(workload: Workload, cfg: CampaignConfig, trial_index: int, pinned: FaultSite | None = None) -> FaultSite:
    if pinned is None:
        return sample_site(workload.total_instructions, workload.shape, cfg.master_seed, trial_index, cfg.fault)
    # replay the sampler's draws so a pinned site gets the same bit pattern
    rng = trial_rng(cfg.master_seed, trial_index)
    rng.integers(workload.total_sites)
    bits = pinned.bit_positions or cfg.fault.draw_positions(rng, workload.input_format)
    return pin_site(replace(pinned, bit_positions=tuple(bits)), workload.shape, workload.total_instructions)


def run_trial(workload: Workload, cfg: CampaignConfig, trial_index: int, trial_id: int | None = None,
              site: FaultSite | None = None) -> TrialRecord:
    golden = workload.golden()
    site = site if site is not None else trial_site(workload, cfg, trial_index)
    res = workload.run(site, cfg.guard)
    hook = res.hook
    assert hook is not None and hook.outcome is not None
    delta = None
    if golden.metric is not None and res.metric is not None:
        delta = res.metric - golden.metric
    return TrialRecord(
        trial_id=trial_index if trial_id is None else trial_id,
        format=workload.input_format.name,
        workload=workload.spec.label(),
        site=site,
        outcome=classify(golden.outputs, res.outputs, cfg.sdc_tolerance),
        injection=hook.outcome,
        guard_kind=cfg.guard,
        guard_report=hook.report,
        metric_delta=delta,
    )


def _position_configs(cfg: CampaignConfig) -> list[CampaignConfig]:
    if not cfg.sweep:
        return [cfg]
    fmt = cfg.workload.input_format
    return [replace(cfg, fault=FaultSpec(1, p), sweep=False) for p in range(fmt.total_bits)]


def run_records(cfg: CampaignConfig, workload: Workload | None = None, threads: int | None = None) -> list[TrialRecord]:
    """All trial records of a campaign, ordered by trial_id.

    In a sweep, position ``p`` owns trial ids ``p * trials + i`` and reuses the
    site draw of trial ``i``, so every position sees the same sites.
    """
    workload = workload or build_workload(cfg.workload)
    workload.golden()
    jobs = [(sub, i, p * cfg.trials + i) for p, sub in enumerate(_position_configs(cfg)) for i in range(cfg.trials)]

    def work(job):
        sub, i, tid = job
        return run_trial(workload, sub, i, tid)

    threads = threads or _thread_count()
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(work, jobs))
    else:
        records = [work(j) for j in jobs]
    return sorted(records, key=lambda r: r.trial_id)


@dataclass(frozen=True)
class CampaignSummary:
    n_trials: int
    n_sdc: int
    sdc_rate: float
    zero_diff_fraction: float
    ecdf: tuple[float, ...]
    nonfinite_diffs: int
    per_bit_sdc: dict[int, float] | None = None
    mean_metric_delta: float | None = None
    guard_detection_rate: float | None = None
    formats: tuple[str, ...] = field(default=())

    @property
    def max_log10_diff(self) -> float:
        return self.ecdf[-1] if self.ecdf else -math.inf

    def to_json(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "n_sdc": self.n_sdc,
            "sdc_rate": self.sdc_rate,
            "zero_diff_fraction": self.zero_diff_fraction,
            "nonfinite_diffs": self.nonfinite_diffs,
            "ecdf": list(self.ecdf),
            "per_bit_sdc": None if self.per_bit_sdc is None else {str(k): v for k, v in self.per_bit_sdc.items()},
            "mean_metric_delta": self.mean_metric_delta,
            "guard_detection_rate": self.guard_detection_rate,
            "formats": list(self.formats),
        }

    def ecdf_rows(self) -> list[tuple[float, float]]:
        n = len(self.ecdf)
        return [(x, (i + 1) / n) for i, x in enumerate(self.ecdf)]

    def bitpos_rows(self) -> list[tuple[int, float]]:
        return sorted((self.per_bit_sdc or {}).items())


def summarize(records: Iterable[TrialRecord], per_bit: bool = False) -> CampaignSummary:
    recs = sorted(records, key=lambda r: r.trial_id)
    if not recs:
        raise ValueError("no records")
    n = len(recs)
    n_sdc = sum(r.outcome == "SDC" for r in recs)
    diffs = np.array([r.diff for r in recs], dtype=np.float64)
    finite = np.isfinite(diffs)
    nonzero = finite & (diffs != 0)
    ecdf = tuple(sorted(float(x) for x in np.log10(np.abs(diffs[nonzero]))))

    per_bit_sdc = None
    if per_bit:
        if any(len(r.site.bit_positions) != 1 for r in recs):
            raise ValueError("per-bit statistics need single-bit records")
        counts: dict[int, list[int]] = {}
        for r in recs:
            c = counts.setdefault(r.site.bit_positions[0], [0, 0])
            c[0] += r.outcome == "SDC"
            c[1] += 1
        per_bit_sdc = {b: s / t for b, (s, t) in sorted(counts.items())}

    deltas = [r.metric_delta for r in recs if r.metric_delta is not None]
    guarded = [r for r in recs if r.guard_kind is not GuardKind.NONE]
    return CampaignSummary(
        n_trials=n,
        n_sdc=n_sdc,
        sdc_rate=n_sdc / n,
        zero_diff_fraction=float(np.sum(diffs == 0)) / n,
        ecdf=ecdf,
        nonfinite_diffs=int(np.sum(~finite)),
        per_bit_sdc=per_bit_sdc,
        mean_metric_delta=float(np.mean(deltas)) if deltas else None,
        guard_detection_rate=(sum(r.detected for r in guarded) / len(guarded)) if guarded else None,
        formats=tuple(sorted({r.format for r in recs})),
    )


def run_campaign(cfg: CampaignConfig, workload: Workload | None = None,
                 threads: int | None = None) -> tuple[list[TrialRecord], CampaignSummary]:
    records = run_records(cfg, workload, threads)
    return records, summarize(records, per_bit=cfg.sweep)


@dataclass(frozen=True)
class GuardEfficacy:
    baseline_loss: float
    losses: dict[GuardKind, float]
    reductions: dict[GuardKind, float]
    records: dict[GuardKind, list[TrialRecord]] = field(repr=False)


def guard_efficacy(cfg_base: CampaignConfig, guards: Sequence[GuardKind],
                   workload: Workload | None = None, threads: int | None = None) -> GuardEfficacy:
    """Mean accuracy loss per arm, paired by trial id, and each guard's relative reduction."""
    workload = workload or build_workload(cfg_base.workload)
    if workload.golden().metric is None:
        raise ValueError("guard efficacy needs a workload with an accuracy metric")
    arms = [GuardKind.NONE] + [g for g in guards if g is not GuardKind.NONE]
    records = {g: run_records(replace(cfg_base, guard=g), workload, threads) for g in arms}

    def mean_loss(recs: list[TrialRecord]) -> float:
        return float(np.mean([-r.metric_delta for r in recs]))

    base = mean_loss(records[GuardKind.NONE])
    losses = {g: mean_loss(records[g]) for g in arms[1:]}
    reductions = {g: ((base - loss) / base if base > 0 else 0.0) for g, loss in losses.items()}
    return GuardEfficacy(base, losses, reductions, records)


# -- files --------------------------------------------------------------------


def dumps_record(record: TrialRecord) -> str:
    return json.dumps(record.to_json(), allow_nan=True)


def write_records(path: str | Path, records: Iterable[TrialRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in sorted(records, key=lambda r: r.trial_id):
            fh.write(dumps_record(r) + "\n")


def read_records(path: str | Path) -> list[TrialRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(TrialRecord.from_json(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from exc
    return out


def write_summary(path: str | Path, summary: CampaignSummary) -> None:
    Path(path).write_text(json.dumps(summary.to_json(), indent=2) + "\n", encoding="utf-8")


def table_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()
