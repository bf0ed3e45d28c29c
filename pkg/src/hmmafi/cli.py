"""``hmmafi`` command line.

Exit codes: 0 success, 1 a self-test failed, 2 usage or configuration error.
Machine-readable output goes to stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import kernels
from .campaign import (
    TrialRecord,
    dumps_record,
    guard_efficacy,
    read_records,
    run_campaign,
    run_trial,
    summarize,
    table_csv,
    trial_site,
    write_records,
    write_summary,
)
from .config import ConfigError, Settings, build_settings, read_config_file
from .faults import FaultSite
from .formats import get_format
from .guards import GuardKind
from .hmma import build_fragment_map, shape_for, with_maps

log = logging.getLogger("hmmafi")

REPORTS = ("zerodiff", "ecdf", "bitpos", "guard")


class UsageError(Exception):
    pass


# flag dest -> (section, key)
_FLAG_KEYS = {
    "workload": ("workload", "kind"),
    "format": ("workload", "format"),
    "m": ("workload", "m"),
    "n": ("workload", "n"),
    "k": ("workload", "k"),
    "distribution": ("workload", "distribution"),
    "layer_dims": ("workload", "layer_dims"),
    "weight_seed": ("workload", "weight_seed"),
    "dataset_size": ("workload", "dataset_size"),
    "weights": ("workload", "weights"),
    "workload_seed": ("workload", "seed"),
    "bits": ("fault", "bits"),
    "position": ("fault", "position"),
    "sweep": ("fault", "sweep"),
    "guard": ("guard", "kind"),
    "trials": ("campaign", "trials"),
    "seed": ("campaign", "master_seed"),
    "tolerance": ("campaign", "sdc_tolerance"),
    "out": ("campaign", "output_dir"),
}


def _add_setting_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("workload")
    g.add_argument("--workload", choices=("random_gemm", "mlp"))
    g.add_argument("--format", type=str.lower, choices=("fp16", "bf16", "tf32"))
    g.add_argument("--m", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--distribution", choices=("uniform", "normal", "integer"))
    g.add_argument("--layer-dims", help="comma-separated, e.g. 64,128,64,10")
    g.add_argument("--weight-seed", type=int)
    g.add_argument("--dataset-size", type=int)
    g.add_argument("--weights", help="MLP weight file")
    g.add_argument("--workload-seed", type=int)
    f = p.add_argument_group("fault")
    f.add_argument("--bits", type=int, choices=(1, 2, 4))
    f.add_argument("--position", type=int, help="fixed bit position (single-bit faults)")
    f.add_argument("--guard", choices=[k.value for k in GuardKind])
    f.add_argument("--seed", type=int, help="master seed")
    f.add_argument("--tolerance", type=float, help="relative SDC tolerance (0 = bit-exact)")


def _settings(args: argparse.Namespace) -> Settings:
    raw: dict[str, dict] = {}
    if getattr(args, "config", None):
        raw = read_config_file(args.config)
    for dest, (section, key) in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None and value is not False:
            raw.setdefault(section, {})[key] = value
    return build_settings(raw)


def _parse_site(text: str) -> FaultSite:
    fields: dict[str, int] = {}
    for part in text.split(","):
        name, sep, value = part.partition("=")
        name = name.strip()
        if not sep or name not in ("instr", "lane", "dreg", "term"):
            raise UsageError(f"--site: expected instr=..,lane=..,dreg=..,term=.., got {part!r}")
        try:
            fields[name] = int(value)
        except ValueError:
            raise UsageError(f"--site: {name} must be an integer, got {value!r}") from None
    return FaultSite(fields.get("instr", 0), fields.get("lane", 0), fields.get("dreg", 0), fields.get("term", 0))


# -- commands -----------------------------------------------------------------


def cmd_campaign(args: argparse.Namespace) -> int:
    settings = _settings(args)
    workload = settings.build_workload()
    cfg = settings.config
    log.info("campaign %s %s: %d trials%s, guard %s, backend %s", cfg.workload.input_format.name,
             cfg.workload.label(), cfg.trials, " per bit" if cfg.sweep else "", cfg.guard.value, kernels.BACKEND)
    records, summary = run_campaign(cfg, workload)
    out = settings.output_dir
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "records.jsonl", out / "summary.json"]
    write_records(paths[0], records)
    write_summary(paths[1], summary)
    if args.csv:
        for name in ("zerodiff", "ecdf") + (("bitpos",) if cfg.sweep else ()):
            path = out / f"{name}.csv"
            path.write_text(_report(records, name), encoding="utf-8")
            paths.append(path)
    for p in paths:
        print(p)
    return 0


def cmd_inject(args: argparse.Namespace) -> int:
    settings = _settings(args)
    if settings.config.sweep:
        raise UsageError("inject runs a single trial; --sweep does not apply")
    cfg = replace(settings.config, trials=1)
    workload = settings.build_workload()
    pinned = None
    if args.site:
        try:
            pinned = trial_site(workload, cfg, 0, _parse_site(args.site))
        except IndexError as exc:
            raise UsageError(f"--site: {exc}") from None
    record = run_trial(workload, cfg, 0, site=pinned)
    print(dumps_record(record))
    return 0


def _single_format(records: list[TrialRecord]) -> str:
    formats = sorted({r.format for r in records})
    if len(formats) > 1:
        raise UsageError(f"records mix formats {formats}; analyze one format at a time")
    return formats[0]


def _report(records: list[TrialRecord], kind: str) -> str:
    if not records:
        raise UsageError("no records")
    fmt_name = _single_format(records)
    if kind == "zerodiff":
        s = summarize(records)
        zeros = round(s.zero_diff_fraction * s.n_trials)
        return table_csv(("format", "n_trials", "zero_diff", "zero_diff_pct"),
                         [(fmt_name, s.n_trials, zeros, 100.0 * s.zero_diff_fraction)])
    if kind == "ecdf":
        s = summarize(records)
        return table_csv(("log10_abs_diff", "cumulative"), s.ecdf_rows())
    if kind == "bitpos":
        if any(len(r.site.bit_positions) != 1 for r in records):
            raise UsageError("bitpos needs single-bit fixed-position records (campaign --sweep or --position)")
        s = summarize(records, per_bit=True)
        fmt = get_format(fmt_name)
        trials = {}
        for r in records:
            trials[r.site.bit_positions[0]] = trials.get(r.site.bit_positions[0], 0) + 1
        return table_csv(("bit", "role", "sdc_rate", "trials"),
                         [(b, fmt.bit_role(b), rate, trials[b]) for b, rate in s.bitpos_rows()])
    if kind == "guard":
        groups: dict[str, list[TrialRecord]] = {}
        for r in records:
            groups.setdefault(r.guard_kind.value, []).append(r)
        rows = []
        for name, recs in sorted(groups.items()):
            s = summarize(recs)
            rows.append({"guard": name, "n_trials": s.n_trials, "sdc_rate": s.sdc_rate,
                         "detection_rate": s.guard_detection_rate, "mean_metric_delta": s.mean_metric_delta})
        return json.dumps({"format": fmt_name, "arms": rows}, indent=2) + "\n"
    raise UsageError(f"unknown report {kind!r}")


def cmd_analyze(args: argparse.Namespace) -> int:
    try:
        records = read_records(args.records)
    except OSError as exc:
        raise UsageError(f"{args.records}: {exc.strerror}") from None
    text = _report(records, args.report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(args.out)
    else:
        sys.stdout.write(text)
    return 0


def cmd_guard_eval(args: argparse.Namespace) -> int:
    settings = _settings(args)
    cfg = settings.config
    guards = [GuardKind.parse(g) for g in args.guards.split(",")] if args.guards else \
        [GuardKind.BOUND_CHECK, GuardKind.RANGE_CHECK_MAX, GuardKind.RANGE_CHECK_FLIP]
    if cfg.workload.input_format.name != "BF16":
        raise UsageError("guards are BF16-only")
    eff = guard_efficacy(replace(cfg, guard=GuardKind.NONE), guards, settings.build_workload())
    out = {
        "trials": cfg.trials,
        "n_bits": cfg.fault.n_bits,
        "baseline_loss": eff.baseline_loss,
        "guards": [
            {"guard": g.value, "mean_loss": eff.losses[g], "reduction": eff.reductions[g],
             "detection_rate": summarize(eff.records[g]).guard_detection_rate}
            for g in eff.losses
        ],
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    from .verify import run_suites

    factory = None
    if args.corrupt_map:
        def factory(fmt):
            good = build_fragment_map(shape_for(fmt))
            a = good.a_map.copy()
            a[1, 0] = a[0, 0]  # duplicate slot: no longer a bijection
            return with_maps(good, a_map=a)

    formats = [args.format] if args.format else None
    results = run_suites(formats, factory, hmma_ops=args.ops)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.format:5s} {r.name:16s} {r.detail}")
    return 0 if all(r.passed for r in results) else 1


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hmmafi", description="Mixed-precision GEMM fault-injection simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("campaign", help="run a fault-injection campaign")
    c.add_argument("--config", help="INI config file; flags override its values")
    _add_setting_flags(c)
    c.add_argument("--trials", type=int)
    c.add_argument("--sweep", action="store_true", help="one fixed-position campaign per bit")
    c.add_argument("--out", help="output directory")
    c.add_argument("--csv", action="store_true", help="also write zerodiff/ecdf(/bitpos) CSV tables")
    c.set_defaults(func=cmd_campaign)

    i = sub.add_parser("inject", help="run one injection and print its record")
    i.add_argument("--config")
    _add_setting_flags(i)
    i.add_argument("--site", help="pin the site: instr=I,lane=L,dreg=R,term=T")
    i.set_defaults(func=cmd_inject)

    a = sub.add_parser("analyze", help="tables from a records.jsonl file")
    a.add_argument("records")
    a.add_argument("--report", choices=REPORTS, required=True)
    a.add_argument("--out", help="write to this file instead of stdout")
    a.set_defaults(func=cmd_analyze)

    g = sub.add_parser("guard-eval", help="paired guard-efficacy comparison on an MLP workload")
    g.add_argument("--config")
    _add_setting_flags(g)
    g.add_argument("--trials", type=int)
    g.add_argument("--guards", help="comma-separated guard kinds (default: all three)")
    g.set_defaults(func=cmd_guard_eval)

    v = sub.add_parser("verify", help="run the built-in invariant suites")
    v.add_argument("--format", type=str.lower, choices=("fp16", "bf16", "tf32"))
    v.add_argument("--ops", type=int, default=100, help="random HMMA ops per format")
    v.add_argument("--corrupt-map", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"hmmafi {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"hmmafi {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
