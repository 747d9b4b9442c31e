"""Command-line entry point: ``samplemiou <command> ...``."""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

from . import io as mio
from .decision import DecisionRule, Statistic, threshold_sweep
from .loss import DEFAULT_EPS, grad_check
from .synth import (
    DetectorProfile,
    PlacementError,
    SynthConfig,
    dilution_scenario,
    gen_dataset,
    simulate_predictions,
)


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_global(p, default):
    p.add_argument("--threads", type=int, default=default, metavar="N",
                   help="worker threads (default: all cores)")
    p.add_argument("--quiet", action="store_true", default=default)


def _add_rule(p):
    p.add_argument("--phi", default="positive_pixel_count",
                   choices=[s.value for s in Statistic], help="sample-level statistic")
    p.add_argument("--tau", type=float, default=None,
                   help="decision threshold (default 1 for counts/areas, 0.5 otherwise)")
    p.add_argument("--theta", type=float, default=0.5, help="binarization threshold for 16-bit maps")


def _add_layout(p):
    p.add_argument("--gt", type=Path, help="directory of ground-truth masks")
    p.add_argument("--pred", type=Path, help="directory of predicted masks")
    p.add_argument("--manifest", type=Path, help="CSV with id,gt_path,pred_path (replaces --gt/--pred)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="samplemiou", description="Sample-centric defect segmentation metrics.")
    _add_global(parser, None)
    parser.set_defaults(quiet=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("evaluate", help="score a directory of predictions")
    _add_layout(p)
    _add_rule(p)
    p.add_argument("--weights", type=Path, help="per-sample weights (JSON object or id,weight CSV)")
    p.add_argument("--out", type=Path, help="report path (JSON goes to stdout when omitted)")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    _add_global(p, argparse.SUPPRESS)

    p = sub.add_parser("sweep", help="Seg_Accuracy / Seg_Recall over a range of thresholds")
    _add_layout(p)
    _add_rule(p)
    grid = p.add_mutually_exclusive_group(required=True)
    grid.add_argument("--tau-grid", help="start:stop:step, stop inclusive")
    grid.add_argument("--tau-list", help="comma-separated thresholds")
    p.add_argument("--out", type=Path, help="CSV path (stdout when omitted)")
    _add_global(p, argparse.SUPPRESS)

    p = sub.add_parser("synth", help="generate a synthetic mask dataset")
    p.add_argument("--config", type=Path, help="JSON/YAML document with SynthConfig fields")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--simulate-profile", type=Path,
                   help="JSON/YAML DetectorProfile; also writes simulated predictions")
    _add_global(p, argparse.SUPPRESS)

    p = sub.add_parser("demo-dilution", help="pooled mIoU vs Sample_mIoU on a two-image example")
    _add_global(p, argparse.SUPPRESS)

    p = sub.add_parser("grad-check", help="finite-difference check of the loss gradients")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help="probability clamp")
    p.add_argument("--step", type=float, default=1e-6, help="finite-difference step")
    p.add_argument("--tolerance", type=float, default=1e-5,
                   help="max relative error for the pixel and joint gradients")
    p.add_argument("--cls-tolerance", type=float, default=1e-7,
                   help="max relative error for the sample-level gradient")
    p.add_argument("--seed", type=int, default=0)
    _add_global(p, argparse.SUPPRESS)
    return parser


def _rule(args) -> DecisionRule:
    stat = Statistic.parse(args.phi)
    tau = args.tau
    if tau is None:
        tau = 0.5 if stat in (Statistic.POSITIVE_PIXEL_FRACTION, Statistic.MAX_PROBABILITY) else 1
    try:
        return DecisionRule(stat, tau, args.theta)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _layout(args) -> mio.DatasetLayout:
    if args.manifest is not None:
        if args.gt or args.pred:
            raise UsageError("--manifest cannot be combined with --gt/--pred")
        return mio.DatasetLayout(manifest=args.manifest)
    if args.gt is None or args.pred is None:
        raise UsageError("--gt and --pred are required (or --manifest)")
    return mio.DatasetLayout(args.gt, args.pred)


def parse_tau_grid(spec: str) -> list:
    try:
        start, stop, step = (float(x) for x in spec.split(":"))
    except ValueError as exc:
        raise UsageError(f"bad --tau-grid {spec!r}; expected start:stop:step") from exc
    if step <= 0 or stop < start:
        raise UsageError("--tau-grid needs step > 0 and stop >= start")
    n = int((stop - start) / step + 1e-9) + 1
    return [start + i * step for i in range(n)]


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.6f}"


def _print_summary(report, out=sys.stdout):
    s = report.summary
    print(f"mIoU (pooled)  {_fmt(s.pooled_miou)}", file=out)
    print(f"Sample_mIoU    {_fmt(s.sample_miou)}", file=out)
    print(f"Seg_Accuracy   {_fmt(s.seg_accuracy)}", file=out)
    print(f"Seg_Recall     {_fmt(s.seg_recall)}", file=out)
    print(f"M_eff / M      {s.m_eff} / {s.m_total}   TN ratio {_fmt(s.tn_ratio)}", file=out)


def cmd_evaluate(args) -> int:
    layout = _layout(args)
    rule = _rule(args)
    weights = mio.load_weights(args.weights) if args.weights else None
    report = mio.evaluate_dataset(layout, rule, weights, threads=args.threads)
    if args.out is None:
        if args.format != "json":
            raise UsageError("--format csv needs --out")
        sys.stdout.write(mio.report_to_json(report))
        return EXIT_OK
    written = mio.emit_report(report, args.format, args.out)
    if not args.quiet:
        _print_summary(report)
        for path in written:
            print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    layout = _layout(args)
    rule = _rule(args)
    if args.tau_grid:
        grid = parse_tau_grid(args.tau_grid)
    else:
        try:
            grid = [float(t) for t in args.tau_list.split(",")]
        except ValueError as exc:
            raise UsageError(f"bad --tau-list {args.tau_list!r}") from exc
    values = mio.phi_values(layout, rule, threads=args.threads)
    try:
        rows = threshold_sweep([(y, v) for _, y, v in values], grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n" if fh is sys.stdout else "\r\n")
        writer.writerow(["tau", "tp", "fp", "fn", "tn", "seg_accuracy", "seg_recall"])
        for r in rows:
            c = r.confusion
            writer.writerow([f"{r.tau:.6f}", c.tp, c.fp, c.fn, c.tn,
                             _fmt_cell(r.seg_accuracy), _fmt_cell(r.seg_recall)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def _fmt_cell(x) -> str:
    return "" if x is None else f"{x:.6f}"


def cmd_synth(args) -> int:
    try:
        data = mio.load_mapping(args.config) if args.config else {}
        if args.seed is not None:
            data["seed"] = args.seed
        cfg = SynthConfig.from_mapping(data)
        profile = (
            DetectorProfile.from_mapping(mio.load_mapping(args.simulate_profile))
            if args.simulate_profile else None
        )
    except (TypeError, ValueError, OSError) as exc:
        raise UsageError(str(exc)) from exc
    gt_set = gen_dataset(cfg)
    mio.write_dataset(gt_set, args.out_dir / "gt")
    if profile is not None:
        preds, sim_log = simulate_predictions(gt_set, profile, cfg.seed)
        mio.write_dataset(preds, args.out_dir / "pred")
        with open(args.out_dir / "simulation_log.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "defects", "missed", "detected", "spurious"])
            writer.writerows(sim_log)
    if not args.quiet:
        n_pos = sum(1 for _, m in gt_set if m.any())
        print(f"wrote {len(gt_set)} samples ({n_pos} positive) to {args.out_dir}")
    return EXIT_OK


def dilution_report():
    """Evaluate the two-image dilution example under the default rule."""
    return mio.evaluate_samples(dilution_scenario(), DecisionRule())


def cmd_demo_dilution(args) -> int:
    start = time.perf_counter()
    report = dilution_report()
    s = report.summary
    print("sample          gt_px  pred_px  IoU")
    for row in report.per_sample:
        print(f"{row.id:<14} {row.tp + row.fn:>6} {row.tp + row.fp:>8}  {_fmt(row.iou)}")
    print()
    print(f"{'mIoU':>8} {'Sample_mIoU':>12} {'Seg_Acc':>9} {'Seg_Recall':>11}")
    print(f"{_fmt(s.pooled_miou):>8} {_fmt(s.sample_miou):>12} "
          f"{_fmt(s.seg_accuracy):>9} {_fmt(s.seg_recall):>11}")
    if not args.quiet:
        gap = s.pooled_miou - s.sample_miou
        print(f"\npooled mIoU exceeds Sample_mIoU by {gap:.6f}: the missed 50-pixel defect is "
              f"diluted by the 1000-pixel one ({time.perf_counter() - start:.3f} s)")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    try:
        report = grad_check(
            trials=args.trials, eps=args.eps, step=args.step,
            seg_tolerance=args.tolerance, cls_tolerance=args.cls_tolerance, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"trials                {report.trials}")
    print(f"seg grad max rel err  {report.seg_max_rel_error:.3e}")
    print(f"cls grad max rel err  {report.cls_max_rel_error:.3e}")
    print(f"joint max rel err     {report.joint_max_rel_error:.3e}")
    print(f"linearity failures    {report.linearity_failures}")
    if not report.ok:
        for line in report.failures[:20]:
            print(f"FAIL {line}", file=sys.stderr)
        return EXIT_CHECK
    print("OK")
    return EXIT_OK


COMMANDS = {
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "synth": cmd_synth,
    "demo-dilution": cmd_demo_dilution,
    "grad-check": cmd_grad_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"samplemiou: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (mio.DataError, mio.MaskLoadError, PlacementError) as exc:
        print(f"samplemiou: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
