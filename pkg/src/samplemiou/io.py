"""Mask files in, metric reports out.

Masks are single-channel images. 8-bit files become binary masks
(pixel >= 128 by default); 16-bit files become probability maps (v / 65535).
Ground-truth and prediction directories are paired by filename stem.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import yaml
from PIL import Image, UnidentifiedImageError

from .decision import (
    DecisionRule,
    decide,
    phi,
    sample_confusion,
    seg_accuracy,
    seg_recall,
)
from .masks import (
    BinaryMask,
    DimensionMismatchError,
    PixelConfusion,
    ProbabilityMap,
    as_binary,
    pixel_confusion,
)
from .metrics import SampleRecord, sample_miou, weighted_sample_miou

IMAGE_SUFFIXES = {".png", ".tif", ".tiff", ".bmp", ".pgm", ".pbm"}
BINARY_CUTOFF = 128

SUMMARY_COLUMNS = [
    "pooled_miou",
    "sample_miou",
    "m_eff",
    "m_total",
    "tn_ratio",
    "seg_accuracy",
    "seg_recall",
    "rule_statistic",
    "rule_tau",
    "rule_theta",
    "weights_used",
]
ROW_COLUMNS = ["id", "tp", "fp", "fn", "tn", "iou", "relevant", "y", "y_hat"]


class MaskLoadError(Exception):
    def __init__(self, path, reason):
        self.path = str(path)
        super().__init__(f"{path}: {reason}")


class UnreadableMaskError(MaskLoadError):
    pass


class UnsupportedBitDepthError(MaskLoadError):
    pass


class MultiChannelError(MaskLoadError):
    pass


class DataError(Exception):
    """Dataset-level problems; carries every offending sample, not just the first."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__(
            f"{len(self.problems)} problem(s) in dataset:\n" + "\n".join(f"  {p}" for p in self.problems)
        )


class PairingError(DataError):
    pass


class ReportConsistencyError(ValueError):
    pass


def load_mask(path, cutoff: int = BINARY_CUTOFF) -> Union[BinaryMask, ProbabilityMap]:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            bands = len(im.getbands())
            arr = np.asarray(im)
    except (OSError, UnidentifiedImageError) as exc:
        raise UnreadableMaskError(path, f"cannot read image ({exc})") from exc
    if bands != 1:
        raise MultiChannelError(path, f"expected one channel, got mode {mode} with {bands}")
    if mode == "1":
        return BinaryMask(arr)
    if mode == "L":
        return BinaryMask(arr >= cutoff)
    if mode.startswith("I;16"):
        return ProbabilityMap(arr.astype(np.float64) / 65535.0)
    raise UnsupportedBitDepthError(path, f"unsupported single-channel mode {mode}")


def save_mask(mask: Union[BinaryMask, ProbabilityMap], path) -> None:
    """Write an 8-bit (binary) or 16-bit (probability) PNG."""
    if isinstance(mask, BinaryMask):
        arr = mask.pixels.astype(np.uint8) * 255
    else:
        arr = np.rint(mask.values * 65535.0).astype(np.uint16)
    Image.fromarray(arr).save(path, format="PNG")


def write_dataset(samples, directory) -> None:
    """Write ``(id, mask)`` pairs as ``<directory>/<id>.png``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for sid, mask in samples:
        save_mask(mask, directory / f"{sid}.png")


def _index_dir(directory: Path, problems: list) -> Dict[str, Path]:
    index: Dict[str, Path] = {}
    if not directory.is_dir():
        problems.append(f"{directory}: not a directory")
        return index
    for entry in sorted(directory.iterdir()):
        if not entry.is_file() or entry.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        if entry.stem in index:
            problems.append(f"{directory}: stem {entry.stem!r} matches several files")
            continue
        index[entry.stem] = entry
    return index


@dataclass(frozen=True)
class DatasetLayout:
    gt_dir: Optional[Path] = None
    pred_dir: Optional[Path] = None
    manifest: Optional[Path] = None

    def pairs(self) -> List[tuple]:
        """Return ``(id, gt_path, pred_path)`` sorted by id, or raise PairingError."""
        if self.manifest is not None:
            return self._manifest_pairs()
        problems: list = []
        gt = _index_dir(Path(self.gt_dir), problems)
        pred = _index_dir(Path(self.pred_dir), problems)
        for stem in sorted(set(gt) - set(pred)):
            problems.append(f"{stem}: ground truth {gt[stem]} has no prediction")
        for stem in sorted(set(pred) - set(gt)):
            problems.append(f"{stem}: prediction {pred[stem]} has no ground truth")
        if problems:
            raise PairingError(problems)
        return [(stem, gt[stem], pred[stem]) for stem in sorted(gt)]

    def _manifest_pairs(self) -> List[tuple]:
        base = Path(self.manifest).parent
        problems = []
        seen = {}
        with open(self.manifest, newline="") as fh:
            for row in csv.DictReader(fh):
                sid = row["id"]
                if sid in seen:
                    problems.append(f"{sid}: listed twice in manifest")
                    continue
                seen[sid] = (sid, base / row["gt_path"], base / row["pred_path"])
        for sid, g, p in seen.values():
            for path in (g, p):
                if not path.is_file():
                    problems.append(f"{sid}: missing file {path}")
        if problems:
            raise PairingError(problems)
        return [seen[k] for k in sorted(seen)]


@dataclass(frozen=True)
class SampleRow:
    id: str
    tp: int
    fp: int
    fn: int
    tn: int
    iou: Optional[float]
    relevant: bool
    y: bool
    y_hat: bool


@dataclass(frozen=True)
class ReportSummary:
    pooled_miou: Optional[float]
    sample_miou: Optional[float]
    m_eff: int
    m_total: int
    tn_ratio: float
    seg_accuracy: float
    seg_recall: Optional[float]
    rule: dict
    weights_used: bool


@dataclass(frozen=True)
class MetricReport:
    per_sample: List[SampleRow]
    summary: ReportSummary

    def to_dict(self) -> dict:
        return {
            "per_sample": [vars(r).copy() for r in self.per_sample],
            "summary": {k: getattr(self.summary, k) for k in ReportSummary.__dataclass_fields__},
        }

    @classmethod
    def from_dict(cls, data: Mapping, check: bool = True, tolerance: float = 1e-6) -> "MetricReport":
        rows = [SampleRow(**row) for row in data["per_sample"]]
        summary = ReportSummary(**data["summary"])
        report = cls(rows, summary)
        if check:
            verify_report(report, tolerance)
        return report


def build_report(rows: Sequence[SampleRow], rule: DecisionRule, weights: Optional[Mapping[str, float]] = None) -> MetricReport:
    rows = sorted(rows, key=lambda r: r.id)
    records = [
        SampleRecord.from_confusion(
            r.id,
            _confusion_of(r),
            weight=1.0 if weights is None else float(weights.get(r.id, 1.0)),
        )
        for r in rows
    ]
    loc = sample_miou(records)
    sm = weighted_sample_miou(records) if weights is not None else loc.sample_miou
    sc = sample_confusion((r.y, r.y_hat) for r in rows)
    summary = ReportSummary(
        pooled_miou=loc.pooled_miou,
        sample_miou=sm,
        m_eff=loc.m_eff,
        m_total=loc.m_total,
        tn_ratio=loc.tn_ratio,
        seg_accuracy=seg_accuracy(sc),
        seg_recall=seg_recall(sc),
        rule=rule.as_dict(),
        weights_used=weights is not None,
    )
    return MetricReport(rows, summary)


def _confusion_of(row: SampleRow) -> PixelConfusion:
    return PixelConfusion(row.tp, row.fp, row.fn, row.tn)


def _close(a, b, tol) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return abs(a - b) <= tol


def verify_report(report: MetricReport, tolerance: float = 1e-12) -> None:
    """Recompute the summary from the per-sample rows and compare.

    A weighted sample_miou cannot be rebuilt (rows carry no weights), so it is
    skipped when ``weights_used`` is set.
    """
    s = report.summary
    rule = DecisionRule(**_rule_args(s.rule))
    fresh = build_report(report.per_sample, rule).summary
    bad = []
    for name in ("pooled_miou", "tn_ratio", "seg_accuracy", "seg_recall"):
        if not _close(getattr(s, name), getattr(fresh, name), tolerance):
            bad.append(name)
    if not s.weights_used and not _close(s.sample_miou, fresh.sample_miou, tolerance):
        bad.append("sample_miou")
    for name in ("m_eff", "m_total"):
        if getattr(s, name) != getattr(fresh, name):
            bad.append(name)
    for row in report.per_sample:
        c = _confusion_of(row)
        if row.relevant != (c.union > 0) or row.y != (c.tp + c.fn > 0):
            bad.append(f"row {row.id}")
        elif row.relevant and not _close(row.iou, c.tp / c.union, tolerance):
            bad.append(f"row {row.id} iou")
    if bad:
        raise ReportConsistencyError(f"summary disagrees with per-sample rows: {', '.join(bad)}")


def _rule_args(rule: Mapping) -> dict:
    return {"statistic": rule["statistic"], "tau": rule["tau"], "theta": rule["theta"]}


def evaluate_pair(sid: str, gt, pred, rule: DecisionRule) -> SampleRow:
    if not isinstance(gt, BinaryMask):
        raise TypeError(f"{sid}: ground truth must be an 8-bit binary mask")
    binary = as_binary(pred, rule.theta)
    c = pixel_confusion(gt, binary)
    relevant = c.union > 0
    return SampleRow(
        id=sid,
        tp=c.tp,
        fp=c.fp,
        fn=c.fn,
        tn=c.tn,
        iou=c.tp / c.union if relevant else None,
        relevant=relevant,
        y=c.tp + c.fn > 0,
        y_hat=decide(pred, rule),
    )


def evaluate_samples(samples, rule: DecisionRule = DecisionRule(), weights=None) -> MetricReport:
    """Evaluate in-memory ``(id, gt, pred)`` triples."""
    return build_report([evaluate_pair(sid, g, p, rule) for sid, g, p in samples], rule, weights)


def _run_pool(fn, jobs, threads):
    workers = threads or os.cpu_count() or 1
    if workers == 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _evaluate_file_pair(args):
    sid, gt_path, pred_path, rule = args
    try:
        gt = load_mask(gt_path)
        pred = load_mask(pred_path)
        if not isinstance(gt, BinaryMask):
            return f"{sid}: ground truth {gt_path} is not an 8-bit binary mask"
        if gt.shape != pred.shape:
            return f"{sid}: {DimensionMismatchError(gt.shape, pred.shape)}"
        return evaluate_pair(sid, gt, pred, rule)
    except MaskLoadError as exc:
        return f"{sid}: {exc}"


def evaluate_dataset(
    layout: DatasetLayout,
    rule: DecisionRule = DecisionRule(),
    weights: Optional[Mapping[str, float]] = None,
    threads: Optional[int] = None,
) -> MetricReport:
    """Load, pair and evaluate a whole dataset.

    Work is spread over ``threads`` workers (default: all cores); the results
    are folded in id order so the report does not depend on scheduling.
    Every pairing, decoding or shape problem is collected before raising.
    """
    pairs = layout.pairs()
    if not pairs:
        raise PairingError(["no mask files found"])
    if weights is not None:
        unknown = sorted(set(weights) - {sid for sid, _, _ in pairs})
        if unknown:
            raise DataError([f"{sid}: weight given for unknown sample" for sid in unknown])
        bad = sorted(sid for sid, w in weights.items() if not (w > 0 and math.isfinite(w)))
        if bad:
            raise DataError([f"{sid}: weight must be positive" for sid in bad])
    results = _run_pool(_evaluate_file_pair, [(sid, g, p, rule) for sid, g, p in pairs], threads)
    problems = [r for r in results if isinstance(r, str)]
    if problems:
        raise DataError(problems)
    return build_report(results, rule, weights)


def load_weights(path) -> Dict[str, float]:
    """Per-sample weights from a JSON object or a two-column ``id,weight`` CSV."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        with open(path) as fh:
            data = json.load(fh)
        return {str(k): float(v) for k, v in data.items()}
    with open(path, newline="") as fh:
        return {row["id"]: float(row["weight"]) for row in csv.DictReader(fh)}


def load_mapping(path) -> dict:
    """Read a key-value config document (JSON or YAML)."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a key-value document")
    return data


# -- report serialization -------------------------------------------------


def _fmt_real(x: float) -> str:
    return f"{x:.6f}"


def _encode(value, indent: int) -> str:
    pad = "  " * indent
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return _fmt_real(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f'{pad}  {json.dumps(k)}: {_encode(v, indent + 1)}' for k, v in value.items()]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [f"{pad}  {_encode(v, indent + 1)}" for v in value]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def report_to_json(report: MetricReport) -> str:
    """JSON text with every real printed to six decimals."""
    return _encode(report.to_dict(), 0) + "\n"


def report_from_json(text: str, check: bool = True) -> MetricReport:
    return MetricReport.from_dict(json.loads(text), check=check)


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return _fmt_real(value)
    return str(value)


def summary_row(report: MetricReport) -> list:
    s = report.summary
    return [
        s.pooled_miou,
        s.sample_miou,
        s.m_eff,
        s.m_total,
        s.tn_ratio,
        s.seg_accuracy,
        s.seg_recall,
        s.rule["statistic"],
        float(s.rule["tau"]),
        float(s.rule["theta"]),
        s.weights_used,
    ]


def summary_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}_summary{path.suffix or '.csv'}")


def emit_report(report: MetricReport, fmt: str, path) -> List[Path]:
    """Write ``report`` as JSON, or as a per-sample CSV plus a ``*_summary.csv``.

    Returns the paths written.
    """
    fmt = fmt.lower()
    path = Path(path)
    if fmt == "json":
        path.write_text(report_to_json(report))
        return [path]
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROW_COLUMNS)
        for r in report.per_sample:
            writer.writerow([_csv_cell(getattr(r, c)) for c in ROW_COLUMNS])
    summary = summary_path_for(path)
    with open(summary, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        writer.writerow([_csv_cell(v) for v in summary_row(report)])
    return [path, summary]


def _phi_job(args):
    sid, gt_path, pred_path, rule = args
    try:
        gt = load_mask(gt_path)
        pred = load_mask(pred_path)
    except MaskLoadError as exc:
        return f"{sid}: {exc}"
    if not isinstance(gt, BinaryMask):
        return f"{sid}: ground truth {gt_path} is not an 8-bit binary mask"
    if gt.shape != pred.shape:
        return f"{sid}: {DimensionMismatchError(gt.shape, pred.shape)}"
    return sid, gt.any(), phi(pred, rule)


def phi_values(layout: DatasetLayout, rule: DecisionRule, threads: Optional[int] = None) -> List[tuple]:
    """``(id, y, phi)`` per sample in id order, ready for a threshold sweep."""
    jobs = [(sid, g, p, rule) for sid, g, p in layout.pairs()]
    if not jobs:
        raise PairingError(["no mask files found"])
    results = _run_pool(_phi_job, jobs, threads)
    problems = [r for r in results if isinstance(r, str)]
    if problems:
        raise DataError(problems)
    return results
