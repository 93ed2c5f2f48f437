"""Detection evaluation at a single IoU threshold: matching, PR curves, AP, mAP.

Protocol:

* detections are ranked by confidence, descending; equal confidences keep
  file order (files sorted by name, then line order);
* each detection takes the unmatched ground truth of the same image and class
  with the highest IoU, if that IoU is >= the threshold (earliest GT on ties);
  otherwise it is a false positive;
* AP integrates the precision envelope over recall (all-points), or averages
  it at recall 0, 0.1, ..., 1 (11-point);
* mAP is the mean AP over classes that have at least one ground truth box.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import LabelFormatError

METHODS = ("all-points", "11-point")


@dataclass(frozen=True)
class Box:
    """Normalized center-format box."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"box has non-finite coordinates: {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box width/height must be > 0, got w={self.w} h={self.h}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center must lie in [0, 1], got ({self.cx}, {self.cy})")

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    class_id: int
    box: Box


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_id: int
    box: Box
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


def iou(a: Box, b: Box) -> float:
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # areas from the same corners as the intersection, so identical boxes give exactly 1.0
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    return inter / (area_a + area_b - inter)


def rank_detections(dets: Sequence[Detection]) -> list[int]:
    """Indices of ``dets`` by confidence, descending; stable for ties."""
    return sorted(range(len(dets)), key=lambda i: -dets[i].confidence)


@dataclass(frozen=True)
class Match:
    det_index: int
    tp: bool
    gt_index: int | None
    iou: float


def match_all(dets: Sequence[Detection], gts: Sequence[GroundTruth],
              iou_thresh: float = 0.5) -> list[Match]:
    """Greedy matching in confidence order; one :class:`Match` per detection, in that order."""
    if not (0.0 < iou_thresh <= 1.0):
        raise ValueError(f"IoU threshold must be in (0, 1], got {iou_thresh}")
    pools: dict[tuple[str, int], list[int]] = {}
    for g, gt in enumerate(gts):
        pools.setdefault((gt.image_id, gt.class_id), []).append(g)
    taken = [False] * len(gts)
    out = []
    for d in rank_detections(dets):
        det = dets[d]
        best, best_iou = None, -1.0
        for g in pools.get((det.image_id, det.class_id), ()):
            if taken[g]:
                continue
            v = iou(det.box, gts[g].box)
            if v > best_iou:
                best, best_iou = g, v
        if best is not None and best_iou >= iou_thresh:
            taken[best] = True
            out.append(Match(d, True, best, best_iou))
        else:
            out.append(Match(d, False, None, max(best_iou, 0.0)))
    return out


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth],
                     iou_thresh: float = 0.5) -> list[bool]:
    """TP (``True``) / FP flags in confidence-ranked order."""
    return [m.tp for m in match_all(dets, gts, iou_thresh)]


@dataclass
class PRCurve:
    points: list[tuple[float, float]]
    num_gt: int
    class_id: int | None = None
    label: str = ""

    @property
    def recalls(self) -> list[float]:
        return [r for r, _ in self.points]

    @property
    def precisions(self) -> list[float]:
        return [p for _, p in self.points]


def pr_curve(flags: Sequence[bool], num_gt: int, class_id: int | None = None,
             label: str = "") -> PRCurve:
    """Cumulative (recall, precision) after each ranked detection.

    With ``num_gt == 0`` recall is reported as 0.0; any TP flag is then an error.
    """
    if num_gt < 0:
        raise ValueError("num_gt must be >= 0")
    ntp = sum(1 for f in flags if f)
    if ntp > num_gt:
        raise ValueError(f"inconsistent counts: {ntp} true positives but num_gt = {num_gt}")
    points = []
    tp = fp = 0
    for f in flags:
        if f:
            tp += 1
        else:
            fp += 1
        points.append((tp / num_gt if num_gt else 0.0, tp / (tp + fp)))
    return PRCurve(points, num_gt, class_id, label)


def precision_envelope(curve: PRCurve) -> list[float]:
    """Interpolated precision at each point: max precision at equal or higher recall."""
    env = list(curve.precisions)
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    return env


def average_precision(curve: PRCurve, method: str = "all-points") -> float:
    if method not in METHODS:
        raise ValueError(f"unknown AP method {method!r}")
    if curve.num_gt == 0 or not curve.points:
        return 0.0
    if method == "11-point":
        total = 0.0
        for i in range(11):
            t = i / 10
            total += max((p for r, p in curve.points if r >= t), default=0.0)
        return total / 11
    recall = [0.0] + curve.recalls + [1.0]
    prec = [0.0] + curve.precisions + [0.0]
    for i in range(len(prec) - 2, -1, -1):
        prec[i] = max(prec[i], prec[i + 1])
    ap = 0.0
    for i in range(len(recall) - 1):
        if recall[i + 1] != recall[i]:
            ap += (recall[i + 1] - recall[i]) * prec[i + 1]
    return ap


@dataclass
class ClassResult:
    class_id: int
    ap: float
    num_gt: int
    tp: int
    fp: int
    curve: PRCurve

    @property
    def in_map(self) -> bool:
        return self.num_gt > 0


@dataclass
class EvalReport:
    iou_threshold: float
    method: str
    classes: list[ClassResult] = field(default_factory=list)
    pooled: PRCurve | None = None

    @property
    def map(self) -> float:
        aps = [c.ap for c in self.classes if c.in_map]
        return sum(aps) / len(aps) if aps else 0.0

    def ap(self, class_id: int) -> float:
        for c in self.classes:
            if c.class_id == class_id:
                return c.ap
        raise KeyError(class_id)

    def to_dict(self) -> dict:
        return {
            "iou_threshold": self.iou_threshold,
            "interpolation": self.method,
            "map": self.map,
            "classes": [
                {"class_id": c.class_id, "ap": c.ap, "num_gt": c.num_gt, "tp": c.tp,
                 "fp": c.fp, "in_map": c.in_map}
                for c in self.classes
            ],
            "num_gt": sum(c.num_gt for c in self.classes),
            "num_detections": sum(c.tp + c.fp for c in self.classes),
        }


def evaluate(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_thresh: float = 0.5,
             method: str = "all-points") -> EvalReport:
    """Per-class AP over all images jointly, mAP, and an all-class pooled curve."""
    matches = match_all(dets, gts, iou_thresh)
    classes = sorted({g.class_id for g in gts} | {d.class_id for d in dets})
    report = EvalReport(iou_thresh, method)
    for c in classes:
        flags = [m.tp for m in matches if dets[m.det_index].class_id == c]
        num_gt = sum(1 for g in gts if g.class_id == c)
        curve = pr_curve(flags, num_gt, c, f"class {c}")
        tp = sum(flags)
        report.classes.append(
            ClassResult(c, average_precision(curve, method), num_gt, tp, len(flags) - tp, curve)
        )
    report.pooled = pr_curve([m.tp for m in matches], len(gts), None, "all classes (pooled)")
    return report


# ---------------------------------------------------------------------------
# YOLO-style text files
# ---------------------------------------------------------------------------

def _parse_lines(path: Path, nfields: int, num_classes: int | None):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != nfields:
                raise LabelFormatError(path, lineno, f"expected {nfields} fields, got {len(parts)}")
            try:
                cls = int(parts[0])
                vals = [float(p) for p in parts[1:]]
            except ValueError:
                raise LabelFormatError(path, lineno, f"unparseable line {line.strip()!r}") from None
            if cls < 0 or (num_classes is not None and cls >= num_classes):
                raise LabelFormatError(path, lineno, f"class id {cls} out of range")
            if not all(math.isfinite(v) for v in vals):
                raise LabelFormatError(path, lineno, "non-finite value")
            cx, cy, w, h = vals[:4]
            if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0 and 0.0 < w <= 1.0 and 0.0 < h <= 1.0):
                raise LabelFormatError(path, lineno, f"coordinates out of range: {vals[:4]}")
            if nfields == 6 and not (0.0 <= vals[4] <= 1.0):
                raise LabelFormatError(path, lineno, f"confidence {vals[4]} outside [0, 1]")
            yield path.stem, cls, Box(cx, cy, w, h), vals[4:]


def _txt_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix == ".txt" and p.is_file())


def load_labels(directory, num_classes: int | None = None) -> list[GroundTruth]:
    """Ground truth from ``<image>.txt`` files with lines ``class cx cy w h``."""
    return [GroundTruth(img, c, box)
            for path in _txt_files(directory)
            for img, c, box, _ in _parse_lines(path, 5, num_classes)]


def load_predictions(directory, num_classes: int | None = None) -> list[Detection]:
    """Detections from ``<image>.txt`` files with lines ``class cx cy w h conf``."""
    return [Detection(img, c, box, rest[0])
            for path in _txt_files(directory)
            for img, c, box, rest in _parse_lines(path, 6, num_classes)]


def write_pr_csv(curve: PRCurve, path) -> None:
    """CSV with header ``recall,precision``; floats written with ``repr`` so they round-trip."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recall", "precision"])
        for r, p in curve.points:
            w.writerow([repr(float(r)), repr(float(p))])


def read_pr_csv(path) -> list[tuple[float, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["recall", "precision"]:
        raise ValueError(f"{path}: missing 'recall,precision' header")
    return [(float(r), float(p)) for r, p in rows[1:]]
