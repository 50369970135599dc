"""
Evaluation Module for the Reading-Order Restoration system.
Boundary-line precision/recall, text-line detection H-mean over IoU
thresholds, and correct/accuracy rates of the ordered transcript. Reports
carry raw counts so pages can be micro-averaged with `combine`.
"""

import logging
from typing import List, Sequence, Tuple

from pydantic import BaseModel

from modules.errors import EvaluationError
from modules.geometry import LineSegment, Quad, iou_quad, segment_pair_distance
from modules.rescore import DELETE, INSERT, REPLACE, count_ops, edit_script

# Configure logging
logger = logging.getLogger("Evaluation")


def _precision_recall(tp: int, n_pred: int, n_gt: int) -> Tuple[float, float]:
    if n_pred == 0 and n_gt == 0:
        return 1.0, 1.0
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    return precision, recall


def harmonic_mean(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


class LineMatch(BaseModel):
    pred_index: int
    gt_index: int
    distance: float


class LineEvalReport(BaseModel):
    n_pred: int
    n_gt: int
    true_positives: int
    precision: float
    recall: float
    f_score: float
    matches: List[LineMatch] = []

    @classmethod
    def from_counts(cls, tp: int, n_pred: int, n_gt: int, matches: Sequence[LineMatch] = ()) -> "LineEvalReport":
        precision, recall = _precision_recall(tp, n_pred, n_gt)
        return cls(
            n_pred=n_pred, n_gt=n_gt, true_positives=tp,
            precision=precision, recall=recall, f_score=harmonic_mean(precision, recall),
            matches=list(matches),
        )

    @classmethod
    def combine(cls, reports: Sequence["LineEvalReport"]) -> "LineEvalReport":
        return cls.from_counts(
            sum(r.true_positives for r in reports),
            sum(r.n_pred for r in reports),
            sum(r.n_gt for r in reports),
        )


class DetThresholdResult(BaseModel):
    threshold: float
    true_positives: int
    precision: float
    recall: float
    h_mean: float


class DetEvalReport(BaseModel):
    n_pred: int
    n_gt: int
    sweep: List[DetThresholdResult]

    @property
    def h_mean(self) -> dict:
        return {r.threshold: r.h_mean for r in self.sweep}

    @classmethod
    def from_counts(cls, tps: Sequence[Tuple[float, int]], n_pred: int, n_gt: int) -> "DetEvalReport":
        sweep = []
        for threshold, tp in tps:
            precision, recall = _precision_recall(tp, n_pred, n_gt)
            sweep.append(DetThresholdResult(
                threshold=threshold, true_positives=tp, precision=precision,
                recall=recall, h_mean=harmonic_mean(precision, recall),
            ))
        return cls(n_pred=n_pred, n_gt=n_gt, sweep=sweep)

    @classmethod
    def combine(cls, reports: Sequence["DetEvalReport"]) -> "DetEvalReport":
        if not reports:
            raise EvaluationError("Cannot combine an empty list of detection reports")
        thresholds = [r.threshold for r in reports[0].sweep]
        for report in reports[1:]:
            if [r.threshold for r in report.sweep] != thresholds:
                raise EvaluationError("Detection reports were computed at different IoU thresholds")
        tps = [(t, sum(r.sweep[k].true_positives for r in reports)) for k, t in enumerate(thresholds)]
        return cls.from_counts(tps, sum(r.n_pred for r in reports), sum(r.n_gt for r in reports))


class TextEvalReport(BaseModel):
    nt: int
    de: int
    se: int
    ie: int
    cr: float
    ar: float

    @classmethod
    def from_counts(cls, nt: int, de: int, se: int, ie: int) -> "TextEvalReport":
        if nt <= 0:
            raise EvaluationError("Ground-truth text is empty; CR/AR are undefined")
        return cls(nt=nt, de=de, se=se, ie=ie, cr=(nt - de - se) / nt, ar=(nt - de - se - ie) / nt)

    @classmethod
    def combine(cls, reports: Sequence["TextEvalReport"]) -> "TextEvalReport":
        return cls.from_counts(
            sum(r.nt for r in reports),
            sum(r.de for r in reports),
            sum(r.se for r in reports),
            sum(r.ie for r in reports),
        )


def eval_lines(pred: Sequence[LineSegment], gt: Sequence[LineSegment], dist_threshold: float = 50.0) -> LineEvalReport:
    """
    One-to-one greedy matching by ascending endpoint distance; a pair closer
    than dist_threshold is a true positive.
    """
    if dist_threshold <= 0:
        raise ValueError(f"dist_threshold must be positive, got {dist_threshold}")
    pairs = sorted(
        (segment_pair_distance(p, g), i, j)
        for i, p in enumerate(pred)
        for j, g in enumerate(gt)
    )
    used_pred, used_gt, matches = set(), set(), []
    for distance, i, j in pairs:
        if distance >= dist_threshold:
            break
        if i in used_pred or j in used_gt:
            continue
        used_pred.add(i)
        used_gt.add(j)
        matches.append(LineMatch(pred_index=i, gt_index=j, distance=distance))
    return LineEvalReport.from_counts(len(matches), len(pred), len(gt), matches)


def _quad_ious(pred: Sequence[Quad], gt: Sequence[Quad]) -> List[Tuple[float, int, int]]:
    pred_bounds = [q.bounds() for q in pred]
    gt_bounds = [q.bounds() for q in gt]
    pairs = []
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            if pred_bounds[i].intersection_area(gt_bounds[j]) <= 0:
                continue
            iou = iou_quad(p, g)
            if iou > 0:
                pairs.append((iou, i, j))
    pairs.sort(key=lambda it: (-it[0], it[1], it[2]))
    return pairs


def eval_detection(pred: Sequence[Quad], gt: Sequence[Quad],
                   thresholds: Sequence[float] = (0.5, 0.6, 0.7)) -> DetEvalReport:
    """Greedy one-to-one matching by descending IoU, repeated at each threshold."""
    for t in thresholds:
        if not 0.0 < t <= 1.0:
            raise ValueError(f"IoU thresholds must be within (0, 1], got {t}")
    pairs = _quad_ious(pred, gt)
    tps = []
    for t in thresholds:
        used_pred, used_gt = set(), set()
        for iou, i, j in pairs:
            if iou < t:
                break
            if i in used_pred or j in used_gt:
                continue
            used_pred.add(i)
            used_gt.add(j)
        tps.append((float(t), len(used_pred)))
    return DetEvalReport.from_counts(tps, len(pred), len(gt))


def strip_whitespace(text: str) -> str:
    return "".join(text.split())


def eval_text(pred: str, gt: str) -> TextEvalReport:
    """
    Correct and accuracy rates of `pred` against `gt`, whitespace ignored.
    Deletions are ground-truth symbols missing from the prediction,
    insertions are extra predicted symbols.
    """
    gt = strip_whitespace(gt)
    pred = strip_whitespace(pred)
    if not gt:
        raise EvaluationError("Ground-truth text is empty; CR/AR are undefined")
    counts = count_ops(edit_script(gt, pred))
    report = TextEvalReport.from_counts(len(gt), counts[DELETE], counts[REPLACE], counts[INSERT])
    logger.debug(f"Text eval: Nt={report.nt} De={report.de} Se={report.se} Ie={report.ie}")
    return report
