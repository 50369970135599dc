"""
Pipeline Module for the Reading-Order Restoration system.
File formats, page manifests, sliding-window merging and the per-page
inference chain from detections and line mask to ordered (optionally fused)
text, plus batch evaluation against ground truth.
"""

import os
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
import yaml
from pydantic import BaseModel, ValidationError, root_validator, validator

from config import AppConfig
from modules.errors import InputError, PipelineError, ReadingOrderError
from modules.geometry import AABox, CharDetection, LineSegment, Quad, nms
from modules.grouping import Document, column_quad, emit_text, group_page
from modules.layout import PageLayout, partition_page
from modules.mask import BinaryMask, dedup_lines, extract_segments, filter_noise, hough_lines, upscale
from modules.metrics import (
    DetEvalReport, LineEvalReport, TextEvalReport, eval_detection, eval_lines, eval_text, strip_whitespace,
)
from modules.rescore import FusionResult, ScoredSequence, fuse_document
from modules.synth import SynthPage, oracle_line_records

# Configure logging
logger = logging.getLogger("Pipeline")


# File records
class DetectionRecord(BaseModel):
    box: List[float]
    label: str
    score: float

    @validator('box')
    def validate_box(cls, v):
        if len(v) != 4:
            raise ValueError(f"box must have 4 coordinates [l, t, r, b], got {len(v)}")
        return v


class LineRecord(BaseModel):
    column_id: str
    symbols: Optional[List[str]] = None
    text: Optional[str] = None
    probs: List[float]

    @root_validator(skip_on_failure=True)
    def validate_symbols(cls, values):
        if values.get('symbols') is None:
            if values.get('text') is None:
                raise ValueError("record needs either 'symbols' or 'text'")
            values['symbols'] = list(values['text'])
        return values


class TextLineRecord(BaseModel):
    quad: List[List[float]]
    transcription: str


class GroundTruthRecord(BaseModel):
    width: float
    height: float
    boundary_lines: List[List[List[float]]] = []
    text_lines: List[TextLineRecord] = []
    transcript: str = ""


class PageManifest(BaseModel):
    page_id: str
    detections: str
    mask: str
    lines: Optional[str] = None
    ground_truth: Optional[str] = None
    mask_scale: int = 4
    page_width: Optional[float] = None
    page_height: Optional[float] = None

    class Config:
        extra = "forbid"

    @validator('mask_scale')
    def validate_scale(cls, v):
        if v < 1:
            raise ValueError(f"mask_scale must be at least 1, got {v}")
        return v

    def resolve(self, base_dir: str) -> "PageManifest":
        """Copy with file paths made relative to `base_dir` instead of the working directory."""
        def join(path):
            return path if path is None or os.path.isabs(path) else os.path.join(base_dir, path)
        return self.copy(update={
            'detections': join(self.detections),
            'mask': join(self.mask),
            'lines': join(self.lines),
            'ground_truth': join(self.ground_truth),
        })


@dataclass(frozen=True)
class GroundTruth:
    width: float
    height: float
    lines: Tuple[LineSegment, ...]
    quads: Tuple[Quad, ...]
    transcriptions: Tuple[str, ...]
    transcript: str


# Readers and writers
def _read_json(path: str) -> Any:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except OSError as e:
        raise InputError(f"cannot read file: {e.strerror or e}", path)
    except json.JSONDecodeError as e:
        raise InputError(f"malformed JSON: {e}", path)


def _write_text(path: str, text: str) -> None:
    directory = os.path.dirname(path)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
    except OSError as e:
        raise InputError(f"cannot write file: {e.strerror or e}", path)


def dump_json(data: Any) -> str:
    return json.dumps(data, ensure_ascii=False, indent=2) + "\n"


def _records(path: str) -> List[Any]:
    data = _read_json(path)
    if not isinstance(data, list):
        raise InputError(f"expected a JSON array of records, got {type(data).__name__}", path)
    return data


def load_detections(path: str) -> List[CharDetection]:
    detections = []
    for index, raw in enumerate(_records(path)):
        try:
            record = DetectionRecord.parse_obj(raw)
            detections.append(CharDetection(AABox(*record.box), record.label, record.score))
        except (ValidationError, ValueError, TypeError) as e:
            raise InputError(f"invalid detection: {e}", path, index)
    return detections


def save_detections(dets: Sequence[CharDetection], path: str) -> None:
    _write_text(path, dump_json([d.to_record() for d in dets]))


def load_mask(path: str, scale: int, threshold: int = 1) -> BinaryMask:
    """Single-channel PNG/PGM; pixels at or above `threshold` are line pixels."""
    image = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if image is None:
        raise InputError("cannot read mask image", path)
    if image.ndim == 3:
        image = cv2.cvtColor(image, cv2.COLOR_BGR2GRAY if image.shape[2] == 3 else cv2.COLOR_BGRA2GRAY)
    return BinaryMask(image >= threshold, scale)


def save_mask(mask: BinaryMask, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    try:
        written = cv2.imwrite(path, mask.bits.astype(np.uint8) * 255)
    except cv2.error as e:
        raise InputError(f"cannot write mask image: {e}", path)
    if not written:
        raise InputError("cannot write mask image", path)


def load_line_records(path: str) -> Dict[str, ScoredSequence]:
    records: Dict[str, ScoredSequence] = {}
    for index, raw in enumerate(_records(path)):
        try:
            record = LineRecord.parse_obj(raw)
            records[record.column_id] = ScoredSequence(tuple(record.symbols), tuple(record.probs))
        except (ValidationError, ValueError) as e:
            raise InputError(f"invalid line record: {e}", path, index)
    return records


def save_line_records(records: Dict[str, ScoredSequence], path: str) -> None:
    _write_text(path, dump_json([
        {"column_id": column_id, "symbols": list(seq.symbols), "probs": list(seq.probs)}
        for column_id, seq in records.items()
    ]))


def load_ground_truth(path: str) -> GroundTruth:
    try:
        record = GroundTruthRecord.parse_obj(_read_json(path))
        return GroundTruth(
            width=record.width,
            height=record.height,
            lines=tuple(LineSegment.from_list(line) for line in record.boundary_lines),
            quads=tuple(Quad.from_list(t.quad) for t in record.text_lines),
            transcriptions=tuple(t.transcription for t in record.text_lines),
            transcript=record.transcript,
        )
    except (ValidationError, ValueError) as e:
        raise InputError(f"invalid ground truth: {e}", path)


def save_ground_truth(gt: GroundTruth, path: str) -> None:
    _write_text(path, dump_json({
        "width": gt.width,
        "height": gt.height,
        "boundary_lines": [line.to_list() for line in gt.lines],
        "text_lines": [
            {"quad": quad.to_list(), "transcription": text}
            for quad, text in zip(gt.quads, gt.transcriptions)
        ],
        "transcript": gt.transcript,
    }))


def load_manifests(path: str) -> List[PageManifest]:
    """
    Manifest list file (YAML or JSON): a list of page entries or a mapping
    with a `pages` list. Relative paths are resolved against the file's directory.
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise InputError(f"cannot read manifest: {e.strerror or e}", path)
    except yaml.YAMLError as e:
        raise InputError(f"malformed manifest: {e}", path)

    if isinstance(data, dict):
        data = data.get('pages')
    if not isinstance(data, list):
        raise InputError("manifest must be a list of pages or a mapping with a 'pages' list", path)

    base_dir = os.path.dirname(path)
    manifests = []
    for index, raw in enumerate(data):
        try:
            manifests.append(PageManifest.parse_obj(raw).resolve(base_dir))
        except ValidationError as e:
            raise InputError(f"invalid page entry: {e}", path, index)
    return manifests


def save_manifests(manifests: Sequence[PageManifest], path: str) -> None:
    entries = [m.dict(exclude_none=True) for m in manifests]
    _write_text(path, yaml.safe_dump({"pages": entries}, allow_unicode=True, sort_keys=False))


def ground_truth_from_page(page: SynthPage) -> GroundTruth:
    return GroundTruth(
        width=float(page.spec.page_width),
        height=float(page.spec.page_height),
        lines=page.lines,
        quads=page.line_quads,
        transcriptions=page.line_texts,
        transcript=page.transcript,
    )


def save_synth_page(page: SynthPage, directory: str, page_id: str,
                    line_confidence: Optional[float] = 0.95) -> PageManifest:
    """
    Write a synthetic page in the pipeline's input formats and return its
    manifest entry (paths relative to `directory`).
    """
    names = {
        'detections': f"{page_id}.detections.json",
        'mask': f"{page_id}.mask.png",
        'ground_truth': f"{page_id}.gt.json",
    }
    save_detections(page.detections, os.path.join(directory, names['detections']))
    save_mask(page.mask, os.path.join(directory, names['mask']))
    save_ground_truth(ground_truth_from_page(page), os.path.join(directory, names['ground_truth']))
    if line_confidence is not None:
        names['lines'] = f"{page_id}.lines.json"
        save_line_records(oracle_line_records(page, line_confidence), os.path.join(directory, names['lines']))

    return PageManifest(
        page_id=page_id,
        mask_scale=page.mask.scale,
        page_width=float(page.spec.page_width),
        page_height=float(page.spec.page_height),
        **names,
    )


# Sliding windows
def plan_windows(width: int, height: int, window_size: int, overlap: int = 100) -> List[Tuple[int, int]]:
    """
    Top-left offsets of square windows covering the page with at least
    `overlap` pixels shared between neighbors; the last window in each
    direction is flush with the page edge.
    """
    if window_size <= 0 or not 0 <= overlap < window_size:
        raise ValueError(f"Need window_size > overlap >= 0, got {window_size} and {overlap}")
    step = window_size - overlap

    def starts(extent: int) -> List[int]:
        last = max(extent - window_size, 0)
        positions = list(range(0, last + 1, step))
        if positions[-1] != last:
            positions.append(last)
        return positions

    return [(x, y) for y in starts(height) for x in starts(width)]


def merge_windows(window_outputs: Sequence[Tuple[Tuple[float, float], Sequence[CharDetection]]],
                  iou_threshold: float = 0.5) -> List[CharDetection]:
    """Shift each window's detections to page coordinates and suppress duplicates."""
    merged = [
        det.translate(dx, dy)
        for (dx, dy), dets in window_outputs
        for det in dets
    ]
    survivors = nms(merged, iou_threshold)
    logger.debug(f"Merged {len(window_outputs)} windows: {len(merged)} detections, {len(survivors)} kept")
    return survivors


# Page processing
@dataclass(frozen=True)
class PageResult:
    page_id: str
    page_size: Tuple[float, float]
    lines: Tuple[LineSegment, ...]
    layout: PageLayout
    document: Document
    text: str
    line_text: Optional[str] = None  # text-line recognizer alone
    fused_text: Optional[str] = None
    fusion: Dict[str, FusionResult] = field(default_factory=dict)

    def to_record(self) -> Dict[str, Any]:
        record = {
            "page_id": self.page_id,
            "page_size": list(self.page_size),
            "lines": [line.to_list() for line in self.lines],
            "layout": self.layout.to_record(),
            "document": self.document.to_record(),
            "text": self.text,
        }
        if self.fused_text is not None:
            record["line_text"] = self.line_text
            record["fused_text"] = self.fused_text
            record["fusion"] = [
                {"column_id": column_id, "rule": result.rule, "text": result.sequence.text,
                 "warning": result.warning}
                for column_id, result in self.fusion.items()
            ]
        return record


def detect_lines(mask: BinaryMask, config: AppConfig,
                 page_size: Optional[Tuple[float, float]] = None) -> List[LineSegment]:
    """filter_noise, upscale to page scale, Hough, segment extraction and dedup."""
    cleaned = filter_noise(mask, config.mask.min_area)
    full = upscale(cleaned, cleaned.scale)
    peaks = hough_lines(full, config.hough)
    segments = extract_segments(full, peaks, config.hough)
    lines = dedup_lines(segments, config.hough, page_size or (full.width, full.height))
    logger.debug(f"Line detection: {len(peaks)} peaks, {len(segments)} segments, {len(lines)} lines")
    return lines


def _stage(page_id: str, stage: str, fn: Callable, *args):
    try:
        return fn(*args)
    except InputError as e:
        raise InputError(f"page {page_id}: {e}") from e
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError(page_id, stage, str(e)) from e


def process_page(page_id: str, detections: Sequence[CharDetection], mask: BinaryMask, config: AppConfig,
                 line_records: Optional[Dict[str, ScoredSequence]] = None,
                 page_size: Optional[Tuple[float, float]] = None) -> PageResult:
    """Run the inference chain on in-memory inputs."""
    if page_size is None:
        page_size = (float(mask.width * mask.scale), float(mask.height * mask.scale))
    lines = _stage(page_id, "lines", detect_lines, mask, config, page_size)
    layout = _stage(page_id, "layout", partition_page, lines, page_size[0], page_size[1],
                    config.layout.slope_deg, config.layout.right_to_left)
    document = _stage(page_id, "grouping", group_page, detections, layout, config.grouping)
    text = emit_text(document)

    line_text = fused_text = None
    fusion: Dict[str, FusionResult] = {}
    if line_records is not None:
        fusion = _stage(page_id, "rescore", fuse_document, document, line_records, config.rescore.mean_scope)
        line_text = emit_text(document, {cid: seq.text for cid, seq in line_records.items()})
        fused_text = emit_text(document, {cid: r.sequence.text for cid, r in fusion.items()})

    logger.info(f"Page {page_id}: {len(lines)} lines, {len(layout.regions)} regions, "
                f"{document.column_count} columns, {len(detections)} characters")
    return PageResult(page_id, page_size, tuple(lines), layout, document, text, line_text, fused_text, fusion)


def run_page(manifest: PageManifest, config: AppConfig) -> PageResult:
    """Load a page's inputs and run the full chain; errors carry the page id."""
    page_id = manifest.page_id
    detections = _stage(page_id, "load", load_detections, manifest.detections)
    mask = _stage(page_id, "load", load_mask, manifest.mask, manifest.mask_scale, config.mask.threshold)
    line_records = None
    if manifest.lines:
        line_records = _stage(page_id, "load", load_line_records, manifest.lines)

    page_size = None
    if manifest.page_width is not None and manifest.page_height is not None:
        page_size = (float(manifest.page_width), float(manifest.page_height))
    return process_page(page_id, detections, mask, config, line_records, page_size)


def process_pages(manifests: Sequence[PageManifest], config: AppConfig,
                  continue_on_error: bool = False) -> List[Tuple[PageManifest, Optional[PageResult], Optional[ReadingOrderError]]]:
    """
    Run every page, concurrently when configured; outcomes keep manifest order.
    Without continue_on_error the first failing page (in manifest order) is raised.
    """
    def attempt(manifest):
        try:
            return run_page(manifest, config), None
        except ReadingOrderError as e:
            logger.error(str(e))
            return None, e

    with ThreadPoolExecutor(max_workers=config.pipeline.workers) as executor:
        outcomes = list(executor.map(attempt, manifests))

    for result, error in outcomes:
        if error is not None and not continue_on_error:
            raise error
    return [(m, result, error) for m, (result, error) in zip(manifests, outcomes)]


# Evaluation
class PageEvaluation(BaseModel):
    page_id: str
    lines: Optional[LineEvalReport] = None
    detection: Optional[DetEvalReport] = None
    text: Optional[TextEvalReport] = None
    text_line_only: Optional[TextEvalReport] = None
    text_fused: Optional[TextEvalReport] = None


class EvalSummary(BaseModel):
    pages: List[PageEvaluation] = []
    lines: Optional[LineEvalReport] = None
    detection: Optional[DetEvalReport] = None
    text: Optional[TextEvalReport] = None
    text_line_only: Optional[TextEvalReport] = None
    text_fused: Optional[TextEvalReport] = None
    skipped: List[str] = []
    failed: List[str] = []


def evaluate_page(result: PageResult, gt: GroundTruth, config: AppConfig) -> PageEvaluation:
    quads = [column_quad(col.column) for _, col in result.document.iter_columns()]
    evaluation = PageEvaluation(
        page_id=result.page_id,
        lines=eval_lines(result.lines, gt.lines, config.metrics.dist_threshold),
        detection=eval_detection(quads, gt.quads, config.metrics.iou_thresholds),
    )
    if strip_whitespace(gt.transcript):
        evaluation.text = eval_text(result.text, gt.transcript)
        if result.fused_text is not None:
            evaluation.text_line_only = eval_text(result.line_text, gt.transcript)
            evaluation.text_fused = eval_text(result.fused_text, gt.transcript)
    else:
        logger.warning(f"Page {result.page_id}: ground-truth transcript is empty, skipping CR/AR")
    return evaluation


def _combine(cls, reports):
    reports = [r for r in reports if r is not None]
    return cls.combine(reports) if reports else None


def summarize(evaluations: Sequence[PageEvaluation]) -> EvalSummary:
    """Micro-average page reports by summing their counts."""
    return EvalSummary(
        pages=list(evaluations),
        lines=_combine(LineEvalReport, [e.lines for e in evaluations]),
        detection=_combine(DetEvalReport, [e.detection for e in evaluations]),
        text=_combine(TextEvalReport, [e.text for e in evaluations]),
        text_line_only=_combine(TextEvalReport, [e.text_line_only for e in evaluations]),
        text_fused=_combine(TextEvalReport, [e.text_fused for e in evaluations]),
    )


def run_eval(manifests: Sequence[PageManifest], config: AppConfig, continue_on_error: bool = False) -> EvalSummary:
    """Process and score every page that has ground truth."""
    evaluations, skipped, failed = [], [], []
    for manifest, result, error in process_pages(manifests, config, continue_on_error):
        if error is not None:
            failed.append(manifest.page_id)
            continue
        if not manifest.ground_truth:
            logger.warning(f"Page {manifest.page_id}: no ground truth, skipping evaluation")
            skipped.append(manifest.page_id)
            continue
        gt = _stage(manifest.page_id, "load", load_ground_truth, manifest.ground_truth)
        evaluations.append(_stage(manifest.page_id, "evaluate", evaluate_page, result, gt, config))

    summary = summarize(evaluations)
    summary.skipped = skipped
    summary.failed = failed
    if summary.text is not None:
        logger.info(f"Evaluated {len(evaluations)} pages: CR={summary.text.cr:.4f} AR={summary.text.ar:.4f}")
    return summary
