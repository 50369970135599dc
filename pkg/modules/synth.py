"""
Synthetic Page Generator Module for the Reading-Order Restoration system.
Builds seeded pages with known boundary lines, layout, reading order and
transcript, simulates the detector and layout-branch outputs for them, and
degrades those outputs for robustness tests.
"""

import math
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, root_validator, validator

from modules.errors import GenerationError
from modules.geometry import AABox, CharDetection, LineSegment, Quad
from modules.grouping import Column, Document, DocumentRegion, OrderedColumn, column_quad, emit_text
from modules.layout import PageLayout, partition_page
from modules.mask import BinaryMask
from modules.rescore import ScoredSequence

# Configure logging
logger = logging.getLogger("SynthGenerator")

DEFAULT_ALPHABET = "天地玄黄宇宙洪荒日月盈昃辰宿列张寒来暑往秋收冬藏闰余成岁律吕调阳云腾致雨露结为霜金生丽水玉出昆冈"
MIN_LINE_SEPARATION = 300


class SynthSpec(BaseModel):
    seed: int = 0
    page_width: int = 1200
    page_height: int = 1400
    n_horizontal: int = 0
    n_vertical: int = 0
    columns_per_region: int = 3
    columns_per_region_max: Optional[int] = None
    chars_per_column: int = 6
    chars_per_column_max: Optional[int] = None
    double_column_prob: float = 0.0
    glyph_size: int = 40  # full-width glyph; interlinear glyphs are half of it
    margin: int = 30  # clearance between text and region edges
    jitter: float = 0.0
    label_flip_prob: float = 0.0
    speck_count: int = 0
    speck_size: int = 3  # mask pixels per side
    mask_scale: int = 4
    band: float = 20.0
    alphabet: str = DEFAULT_ALPHABET

    class Config:
        extra = "forbid"

    @validator('n_horizontal', 'n_vertical', 'speck_count', 'margin')
    def validate_count(cls, v):
        if v < 0:
            raise ValueError(f"Count must be non-negative, got {v}")
        return v

    @validator('columns_per_region', 'chars_per_column', 'speck_size', 'mask_scale',
               'page_width', 'page_height')
    def validate_positive(cls, v):
        if v < 1:
            raise ValueError(f"Value must be at least 1, got {v}")
        return v

    @validator('double_column_prob', 'label_flip_prob')
    def validate_probability(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"Probability must be within [0, 1], got {v}")
        return v

    @validator('jitter')
    def validate_jitter(cls, v):
        if v < 0:
            raise ValueError(f"Jitter must be non-negative, got {v}")
        return v

    @validator('band')
    def validate_band(cls, v):
        if v <= 0:
            raise ValueError(f"Band must be positive, got {v}")
        return v

    @validator('glyph_size')
    def validate_glyph(cls, v):
        if v < 8 or v % 2:
            raise ValueError(f"glyph_size must be an even number of at least 8, got {v}")
        return v

    @validator('alphabet')
    def validate_alphabet(cls, v):
        symbols = "".join(dict.fromkeys(v))
        if not symbols.strip():
            raise ValueError("Alphabet must contain at least one symbol")
        return "".join(s for s in symbols if not s.isspace())

    @root_validator(skip_on_failure=True)
    def validate_ranges(cls, values):
        for key in ('columns_per_region', 'chars_per_column'):
            upper = values.get(f"{key}_max")
            if upper is not None and upper < values[key]:
                raise ValueError(f"{key}_max ({upper}) must be at least {key} ({values[key]})")
        if values["double_column_prob"] > 0 and values["chars_per_column"] < 2:
            raise ValueError("Interlinear runs need at least 2 characters per column, "
                             f"got chars_per_column={values['chars_per_column']}")
        scale = values['mask_scale']
        if values['page_width'] % scale or values['page_height'] % scale:
            raise ValueError(f"Page size {values['page_width']}x{values['page_height']} "
                             f"must be a multiple of mask_scale {scale}")
        return values

    @property
    def small_glyph(self) -> int:
        return self.glyph_size // 2

    @property
    def row_pitch(self) -> int:
        """Vertical distance between consecutive full-width glyph tops."""
        return self.glyph_size + 2 * (self.glyph_size // 10)


@dataclass(frozen=True)
class SynthPage:
    spec: SynthSpec
    lines: Tuple[LineSegment, ...]
    layout: PageLayout
    document: Document
    transcript: str
    line_quads: Tuple[Quad, ...]
    line_texts: Tuple[str, ...]
    detections: Tuple[CharDetection, ...]
    mask: BinaryMask

    @property
    def page_size(self) -> Tuple[int, int]:
        return self.spec.page_width, self.spec.page_height


def render_mask(lines: Sequence[LineSegment], page_size: Tuple[int, int], scale: int = 4,
                band: float = 20.0) -> BinaryMask:
    """
    Line mask at 1/scale resolution: a mask pixel is true when its page
    coordinate lies within `band` of any segment.
    """
    if band <= 0:
        raise ValueError(f"Band must be positive, got {band}")
    width, height = page_size
    mask_w, mask_h = math.ceil(width / scale), math.ceil(height / scale)
    xs = (np.arange(mask_w) * scale + (scale - 1) / 2.0)[np.newaxis, :]
    ys = (np.arange(mask_h) * scale + (scale - 1) / 2.0)[:, np.newaxis]

    bits = np.zeros((mask_h, mask_w), dtype=bool)
    for line in lines:
        x0, y0 = line.p0.x, line.p0.y
        dx, dy = line.p1.x - x0, line.p1.y - y0
        t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        dist_sq = (xs - x0 - t * dx) ** 2 + (ys - y0 - t * dy) ** 2
        bits |= dist_sq <= band * band
    return BinaryMask(bits, scale)


def _line_positions(rng: np.random.Generator, count: int, extent: int, axis: str) -> List[int]:
    slack = extent - (count + 1) * MIN_LINE_SEPARATION
    if slack < 0:
        raise GenerationError(f"{count} {axis} lines need at least "
                              f"{(count + 1) * MIN_LINE_SEPARATION}px, page has {extent}px")
    offsets = np.sort(rng.integers(0, slack + 1, size=count))
    return [(k + 1) * MIN_LINE_SEPARATION + int(offsets[k]) for k in range(count)]


def _sample_count(rng: np.random.Generator, lower: int, upper: Optional[int], fit: int, what: str,
                  region_id: int) -> int:
    if fit < lower:
        raise GenerationError(f"Region {region_id} fits {fit} {what}, spec requires at least {lower}")
    upper = lower if upper is None else upper
    return min(int(rng.integers(lower, upper + 1)), fit)


def _label(rng: np.random.Generator, alphabet: str) -> str:
    return alphabet[int(rng.integers(len(alphabet)))]


def _score(rng: np.random.Generator) -> float:
    return round(float(rng.uniform(0.6, 1.0)), 4)


def _build_column(rng: np.random.Generator, spec: SynthSpec, x_left: float, y_top: float,
                  n_slots: int) -> Tuple[Column, Tuple[Column, ...]]:
    """One column of full-width glyphs with at most one interlinear run."""
    glyph, small = spec.glyph_size, spec.small_glyph
    pitch = spec.row_pitch

    # A run of r rows adds 2r half-width glyphs; keep them outnumbered by
    # full-width ones so the width statistics stay anchored. Columns too short
    # for that still take a one-row run.
    run_rows = [r for r in (1, 2) if 2 * r < n_slots - 1] or ([1] if n_slots >= 2 else [])
    run_slot, n_rows = None, 0
    if run_rows and rng.random() < spec.double_column_prob:
        n_rows = int(rng.choice(run_rows))
        run_slot = int(rng.integers(n_slots))

    pieces: List[Column] = []
    body: List[CharDetection] = []
    for slot in range(n_slots):
        top = y_top + slot * pitch
        if slot != run_slot:
            body.append(CharDetection(AABox(x_left, top, x_left + glyph, top + glyph),
                                      _label(rng, spec.alphabet), _score(rng)))
            continue
        if body:
            pieces.append(Column(tuple(body)))
            body = []
        right, left = [], []
        for row in range(n_rows):
            row_top = top + row * (pitch // 2)
            right.append(CharDetection(AABox(x_left + small, row_top, x_left + glyph, row_top + small),
                                       _label(rng, spec.alphabet), _score(rng)))
            left.append(CharDetection(AABox(x_left, row_top, x_left + small, row_top + small),
                                      _label(rng, spec.alphabet), _score(rng)))
        pieces.extend([Column(tuple(right)), Column(tuple(left))])
    if body:
        pieces.append(Column(tuple(body)))

    chars = [c for piece in pieces for c in piece.chars]
    return Column.from_chars(chars), tuple(pieces)


def _fill_region(rng: np.random.Generator, spec: SynthSpec, region_id: int, rect: AABox) -> List[OrderedColumn]:
    glyph, margin, pitch = spec.glyph_size, spec.margin, spec.row_pitch
    min_gap = glyph // 2
    avail_w = rect.width - 2 * margin
    avail_h = rect.height - 2 * margin

    col_fit = max(0, int((avail_w + min_gap) // (glyph + min_gap)))
    n_cols = _sample_count(rng, spec.columns_per_region, spec.columns_per_region_max, col_fit,
                           "columns", region_id)
    slot_fit = max(0, int((avail_h + pitch - glyph) // pitch))
    if slot_fit < spec.chars_per_column:
        raise GenerationError(f"Region {region_id} fits {slot_fit} characters per column, "
                              f"spec requires at least {spec.chars_per_column}")

    gaps = rng.integers(min_gap, glyph + 1, size=max(n_cols - 1, 0))
    if n_cols * glyph + int(gaps.sum()) > avail_w:
        gaps = np.full(max(n_cols - 1, 0), min_gap)
    used_w = n_cols * glyph + int(gaps.sum())
    x_right = rect.x_right - margin - int(rng.integers(0, int(avail_w - used_w) + 1))

    columns = []
    for k in range(n_cols):
        n_slots = _sample_count(rng, spec.chars_per_column, spec.chars_per_column_max, slot_fit,
                                "characters per column", region_id)
        used_h = n_slots * pitch - (pitch - glyph)
        y_top = rect.y_top + margin + int(rng.integers(0, int(avail_h - used_h) + 1))
        column, pieces = _build_column(rng, spec, float(x_right - glyph), float(y_top), n_slots)
        columns.append(OrderedColumn(column, pieces))
        if k < n_cols - 1:
            x_right -= glyph + int(gaps[k])
    return columns


def generate(spec: SynthSpec) -> SynthPage:
    """Seeded page with exact detections and an exact line mask."""
    rng = np.random.default_rng(spec.seed)
    width, height = spec.page_width, spec.page_height

    lines = [LineSegment.from_coords(x, 0, x, height - 1)
             for x in _line_positions(rng, spec.n_vertical, width, "vertical")]
    lines += [LineSegment.from_coords(0, y, width - 1, y)
              for y in _line_positions(rng, spec.n_horizontal, height, "horizontal")]
    layout = partition_page(lines, width, height)

    regions = []
    for region in layout.ordered_regions():
        columns = _fill_region(rng, spec, region.id, region.rect)
        regions.append(DocumentRegion(region.id, tuple(columns)))
    document = Document(tuple(regions))

    chars = document.chars
    order = rng.permutation(len(chars))
    detections = tuple(chars[i] for i in order)
    columns = [col for _, col in document.iter_columns()]

    page = SynthPage(
        spec=spec,
        lines=tuple(lines),
        layout=layout,
        document=document,
        transcript=emit_text(document),
        line_quads=tuple(column_quad(col.column) for col in columns),
        line_texts=tuple(col.text for col in columns),
        detections=detections,
        mask=render_mask(lines, (width, height), spec.mask_scale, spec.band),
    )
    logger.debug(f"Generated page seed={spec.seed}: {len(lines)} lines, {len(layout.regions)} regions, "
                 f"{len(columns)} columns, {len(detections)} characters")
    return page


def corrupt(page: SynthPage, spec: SynthSpec) -> SynthPage:
    """
    Degrade the simulated outputs: translate boxes within +/- jitter on each
    axis, flip labels to another symbol (score drops below 0.5), and sprinkle
    square specks on the mask. Ground truth is left untouched.
    """
    rng = np.random.default_rng([spec.seed, 1])
    detections = []
    for det in page.detections:
        if spec.jitter > 0:
            dx, dy = rng.uniform(-spec.jitter, spec.jitter, size=2)
            det = det.translate(round(float(dx), 3), round(float(dy), 3))
        if spec.label_flip_prob > 0 and rng.random() < spec.label_flip_prob:
            others = [s for s in spec.alphabet if s != det.label]
            if others:
                new_label = others[int(rng.integers(len(others)))]
                det = replace(det, label=new_label, score=round(float(rng.uniform(0.05, 0.49)), 4))
        detections.append(det)

    mask = page.mask
    if spec.speck_count > 0:
        bits = np.array(mask.bits)
        size = spec.speck_size
        for _ in range(spec.speck_count):
            row = int(rng.integers(0, max(mask.height - size, 0) + 1))
            col = int(rng.integers(0, max(mask.width - size, 0) + 1))
            bits[row:row + size, col:col + size] = True
        mask = BinaryMask(bits, mask.scale)

    return replace(page, detections=tuple(detections), mask=mask)


def oracle_line_records(page: SynthPage, confidence: float = 0.95) -> Dict[str, ScoredSequence]:
    """A line recognizer that reads every ground-truth column at a fixed confidence."""
    return {
        column_id: ScoredSequence.from_text(col.text, confidence)
        for column_id, col in page.document.iter_columns()
    }
