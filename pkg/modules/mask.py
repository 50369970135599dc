"""
Mask Processing Module for the Reading-Order Restoration system.
Cleans the layout-branch binary mask and turns it into deduplicated boundary
line segments: component filtering, upscaling, Hough voting, segment
extraction and intercept/slope deduplication.
"""

import math
import logging
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import cv2
import numpy as np
from pydantic import BaseModel, validator
from skimage.morphology import skeletonize

from modules.errors import MaskConfigError
from modules.geometry import AABox, LineSegment, Point

# Configure logging
logger = logging.getLogger("MaskProcessing")

VERTICAL = "vertical"
HORIZONTAL = "horizontal"


class HoughParams(BaseModel):
    theta_step: float = 1.0  # degrees
    rho_step: float = 1.0  # pixels
    vote_threshold: Optional[float] = None  # None -> vote_fraction * min(width, height)
    vote_fraction: float = 0.3
    merge_slope_deg: float = 45.0
    merge_intercept_px: float = 200.0
    segment_gap_px: float = 20.0
    min_segment_len_px: float = 50.0
    band_px: float = 2.0  # line-membership band for segment extraction
    thin: bool = True  # vote with the mask skeleton

    class Config:
        extra = "forbid"

    @validator('theta_step', 'rho_step', 'vote_fraction', 'merge_slope_deg',
               'merge_intercept_px', 'segment_gap_px', 'min_segment_len_px', 'band_px')
    def validate_positive(cls, v):
        if v <= 0:
            raise ValueError(f"Value must be positive, got {v}")
        return v

    @validator('vote_threshold')
    def validate_threshold(cls, v):
        if v is not None and v <= 0:
            raise ValueError(f"vote_threshold must be positive, got {v}")
        return v

    @validator('merge_slope_deg')
    def validate_slope(cls, v):
        if v > 90:
            raise ValueError(f"merge_slope_deg must be at most 90, got {v}")
        return v


class BinaryMask:
    """
    Boolean line mask. `scale` is the number of page pixels per mask pixel;
    mask pixel (col, row) sits at page coordinate col * scale + (scale - 1) / 2.
    The bit array is read-only once wrapped.
    """

    def __init__(self, bits: np.ndarray, scale: int = 1):
        bits = np.array(bits, dtype=bool, copy=True)
        if bits.ndim != 2:
            raise ValueError(f"Mask bits must be a 2D grid, got shape {bits.shape}")
        if int(scale) != scale or scale < 1:
            raise MaskConfigError(f"Mask scale must be a positive integer, got {scale}")
        bits.setflags(write=False)
        self.bits = bits
        self.scale = int(scale)

    @classmethod
    def from_rows(cls, width: int, height: int, flat_bits: Sequence[bool], scale: int = 1) -> "BinaryMask":
        if len(flat_bits) != width * height:
            raise ValueError(f"Expected {width * height} bits, got {len(flat_bits)}")
        return cls(np.asarray(flat_bits, dtype=bool).reshape(height, width), scale)

    @classmethod
    def empty(cls, width: int, height: int, scale: int = 1) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool), scale)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def true_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.scale == other.scale and np.array_equal(self.bits, other.bits)

    def __repr__(self) -> str:
        return f"BinaryMask(width={self.width}, height={self.height}, scale={self.scale}, true={self.true_count})"


class Component(NamedTuple):
    id: int
    pixel_count: int
    box: AABox  # mask-pixel edges, right/bottom exclusive


class HoughPeak(NamedTuple):
    rho: float  # pixels
    theta: float  # degrees in [0, 180)
    votes: int


def _label(mask: BinaryMask) -> Tuple[int, np.ndarray, np.ndarray]:
    return cv2.connectedComponentsWithStats(
        mask.bits.astype(np.uint8), connectivity=8, ltype=cv2.CV_32S
    )[:3]


def connected_components(mask: BinaryMask) -> List[Component]:
    """8-connected components in raster order of their first pixel."""
    if mask.true_count == 0:
        return []
    n_labels, _, stats = _label(mask)
    components = []
    for label in range(1, n_labels):
        x, y, w, h, area = (int(v) for v in stats[label, :5])
        components.append(Component(label, area, AABox(x, y, x + w, y + h)))
    return components


def filter_noise(mask: BinaryMask, min_area: float) -> BinaryMask:
    """Clear every component with fewer than `min_area` pixels."""
    if min_area < 0:
        raise MaskConfigError(f"min_area must be non-negative, got {min_area}")
    if min_area == 0 or mask.true_count == 0:
        return mask
    n_labels, labels, stats = _label(mask)
    small = stats[:, cv2.CC_STAT_AREA] < min_area
    small[0] = False
    kept = mask.bits & ~small[labels]
    logger.debug(f"Noise filter removed {int(np.count_nonzero(small))} of {n_labels - 1} components")
    return BinaryMask(kept, mask.scale)


def upscale(mask: BinaryMask, factor: int) -> BinaryMask:
    """Nearest-neighbor expansion; the output scale is mask.scale / factor."""
    if int(factor) != factor or factor < 1:
        raise MaskConfigError(f"Upscale factor must be a positive integer, got {factor}")
    factor = int(factor)
    if mask.scale % factor != 0:
        raise MaskConfigError(f"Upscale factor {factor} does not divide mask scale {mask.scale}")
    if factor == 1:
        return mask
    bits = np.repeat(np.repeat(mask.bits, factor, axis=0), factor, axis=1)
    return BinaryMask(bits, mask.scale // factor)


def _vote_threshold(mask: BinaryMask, params: HoughParams) -> float:
    if params.vote_threshold is not None:
        return params.vote_threshold
    return params.vote_fraction * min(mask.width, mask.height)


def hough_lines(mask: BinaryMask, params: HoughParams) -> List[HoughPeak]:
    """
    Standard (rho, theta) Hough transform over a page-scale mask.
    Returns accumulator cells that reach the vote threshold and are maximal in
    their 3x3 neighborhood, strongest first.
    """
    if mask.scale != 1:
        raise MaskConfigError(f"Hough transform expects a page-scale mask, got scale {mask.scale}")

    voters = skeletonize(np.array(mask.bits)) if params.thin else mask.bits
    ys, xs = np.nonzero(voters)
    if xs.size == 0:
        return []
    xs = xs.astype(np.float64)
    ys = ys.astype(np.float64)

    offset = math.ceil(math.hypot(mask.width, mask.height))
    n_rho = int(math.ceil(2 * offset / params.rho_step)) + 1
    thetas_deg = np.arange(0.0, 180.0, params.theta_step)
    thetas = np.deg2rad(thetas_deg)
    cos_t, sin_t = np.cos(thetas), np.sin(thetas)

    accumulator = np.zeros((thetas.size, n_rho), dtype=np.float32)
    for i in range(thetas.size):
        rhos = xs * cos_t[i] + ys * sin_t[i]
        idx = np.rint((rhos + offset) / params.rho_step).astype(np.int64)
        accumulator[i] = np.bincount(idx, minlength=n_rho)[:n_rho]

    threshold = _vote_threshold(mask, params)
    dilated = cv2.dilate(accumulator, np.ones((3, 3), np.uint8))
    peak_t, peak_r = np.nonzero((accumulator >= threshold) & (accumulator >= dilated))

    peaks = [
        HoughPeak(float(r * params.rho_step - offset), float(thetas_deg[t]), int(accumulator[t, r]))
        for t, r in zip(peak_t, peak_r)
    ]
    peaks.sort(key=lambda p: (-p.votes, p.theta, p.rho))
    logger.debug(f"Hough found {len(peaks)} peaks from {xs.size} voters (threshold {threshold:.1f})")
    return peaks


def _clean(v: float) -> float:
    return float(round(v, 6)) + 0.0


def extract_segments(mask: BinaryMask, peaks: Sequence[HoughPeak], params: HoughParams) -> List[LineSegment]:
    """
    Cut each Hough line into the segments actually covered by mask pixels.
    Pixels within band_px of the line are projected onto it and split where
    consecutive projections are more than segment_gap_px apart.
    """
    ys, xs = np.nonzero(mask.bits)
    if xs.size == 0 or not peaks:
        return []
    xs = xs.astype(np.float64)
    ys = ys.astype(np.float64)

    segments = []
    for peak in peaks:
        theta = math.radians(peak.theta)
        c, s = math.cos(theta), math.sin(theta)
        near = np.abs(xs * c + ys * s - peak.rho) <= params.band_px
        if not near.any():
            continue
        t = np.sort(-xs[near] * s + ys[near] * c)
        breaks = np.nonzero(np.diff(t) > params.segment_gap_px)[0]
        starts = np.concatenate(([0], breaks + 1))
        ends = np.concatenate((breaks, [t.size - 1]))
        for a, b in zip(starts, ends):
            t0, t1 = float(t[a]), float(t[b])
            if t1 - t0 < params.min_segment_len_px:
                continue
            p0 = Point(_clean(peak.rho * c - t0 * s), _clean(peak.rho * s + t0 * c))
            p1 = Point(_clean(peak.rho * c - t1 * s), _clean(peak.rho * s + t1 * c))
            segments.append(LineSegment(p0, p1))
    return segments


def classify_segment(seg: LineSegment, slope_deg: float = 45.0) -> Optional[str]:
    """
    Assign the segment to the axis it is closest to, provided it is within
    slope_deg of that axis; otherwise None.
    """
    angle = seg.angle_deg
    from_vertical = abs(angle - 90.0)
    from_horizontal = min(angle, 180.0 - angle)
    if from_vertical <= from_horizontal:
        return VERTICAL if from_vertical <= slope_deg else None
    return HORIZONTAL if from_horizontal <= slope_deg else None


def segment_intercept(seg: LineSegment, kind: str, mid_x: float, mid_y: float) -> float:
    """x where a vertical-class line crosses y = mid_y, or y where a horizontal-class line crosses x = mid_x."""
    if kind == VERTICAL:
        return seg.x_at(mid_y)
    return seg.y_at(mid_x)


def dedup_lines(segments: Sequence[LineSegment], params: HoughParams,
                page_size: Optional[Tuple[float, float]] = None) -> List[LineSegment]:
    """
    Merge redundant detections. Segments are split into near-vertical and
    near-horizontal classes, clustered transitively by intercept, and each
    cluster is represented by its longest member. Output is vertical lines by
    intercept, then horizontal lines by intercept.

    Intercepts are taken on the page midlines. Without page_size the
    midlines of the segments' bounding box stand in, which can merge or
    separate slanted lines differently than the full page would.
    """
    if not segments:
        return []
    if page_size is not None:
        mid_x, mid_y = page_size[0] / 2.0, page_size[1] / 2.0
    else:
        xs = [p.x for seg in segments for p in (seg.p0, seg.p1)]
        ys = [p.y for seg in segments for p in (seg.p0, seg.p1)]
        mid_x, mid_y = (min(xs) + max(xs)) / 2.0, (min(ys) + max(ys)) / 2.0

    classes: Dict[str, List[Tuple[float, LineSegment]]] = {VERTICAL: [], HORIZONTAL: []}
    dropped = 0
    for seg in segments:
        kind = classify_segment(seg, params.merge_slope_deg)
        if kind is None:
            dropped += 1
            continue
        classes[kind].append((segment_intercept(seg, kind, mid_x, mid_y), seg))

    kept = []
    for kind in (VERTICAL, HORIZONTAL):
        items = sorted(classes[kind], key=lambda it: (it[0], -it[1].length, it[1].to_list()))
        cluster: List[Tuple[float, LineSegment]] = []
        for item in items:
            if cluster and item[0] - cluster[-1][0] >= params.merge_intercept_px:
                kept.append(_representative(cluster))
                cluster = []
            cluster.append(item)
        if cluster:
            kept.append(_representative(cluster))

    logger.debug(f"Dedup kept {len(kept)} of {len(segments)} segments ({dropped} outside both slope classes)")
    return kept


def _representative(cluster: List[Tuple[float, LineSegment]]) -> LineSegment:
    return min(cluster, key=lambda it: (-it[1].length, it[0]))[1]
