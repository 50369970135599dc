"""
Layout Analysis Module for the Reading-Order Restoration system.
Extends deduplicated boundary lines to full-page cuts, tiles the page into
ordered rectangular regions and assigns characters to them.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

from modules.geometry import AABox, CharDetection, LineSegment, Point
from modules.mask import VERTICAL, classify_segment, segment_intercept

# Configure logging
logger = logging.getLogger("LayoutAnalysis")


@dataclass(frozen=True)
class Region:
    id: int
    rect: AABox
    order: int

    def __post_init__(self):
        if self.rect.area <= 0:
            raise ValueError(f"Region {self.id} has no area: {self.rect.to_list()}")

    def to_record(self) -> Dict[str, Any]:
        return {"id": self.id, "rect": self.rect.to_list(), "order": self.order}


@dataclass(frozen=True)
class PageLayout:
    """
    Rectangular tiling of the page. Regions are stored by id (row-major over
    the cut grid); `order` gives the reading sequence.
    """

    page_width: float
    page_height: float
    regions: Tuple[Region, ...]
    x_cuts: Tuple[float, ...] = ()
    y_cuts: Tuple[float, ...] = ()

    def __post_init__(self):
        orders = sorted(r.order for r in self.regions)
        if orders != list(range(len(self.regions))):
            raise ValueError(f"Region orders must be a permutation of 0..{len(self.regions) - 1}, got {orders}")
        page = AABox(0.0, 0.0, self.page_width, self.page_height)
        for region in self.regions:
            r = region.rect
            if r.x_left < page.x_left or r.y_top < page.y_top or r.x_right > page.x_right or r.y_bottom > page.y_bottom:
                raise ValueError(f"Region {region.id} lies outside the page: {r.to_list()}")

    def ordered_regions(self) -> List[Region]:
        return sorted(self.regions, key=lambda r: r.order)

    def region(self, region_id: int) -> Region:
        for region in self.regions:
            if region.id == region_id:
                return region
        raise KeyError(f"Unknown region id {region_id}")

    def to_record(self) -> Dict[str, Any]:
        return {
            "page_width": self.page_width,
            "page_height": self.page_height,
            "x_cuts": list(self.x_cuts),
            "y_cuts": list(self.y_cuts),
            "regions": [r.to_record() for r in self.ordered_regions()],
        }


def _cut_positions(values: Sequence[float], limit: float) -> Tuple[float, ...]:
    return tuple(sorted({float(v) for v in values if 0.0 < v < limit}))


def partition_page(lines: Sequence[LineSegment], width: float, height: float,
                   slope_deg: float = 45.0, right_to_left: bool = True) -> PageLayout:
    """
    Split the page into a grid of regions.

    Each line becomes a full-page axis-aligned cut at its midline intercept.
    Cuts on or beyond the page border are ignored. Regions are read top to
    bottom by top edge, then right to left by right edge (left to right when
    right_to_left is False).
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"Page size must be positive, got {width}x{height}")

    x_values, y_values = [], []
    for line in lines:
        kind = classify_segment(line, slope_deg)
        if kind is None:
            logger.debug(f"Ignoring line {line.to_list()}: outside both slope classes")
            continue
        intercept = segment_intercept(line, kind, width / 2.0, height / 2.0)
        (x_values if kind == VERTICAL else y_values).append(intercept)

    x_cuts = _cut_positions(x_values, width)
    y_cuts = _cut_positions(y_values, height)
    xs = (0.0,) + x_cuts + (float(width),)
    ys = (0.0,) + y_cuts + (float(height),)

    cells = []
    for row in range(len(ys) - 1):
        for col in range(len(xs) - 1):
            cells.append(AABox(xs[col], ys[row], xs[col + 1], ys[row + 1]))

    if right_to_left:
        ranking = sorted(range(len(cells)), key=lambda i: (cells[i].y_top, -cells[i].x_right))
    else:
        ranking = sorted(range(len(cells)), key=lambda i: (cells[i].y_top, cells[i].x_left))
    order = {cell_id: rank for rank, cell_id in enumerate(ranking)}

    regions = tuple(Region(i, cell, order[i]) for i, cell in enumerate(cells))
    logger.debug(f"Partitioned {width}x{height} page with {len(x_cuts)} vertical and "
                 f"{len(y_cuts)} horizontal cuts into {len(regions)} regions")
    return PageLayout(float(width), float(height), regions, x_cuts, y_cuts)


def assign_region(det: CharDetection, layout: PageLayout) -> int:
    """
    Region id whose rectangle contains the detection's center (clamped to the
    page). A center on a shared edge goes to the region overlapping the box
    most; ties go to the smaller id.
    """
    center = det.box.center
    center = Point(
        min(max(center.x, 0.0), layout.page_width),
        min(max(center.y, 0.0), layout.page_height),
    )
    hits = [r for r in layout.regions if r.rect.contains(center)]
    if len(hits) == 1:
        return hits[0].id
    best = max(hits, key=lambda r: (r.rect.intersection_area(det.box), -r.id))
    return best.id


def assign_regions(dets: Sequence[CharDetection], layout: PageLayout) -> Dict[int, List[CharDetection]]:
    """Bucket detections by region id, preserving input order within a bucket."""
    buckets: Dict[int, List[CharDetection]] = {}
    for det in dets:
        buckets.setdefault(assign_region(det, layout), []).append(det)
    return buckets
