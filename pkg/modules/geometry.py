"""
Geometry Module for the Reading-Order Restoration system.
Points, boxes, boundary segments and convex quadrangles, with the overlap and
distance primitives the mask, layout, grouping and evaluation modules share.
"""

import math
import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from modules.errors import InvalidPolygonError

# Configure logging
logger = logging.getLogger("Geometry")


@dataclass(frozen=True)
class Point:
    """A position in page pixels."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"Point coordinates must be finite, got ({self.x}, {self.y})")

    def distance_to(self, other: "Point") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def to_list(self) -> List[float]:
        return [self.x, self.y]


@dataclass(frozen=True)
class AABox:
    """Axis-aligned box in page pixels (left, top, right, bottom)."""

    x_left: float
    y_top: float
    x_right: float
    y_bottom: float

    def __post_init__(self):
        coords = (self.x_left, self.y_top, self.x_right, self.y_bottom)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"Box coordinates must be finite, got {coords}")
        if self.x_left > self.x_right or self.y_top > self.y_bottom:
            raise ValueError(f"Box must satisfy x_left <= x_right and y_top <= y_bottom, got {coords}")

    @property
    def width(self) -> float:
        return self.x_right - self.x_left

    @property
    def height(self) -> float:
        return self.y_bottom - self.y_top

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return Point((self.x_left + self.x_right) / 2.0, (self.y_top + self.y_bottom) / 2.0)

    def intersection_area(self, other: "AABox") -> float:
        w = min(self.x_right, other.x_right) - max(self.x_left, other.x_left)
        h = min(self.y_bottom, other.y_bottom) - max(self.y_top, other.y_top)
        if w <= 0 or h <= 0:
            return 0.0
        return w * h

    def contains(self, p: Point) -> bool:
        """Closed containment test."""
        return self.x_left <= p.x <= self.x_right and self.y_top <= p.y <= self.y_bottom

    def translate(self, dx: float, dy: float) -> "AABox":
        return AABox(self.x_left + dx, self.y_top + dy, self.x_right + dx, self.y_bottom + dy)

    def to_list(self) -> List[float]:
        return [self.x_left, self.y_top, self.x_right, self.y_bottom]

    @classmethod
    def bounding(cls, boxes: Iterable["AABox"]) -> "AABox":
        boxes = list(boxes)
        if not boxes:
            raise ValueError("Cannot bound an empty set of boxes")
        return cls(
            min(b.x_left for b in boxes),
            min(b.y_top for b in boxes),
            max(b.x_right for b in boxes),
            max(b.y_bottom for b in boxes),
        )


def iou_aabox(a: AABox, b: AABox) -> float:
    """Intersection over union of two boxes; 0 for disjoint or zero-area pairs."""
    inter = a.intersection_area(b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def signed_area(vertices: Sequence[Point]) -> float:
    """Shoelace sum; positive for counter-clockwise winding (x right, y up)."""
    total = 0.0
    n = len(vertices)
    for i in range(n):
        p, q = vertices[i], vertices[(i + 1) % n]
        total += p.x * q.y - q.x * p.y
    return total / 2.0


def polygon_area(vertices: Sequence[Point]) -> float:
    """Absolute area of a simple polygon."""
    if len(vertices) < 3:
        raise InvalidPolygonError(f"A polygon needs at least 3 vertices, got {len(vertices)}")
    return abs(signed_area(vertices))


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)


def _segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    """True when the two segments intersect at a single interior point."""
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


@dataclass(frozen=True)
class Quad:
    """
    Convex quadrangle annotation or prediction. Vertices are stored
    counter-clockwise so the shoelace sum is non-negative; collinear vertices
    are allowed.
    """

    vertices: Tuple[Point, Point, Point, Point]

    def __post_init__(self):
        verts = tuple(self.vertices)
        if len(verts) != 4:
            raise InvalidPolygonError(f"A quad needs exactly 4 vertices, got {len(verts)}")
        a, b, c, d = verts
        if _segments_cross(a, b, c, d) or _segments_cross(b, c, d, a):
            raise InvalidPolygonError(f"Quad is self-intersecting: {[v.to_list() for v in verts]}")
        turns = [_cross(verts[i - 1], verts[i], verts[(i + 1) % 4]) for i in range(4)]
        if min(turns) < 0 < max(turns):
            raise InvalidPolygonError(f"Quad is not convex: {[v.to_list() for v in verts]}")
        if signed_area(verts) < 0:
            verts = tuple(reversed(verts))
        object.__setattr__(self, "vertices", verts)

    @classmethod
    def from_box(cls, box: AABox) -> "Quad":
        return cls((
            Point(box.x_left, box.y_top),
            Point(box.x_right, box.y_top),
            Point(box.x_right, box.y_bottom),
            Point(box.x_left, box.y_bottom),
        ))

    @classmethod
    def from_list(cls, coords: Sequence[Sequence[float]]) -> "Quad":
        return cls(tuple(Point(float(x), float(y)) for x, y in coords))

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    def bounds(self) -> AABox:
        xs = [v.x for v in self.vertices]
        ys = [v.y for v in self.vertices]
        return AABox(min(xs), min(ys), max(xs), max(ys))

    def to_list(self) -> List[List[float]]:
        return [v.to_list() for v in self.vertices]


def clip_polygon(subject: Sequence[Point], clip: Sequence[Point]) -> List[Point]:
    """
    Sutherland-Hodgman clipping of `subject` against the convex polygon `clip`.
    Returns the vertices of the intersection, or an empty list.
    """
    if len(subject) < 3 or len(clip) < 3:
        return []
    clip = list(clip)
    area = signed_area(clip)
    if area == 0:
        return []
    if area < 0:
        clip.reverse()

    output = list(subject)
    cp1 = clip[-1]
    for cp2 in clip:
        if not output:
            return []
        candidates = output
        output = []
        s = candidates[-1]
        s_side = _cross(cp1, cp2, s)
        for e in candidates:
            e_side = _cross(cp1, cp2, e)
            if e_side >= 0:
                if s_side < 0:
                    output.append(_edge_intersection(s, e, s_side, e_side))
                output.append(e)
            elif s_side >= 0:
                output.append(_edge_intersection(s, e, s_side, e_side))
            s, s_side = e, e_side
        cp1 = cp2

    if len(output) < 3:
        return []
    return output


def _edge_intersection(s: Point, e: Point, s_side: float, e_side: float) -> Point:
    t = s_side / (s_side - e_side)
    return Point(s.x + t * (e.x - s.x), s.y + t * (e.y - s.y))


def iou_quad(a: Quad, b: Quad) -> float:
    """Clip-then-shoelace intersection over union of two convex quads."""
    overlap = clip_polygon(a.vertices, b.vertices)
    inter = polygon_area(overlap) if overlap else 0.0
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


@dataclass(frozen=True)
class LineSegment:
    """Boundary line given by its start and end points."""

    p0: Point
    p1: Point

    def __post_init__(self):
        if self.p0 == self.p1:
            raise ValueError(f"Segment endpoints must differ, got {self.p0.to_list()} twice")

    @classmethod
    def from_coords(cls, x0: float, y0: float, x1: float, y1: float) -> "LineSegment":
        return cls(Point(float(x0), float(y0)), Point(float(x1), float(y1)))

    @classmethod
    def from_list(cls, coords: Sequence[Sequence[float]]) -> "LineSegment":
        (x0, y0), (x1, y1) = coords
        return cls.from_coords(x0, y0, x1, y1)

    @property
    def length(self) -> float:
        return self.p0.distance_to(self.p1)

    @property
    def angle_deg(self) -> float:
        """Direction angle in [0, 180) measured from the +x axis."""
        angle = math.degrees(math.atan2(self.p1.y - self.p0.y, self.p1.x - self.p0.x))
        return angle % 180.0

    @property
    def midpoint(self) -> Point:
        return Point((self.p0.x + self.p1.x) / 2.0, (self.p0.y + self.p1.y) / 2.0)

    def x_at(self, y: float) -> float:
        """x of the infinite line at height y (line must not be horizontal)."""
        dy = self.p1.y - self.p0.y
        return self.p0.x + (y - self.p0.y) * (self.p1.x - self.p0.x) / dy

    def y_at(self, x: float) -> float:
        """y of the infinite line at abscissa x (line must not be vertical)."""
        dx = self.p1.x - self.p0.x
        return self.p0.y + (x - self.p0.x) * (self.p1.y - self.p0.y) / dx

    def reversed(self) -> "LineSegment":
        return LineSegment(self.p1, self.p0)

    def to_list(self) -> List[List[float]]:
        return [self.p0.to_list(), self.p1.to_list()]


def segment_pair_distance(a: LineSegment, b: LineSegment) -> float:
    """Endpoint-sum distance, minimized over the two endpoint pairings."""
    direct = a.p0.distance_to(b.p0) + a.p1.distance_to(b.p1)
    crossed = a.p0.distance_to(b.p1) + a.p1.distance_to(b.p0)
    return min(direct, crossed)


@dataclass(frozen=True)
class CharDetection:
    """One recognized character: box, symbol and classification probability."""

    box: AABox
    label: str
    score: float

    def __post_init__(self):
        if not isinstance(self.label, str) or not self.label:
            raise ValueError(f"Detection label must be a non-empty string, got {self.label!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"Detection score must be within [0, 1], got {self.score}")
        if self.box.width <= 0 or self.box.height <= 0:
            raise ValueError(f"Detection box is degenerate: {self.box.to_list()}")

    def translate(self, dx: float, dy: float) -> "CharDetection":
        return replace(self, box=self.box.translate(dx, dy))

    def to_record(self) -> Dict[str, Any]:
        return {"box": self.box.to_list(), "label": self.label, "score": self.score}


def nms(dets: Sequence[CharDetection], iou_threshold: float) -> List[CharDetection]:
    """
    Class-agnostic greedy non-maximum suppression.
    Higher scores win; equal scores are resolved by smaller (x_left, y_top).
    Survivors are returned in that priority order.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be within [0, 1], got {iou_threshold}")
    if not dets:
        return []

    boxes = np.array([d.box.to_list() for d in dets], dtype=np.float64)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    x1, y1, x2, y2 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    areas = (x2 - x1) * (y2 - y1)
    order = np.lexsort((y1, x1, -scores))

    keep = []
    while order.size > 0:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        xx1 = np.maximum(x1[i], x1[rest])
        yy1 = np.maximum(y1[i], y1[rest])
        xx2 = np.minimum(x2[i], x2[rest])
        yy2 = np.minimum(y2[i], y2[rest])

        inter = np.maximum(0.0, xx2 - xx1) * np.maximum(0.0, yy2 - yy1)
        union = areas[i] + areas[rest] - inter
        ovr = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
        order = rest[ovr <= iou_threshold]

    logger.debug(f"NMS kept {len(keep)} of {len(dets)} detections at IoU {iou_threshold}")
    return [dets[i] for i in keep]
