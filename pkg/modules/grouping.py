"""
Column Grouping Module for the Reading-Order Restoration system.
Groups the characters of each layout region into vertical columns, splits
interlinear double-column runs into their sub-columns, and serializes the
page in reading order (right to left, top to bottom, region by region).
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, validator

from modules.geometry import AABox, CharDetection, Quad
from modules.layout import PageLayout, assign_regions

# Configure logging
logger = logging.getLogger("ColumnGrouping")

SPLICE_STRATEGIES = ("right_first", "left_first")


class GroupingParams(BaseModel):
    """
    Column grouping knobs. "Small" is measured against the width_quantile of
    a column rather than its median (0.5), so a column holding more
    interlinear glyphs than full-width ones is still refined.
    """

    tol_frac: float = 0.5
    small_frac: float = 0.67
    width_quantile: float = 0.75
    small_skip_frac: float = 0.8
    splice: str = "right_first"

    class Config:
        extra = "forbid"

    @validator('tol_frac', 'small_frac')
    def validate_positive(cls, v):
        if v <= 0:
            raise ValueError(f"Value must be positive, got {v}")
        return v

    @validator('width_quantile', 'small_skip_frac')
    def validate_fraction(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"Value must be within [0, 1], got {v}")
        return v

    @validator('splice')
    def validate_splice(cls, v):
        if v not in SPLICE_STRATEGIES:
            raise ValueError(f"splice must be one of {SPLICE_STRATEGIES}, got {v!r}")
        return v


def char_order_key(det: CharDetection) -> Tuple:
    """Top to bottom, then right to left; remaining fields make the order total."""
    b = det.box
    return (b.y_top, -b.x_left, -b.x_right, b.y_bottom, det.label, det.score)


@dataclass(frozen=True)
class Column:
    chars: Tuple[CharDetection, ...]

    def __post_init__(self):
        if not self.chars:
            raise ValueError("A column needs at least one character")
        object.__setattr__(self, "chars", tuple(self.chars))

    @classmethod
    def from_chars(cls, chars: Sequence[CharDetection]) -> "Column":
        return cls(tuple(sorted(chars, key=char_order_key)))

    @property
    def x_extent(self) -> Tuple[float, float]:
        return min(c.box.x_left for c in self.chars), max(c.box.x_right for c in self.chars)

    @property
    def bounds(self) -> AABox:
        return AABox.bounding(c.box for c in self.chars)

    @property
    def text(self) -> str:
        return "".join(c.label for c in self.chars)

    def __len__(self) -> int:
        return len(self.chars)


def column_order_key(col: Column) -> Tuple[float, float, float]:
    bounds = col.bounds
    return (-bounds.x_right, bounds.y_top, -bounds.x_left)


@dataclass(frozen=True)
class OrderedColumn:
    """A grouped column plus its reading-order pieces after double-column refinement."""

    column: Column
    pieces: Tuple[Column, ...]

    @property
    def chars(self) -> Tuple[CharDetection, ...]:
        return tuple(c for piece in self.pieces for c in piece.chars)

    @property
    def text(self) -> str:
        return "".join(c.label for c in self.chars)


@dataclass(frozen=True)
class DocumentRegion:
    region_id: int
    columns: Tuple[OrderedColumn, ...]


@dataclass(frozen=True)
class Document:
    regions: Tuple[DocumentRegion, ...] = ()

    def iter_columns(self) -> List[Tuple[str, OrderedColumn]]:
        """(column id, column) pairs in reading order; ids are "<region>:<index>"."""
        return [
            (f"{region.region_id}:{index}", col)
            for region in self.regions
            for index, col in enumerate(region.columns)
        ]

    @property
    def column_count(self) -> int:
        return sum(len(r.columns) for r in self.regions)

    @property
    def chars(self) -> List[CharDetection]:
        return [c for _, col in self.iter_columns() for c in col.chars]

    def to_record(self) -> Dict[str, Any]:
        return {
            "regions": [
                {
                    "region_id": region.region_id,
                    "columns": [
                        {
                            "column_id": f"{region.region_id}:{index}",
                            "bounds": col.column.bounds.to_list(),
                            "text": col.text,
                            "pieces": len(col.pieces),
                        }
                        for index, col in enumerate(region.columns)
                    ],
                }
                for region in self.regions
            ]
        }


def _link_sorted(values: np.ndarray, threshold: float, parent: List[int]) -> None:
    order = np.argsort(values, kind="stable")
    gaps = np.diff(values[order])
    for k in np.nonzero(gaps < threshold)[0]:
        _union(parent, int(order[k]), int(order[k + 1]))


def _find(parent: List[int], i: int) -> int:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def _union(parent: List[int], a: int, b: int) -> None:
    ra, rb = _find(parent, a), _find(parent, b)
    if ra != rb:
        parent[max(ra, rb)] = min(ra, rb)


def group_columns(chars: Sequence[CharDetection], tol_frac: float = 0.5) -> List[Column]:
    """
    Join characters whose left edges or right edges differ by less than
    tol_frac x median width, transitively. Columns come back right to left.
    """
    if tol_frac <= 0:
        raise ValueError(f"tol_frac must be positive, got {tol_frac}")
    if not chars:
        return []

    lefts = np.array([c.box.x_left for c in chars], dtype=np.float64)
    rights = np.array([c.box.x_right for c in chars], dtype=np.float64)
    threshold = tol_frac * float(np.median(rights - lefts))

    # Within one axis, |a - b| < t links a and b exactly when every sorted
    # neighbor gap between them is below t, so adjacent links suffice.
    parent = list(range(len(chars)))
    _link_sorted(lefts, threshold, parent)
    _link_sorted(rights, threshold, parent)

    members: Dict[int, List[CharDetection]] = {}
    for i, det in enumerate(chars):
        members.setdefault(_find(parent, i), []).append(det)

    columns = sorted((Column.from_chars(group) for group in members.values()), key=column_order_key)
    logger.debug(f"Grouped {len(chars)} characters into {len(columns)} columns (threshold {threshold:.1f}px)")
    return columns


def _is_stack(chars: Sequence[CharDetection]) -> bool:
    """True when no two characters overlap vertically."""
    bottom = float("-inf")
    for det in sorted(chars, key=lambda d: d.box.y_top):
        if det.box.y_top < bottom:
            return False
        bottom = max(bottom, det.box.y_bottom)
    return True


def _separated(groups: Sequence[Column]) -> bool:
    """Every center of a group lies right of every center of the next group."""
    centers = [[c.box.center.x for c in g.chars] for g in groups]
    return all(min(a) > max(b) for a, b in zip(centers, centers[1:]))


def _split_run(run: Sequence[CharDetection], tol_frac: float) -> List[Column]:
    """
    Sub-columns of an interlinear run, right to left.

    The edge-tolerance grouping is kept when it yields at most two stacked,
    horizontally separated sub-columns. Otherwise the run is read as a
    balanced double line: ordered by center x, the right sub-column takes
    the larger half (the extra character when the count is odd). Side by
    side pairs always overlap vertically, so a jittered double line never
    passes the stack test with a wrong cut.
    """
    groups = group_columns(run, tol_frac)
    if len(groups) <= 2 and all(_is_stack(g.chars) for g in groups) and _separated(groups):
        return groups

    by_x = sorted(run, key=lambda d: (-d.box.center.x,) + char_order_key(d))
    cut = (len(by_x) + 1) // 2
    logger.debug(f"Edge grouping of a {len(run)}-character run gave {len(groups)} groups; "
                 f"splitting {cut}/{len(by_x) - cut} by center")
    return [Column.from_chars(part) for part in (by_x[:cut], by_x[cut:]) if part]


def refine_double_columns(col: Column, small_frac: float = 0.67, tol_frac: float = 0.5,
                          width_quantile: float = 0.75, small_skip_frac: float = 0.8,
                          splice: str = "right_first") -> List[Column]:
    """
    Split interlinear runs of small characters out of a column.

    A character is small when narrower than small_frac times the column's
    width quantile. Each maximal vertical run of small characters is regrouped
    into sub-columns (see _split_run), which replace the run in reading order
    (right sub-column first unless splice is "left_first"). Returns the column
    pieces in reading order; an unrefined column comes back as [col].
    """
    if splice not in SPLICE_STRATEGIES:
        raise ValueError(f"splice must be one of {SPLICE_STRATEGIES}, got {splice!r}")

    widths = np.array([c.box.width for c in col.chars], dtype=np.float64)
    reference = float(np.quantile(widths, width_quantile))
    small = widths < small_frac * reference
    n_small = int(np.count_nonzero(small))
    if n_small == 0:
        return [col]
    if n_small > small_skip_frac * len(col):
        logger.warning(f"Skipping double-column refinement: {n_small} of {len(col)} characters are small")
        return [col]

    pieces: List[Column] = []
    body: List[CharDetection] = []
    run: List[CharDetection] = []

    def flush_run():
        subcolumns = _split_run(run, tol_frac)
        if splice == "left_first":
            subcolumns.reverse()
        pieces.extend(subcolumns)
        run.clear()

    for det, is_small in zip(col.chars, small):
        if is_small:
            if body:
                pieces.append(Column(tuple(body)))
                body = []
            run.append(det)
        else:
            if run:
                flush_run()
            body.append(det)
    if run:
        flush_run()
    if body:
        pieces.append(Column(tuple(body)))

    return pieces


def order_document(layout: PageLayout, columns_by_region: Mapping[int, Sequence[Column]],
                   params: Optional[GroupingParams] = None) -> Document:
    """Regions in layout order, columns right to left, double-column runs spliced in."""
    params = params or GroupingParams()
    regions = []
    for region in layout.ordered_regions():
        columns = sorted(columns_by_region.get(region.id, ()), key=column_order_key)
        if not columns:
            continue
        ordered = tuple(
            OrderedColumn(col, tuple(refine_double_columns(
                col, params.small_frac, params.tol_frac, params.width_quantile,
                params.small_skip_frac, params.splice,
            )))
            for col in columns
        )
        regions.append(DocumentRegion(region.id, ordered))
    return Document(tuple(regions))


def group_page(dets: Sequence[CharDetection], layout: PageLayout,
               params: Optional[GroupingParams] = None) -> Document:
    """assign_region, group_columns and order_document for one page."""
    params = params or GroupingParams()
    buckets = assign_regions(dets, layout)
    columns_by_region = {rid: group_columns(chars, params.tol_frac) for rid, chars in buckets.items()}
    document = order_document(layout, columns_by_region, params)
    logger.debug(f"Grouped {len(dets)} characters into {document.column_count} columns "
                 f"across {len(document.regions)} regions")
    return document


def column_quad(col: Column) -> Quad:
    return Quad.from_box(col.bounds)


def emit_text(doc: Document, replacements: Optional[Mapping[str, str]] = None) -> str:
    """
    One line per column, a blank line between regions, no trailing newline.
    `replacements` substitutes the text of columns by column id.
    """
    replacements = replacements or {}
    blocks = []
    for region in doc.regions:
        lines = []
        for index, col in enumerate(region.columns):
            column_id = f"{region.region_id}:{index}"
            lines.append(replacements.get(column_id, col.text))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)
