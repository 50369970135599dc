"""
Debug Rendering Module for the Reading-Order Restoration system.
Draws a page-sized overlay of detected lines, region cuts, character boxes,
column boxes and reading-order indices.
"""

import os
import logging
from typing import Any, Dict, Tuple

import cv2
import numpy as np

from modules.errors import InputError
from modules.pipeline import PageResult

# Configure logging
logger = logging.getLogger("DebugRender")

# BGR colors
LINE_COLOR = (0, 0, 220)
CUT_COLOR = (170, 170, 170)
CHAR_COLOR = (60, 160, 60)
COLUMN_COLOR = (200, 90, 20)
INDEX_COLOR = (20, 20, 20)


def _pt(x: float, y: float):
    return int(round(x)), int(round(y))


def draw_overlay(result: PageResult) -> Tuple[np.ndarray, Dict[str, Any]]:
    width, height = (int(round(v)) for v in result.page_size)
    canvas = np.full((height, width, 3), 255, dtype=np.uint8)

    for x in result.layout.x_cuts:
        cv2.line(canvas, _pt(x, 0), _pt(x, height - 1), CUT_COLOR, 1)
    for y in result.layout.y_cuts:
        cv2.line(canvas, _pt(0, y), _pt(width - 1, y), CUT_COLOR, 1)
    for line in result.lines:
        cv2.line(canvas, _pt(line.p0.x, line.p0.y), _pt(line.p1.x, line.p1.y), LINE_COLOR, 3)

    order_indices = []
    for index, (column_id, col) in enumerate(result.document.iter_columns()):
        for det in col.chars:
            b = det.box
            cv2.rectangle(canvas, _pt(b.x_left, b.y_top), _pt(b.x_right, b.y_bottom), CHAR_COLOR, 1)
        bounds = col.column.bounds
        cv2.rectangle(canvas, _pt(bounds.x_left, bounds.y_top), _pt(bounds.x_right, bounds.y_bottom),
                      COLUMN_COLOR, 2)
        cv2.putText(canvas, str(index), _pt(bounds.x_left, max(bounds.y_top - 4, 12)),
                    cv2.FONT_HERSHEY_SIMPLEX, 0.5, INDEX_COLOR, 1, cv2.LINE_AA)
        order_indices.append({"index": index, "column_id": column_id})

    metadata = {
        "width": width,
        "height": height,
        "lines": len(result.lines),
        "cuts": len(result.layout.x_cuts) + len(result.layout.y_cuts),
        "regions": len(result.layout.regions),
        "columns": len(order_indices),
        "order": order_indices,
    }
    return canvas, metadata


def render_debug(result: PageResult, path: str) -> Dict[str, Any]:
    """Write the overlay image to `path` and return what was drawn."""
    canvas, metadata = draw_overlay(result)
    directory = os.path.dirname(path)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
        written = cv2.imwrite(path, canvas)
    except (OSError, cv2.error) as e:
        raise InputError(f"cannot write debug image: {e}", path)
    if not written:
        raise InputError("cannot write debug image", path)
    logger.info(f"Rendered debug overlay for page {result.page_id} to {path}")
    return metadata
