"""Shared fixtures for the reading-order test suite."""

import numpy as np
import pytest

from config import AppConfig
from modules.geometry import AABox, CharDetection
from modules.mask import BinaryMask
from modules.synth import SynthSpec, generate


def make_det(x_left, y_top, x_right, y_bottom, label="字", score=0.9):
    return CharDetection(AABox(float(x_left), float(y_top), float(x_right), float(y_bottom)), label, score)


def stroke_mask(width, height, pixels):
    """Scale-1 mask with the given (x, y) pixels set."""
    bits = np.zeros((height, width), dtype=bool)
    for x, y in pixels:
        bits[y, x] = True
    return BinaryMask(bits, 1)


@pytest.fixture
def config():
    return AppConfig()


@pytest.fixture
def simple_spec():
    return SynthSpec(seed=7, n_horizontal=1, n_vertical=1, columns_per_region=2, columns_per_region_max=4,
                     chars_per_column=4, chars_per_column_max=6, double_column_prob=0.5)


@pytest.fixture
def simple_page(simple_spec):
    return generate(simple_spec)
