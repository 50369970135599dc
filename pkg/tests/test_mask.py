import numpy as np
import pytest

from modules.errors import MaskConfigError
from modules.geometry import LineSegment, segment_pair_distance
from modules.mask import (
    HORIZONTAL, VERTICAL, BinaryMask, HoughParams, HoughPeak, classify_segment, connected_components,
    dedup_lines, extract_segments, filter_noise, hough_lines, upscale,
)
from modules.pipeline import detect_lines
from modules.synth import SynthSpec, generate
from tests.conftest import stroke_mask


def vertical_stroke(width, height, x, rows):
    return stroke_mask(width, height, [(x, y) for y in rows])


class TestBinaryMask:
    def test_bits_are_read_only(self):
        mask = BinaryMask.empty(4, 3)
        with pytest.raises(ValueError):
            mask.bits[0, 0] = True

    def test_from_rows(self):
        mask = BinaryMask.from_rows(3, 2, [0, 1, 0, 0, 0, 1], scale=2)
        assert mask.width == 3 and mask.height == 2 and mask.scale == 2
        assert mask.true_count == 2
        assert mask.bits[0, 1] and mask.bits[1, 2]

    def test_bad_scale(self):
        with pytest.raises(MaskConfigError):
            BinaryMask.empty(2, 2, scale=0)


class TestComponents:
    def test_empty_mask(self):
        assert connected_components(BinaryMask.empty(10, 10)) == []

    def test_diagonal_pixels_are_connected(self):
        mask = stroke_mask(5, 5, [(0, 0), (1, 1), (2, 2)])
        components = connected_components(mask)
        assert len(components) == 1
        assert components[0].pixel_count == 3
        assert components[0].box.to_list() == [0, 0, 3, 3]

    def test_components_partition_pixels(self):
        rng = np.random.default_rng(1)
        mask = BinaryMask(rng.random((40, 50)) < 0.3, 1)
        components = connected_components(mask)
        assert sum(c.pixel_count for c in components) == mask.true_count


class TestFilterNoise:
    def test_zero_area_is_identity(self):
        mask = stroke_mask(5, 5, [(2, 2)])
        assert filter_noise(mask, 0) == mask

    def test_lone_pixel_removed(self):
        mask = stroke_mask(5, 5, [(2, 2)])
        assert filter_noise(mask, 2).true_count == 0

    def test_speck_removed_line_kept(self):
        bits = np.zeros((120, 60), dtype=bool)
        bits[10:110, 5:10] = True  # 500 px line blob
        bits[20:22, 40:45] = True  # 10 px speck
        cleaned = filter_noise(BinaryMask(bits, 1), 50)
        assert cleaned.true_count == 500
        assert not cleaned.bits[20:22, 40:45].any()

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(2)
        mask = BinaryMask(rng.random((30, 30)) < 0.35, 1)
        loose, strict = filter_noise(mask, 3), filter_noise(mask, 8)
        assert not (strict.bits & ~loose.bits).any()

    def test_negative_area_rejected(self):
        with pytest.raises(MaskConfigError):
            filter_noise(BinaryMask.empty(2, 2), -1)


class TestUpscale:
    def test_factor_one_is_identity(self):
        mask = stroke_mask(3, 3, [(1, 1)])
        assert upscale(mask, 1) == mask

    def test_block_expansion(self):
        mask = BinaryMask(stroke_mask(2, 2, [(1, 0)]).bits, 4)
        full = upscale(mask, 4)
        assert (full.width, full.height, full.scale) == (8, 8, 1)
        assert full.true_count == 16
        assert full.bits[0:4, 4:8].all()

    def test_count_scales_quadratically(self):
        rng = np.random.default_rng(4)
        mask = BinaryMask(rng.random((6, 7)) < 0.5, 2)
        assert upscale(mask, 2).true_count == mask.true_count * 4

    def test_factor_must_divide_scale(self):
        with pytest.raises(MaskConfigError):
            upscale(BinaryMask.empty(2, 2, scale=4), 3)


class TestHough:
    def test_empty_mask(self):
        assert hough_lines(BinaryMask.empty(20, 20), HoughParams()) == []

    def test_requires_page_scale(self):
        with pytest.raises(MaskConfigError):
            hough_lines(BinaryMask.empty(20, 20, scale=2), HoughParams())

    def test_vertical_stroke(self):
        mask = vertical_stroke(100, 120, 50, range(10, 90))
        peaks = hough_lines(mask, HoughParams(vote_threshold=40))
        assert peaks
        best = peaks[0]
        assert best.theta in (0.0, 1.0, 179.0)
        assert abs(abs(best.rho) - 50) <= 1
        assert best.votes >= 75

    def test_diagonal_stroke(self):
        mask = stroke_mask(100, 100, [(i, i) for i in range(10, 91)])
        peaks = hough_lines(mask, HoughParams(vote_threshold=40))
        assert abs(peaks[0].theta - 135.0) <= 1.0
        assert abs(peaks[0].rho) <= 1.0

    def test_thick_band_votes_with_skeleton(self):
        mask = stroke_mask(100, 100, [(x, y) for x in range(45, 56) for y in range(10, 91)])
        before = mask.bits.copy()
        peaks = hough_lines(mask, HoughParams(vote_threshold=40, thin=True))
        assert peaks and abs(abs(peaks[0].rho) - 50) <= 2
        assert np.array_equal(mask.bits, before)
        assert not mask.bits.flags.writeable

    def test_below_threshold(self):
        mask = vertical_stroke(100, 120, 50, range(10, 30))
        assert hough_lines(mask, HoughParams(vote_threshold=40)) == []


class TestExtractSegments:
    def test_unbroken_stroke(self):
        mask = vertical_stroke(100, 130, 50, range(10, 110))
        params = HoughParams(vote_threshold=40)
        segments = extract_segments(mask, hough_lines(mask, params)[:1], params)
        assert len(segments) == 1
        expected = LineSegment.from_coords(50, 10, 50, 109)
        assert segment_pair_distance(segments[0], expected) <= 3

    def test_hole_splits_segment(self):
        mask = vertical_stroke(100, 180, 50, list(range(10, 70)) + list(range(100, 160)))
        params = HoughParams(vote_threshold=40)
        segments = extract_segments(mask, hough_lines(mask, params)[:1], params)
        assert len(segments) == 2
        ends = sorted(sorted((seg.p0.y, seg.p1.y)) for seg in segments)
        assert ends == [[10, 69], [100, 159]]

    def test_short_run_dropped(self):
        mask = vertical_stroke(100, 60, 50, range(10, 40))
        assert extract_segments(mask, [HoughPeak(50.0, 0.0, 30)], HoughParams()) == []


class TestDedup:
    def test_single_segment(self):
        seg = LineSegment.from_coords(100, 0, 100, 300)
        assert dedup_lines([seg], HoughParams()) == [seg]

    def test_close_verticals_merge_to_longest(self):
        long = LineSegment.from_coords(100, 0, 100, 300)
        short = LineSegment.from_coords(150, 50, 150, 250)
        assert dedup_lines([short, long], HoughParams()) == [long]

    def test_distant_verticals_kept(self):
        a = LineSegment.from_coords(400, 0, 400, 300)
        b = LineSegment.from_coords(100, 0, 100, 300)
        assert dedup_lines([a, b], HoughParams()) == [b, a]

    def test_classes_do_not_merge(self):
        vertical = LineSegment.from_coords(100, 0, 100, 300)
        horizontal = LineSegment.from_coords(0, 120, 300, 120)
        assert dedup_lines([horizontal, vertical], HoughParams()) == [vertical, horizontal]

    def test_kept_intercepts_are_separated(self):
        rng = np.random.default_rng(6)
        segments = [LineSegment.from_coords(x, 0, x, 1000) for x in rng.uniform(0, 2000, 25)]
        kept = dedup_lines(segments, HoughParams(), page_size=(2000, 1000))
        xs = sorted(seg.p0.x for seg in kept)
        assert all(b - a >= 200 for a, b in zip(xs, xs[1:]))

    def test_bounding_box_midline_without_page_size(self):
        # Crossing slants meet at y=500, the midline of their bounding box.
        a = LineSegment.from_coords(0, 0, 400, 1000)
        b = LineSegment.from_coords(400, 0, 0, 1000)
        assert len(dedup_lines([a, b], HoughParams())) == 1
        assert len(dedup_lines([a, b], HoughParams(), page_size=(400, 3000))) == 2

    def test_classify_tie_goes_to_vertical(self):
        assert classify_segment(LineSegment.from_coords(0, 0, 10, 10)) == VERTICAL
        assert classify_segment(LineSegment.from_coords(0, 0, 10, 1)) == HORIZONTAL
        assert classify_segment(LineSegment.from_coords(0, 0, 10, 10), slope_deg=30) is None


@pytest.mark.parametrize("seed,n_vertical,n_horizontal", [
    (0, 1, 0), (1, 0, 1), (2, 1, 1), (3, 2, 1), (4, 1, 3), (5, 2, 2),
])
def test_line_round_trip(config, seed, n_vertical, n_horizontal):
    spec = SynthSpec(seed=seed, n_vertical=n_vertical, n_horizontal=n_horizontal,
                     columns_per_region=1, chars_per_column=1)
    page = generate(spec)
    recovered = detect_lines(page.mask, config, page.page_size)
    assert len(recovered) == len(page.lines)
    for gt in page.lines:
        assert min(segment_pair_distance(gt, seg) for seg in recovered) <= 6.0
