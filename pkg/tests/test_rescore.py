import functools
import logging

import numpy as np
import pytest

from modules.geometry import LineSegment
from modules.grouping import group_page
from modules.layout import partition_page
from modules.rescore import (
    DELETE, EQUAL, INSERT, REPLACE, EditOp, RescoreParams, ScoredSequence, count_ops, edit_distance, edit_script,
    fuse, fuse_detailed, fuse_document,
)
from tests.conftest import make_det


def seq(pairs):
    return ScoredSequence(tuple(s for s, _ in pairs), tuple(p for _, p in pairs))


def brute_levenshtein(a, b):
    @functools.lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
    return d(len(a), len(b))


def apply_script(a, b, ops):
    out = []
    for op in ops:
        if op.kind == EQUAL:
            assert a[op.a_index] == b[op.b_index]
            out.append(a[op.a_index])
        elif op.kind in (REPLACE, INSERT):
            out.append(b[op.b_index])
    return "".join(out)


def random_pairs(count, seed=0, alphabet="abcd", max_len=8):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        a = "".join(rng.choice(list(alphabet), size=int(rng.integers(0, max_len + 1))))
        b = "".join(rng.choice(list(alphabet), size=int(rng.integers(0, max_len + 1))))
        yield a, b


class TestEditScript:
    def test_identical(self):
        assert [op.kind for op in edit_script("abc", "abc")] == [EQUAL, EQUAL, EQUAL]

    def test_single_replace(self):
        assert edit_script("abc", "axc") == [EditOp(EQUAL, 0, 0), EditOp(REPLACE, 1, 1), EditOp(EQUAL, 2, 2)]

    def test_empty_sides(self):
        assert edit_script("", "") == []
        assert [op.kind for op in edit_script("ab", "")] == [DELETE, DELETE]
        assert [op.kind for op in edit_script("", "ab")] == [INSERT, INSERT]

    def test_accepts_scored_sequences(self):
        a, b = ScoredSequence.from_text("天地"), ScoredSequence.from_text("天玄")
        assert count_ops(edit_script(a, b))[REPLACE] == 1

    def test_matches_brute_force(self):
        for a, b in random_pairs(200):
            ops = edit_script(a, b)
            counts = count_ops(ops)
            assert len(ops) - counts[EQUAL] == brute_levenshtein(a, b) == edit_distance(a, b)
            assert apply_script(a, b, ops) == b

    def test_symmetric_cost(self):
        for a, b in random_pairs(100, seed=1):
            forward = len(edit_script(a, b)) - count_ops(edit_script(a, b))[EQUAL]
            backward = len(edit_script(b, a)) - count_ops(edit_script(b, a))[EQUAL]
            assert forward == backward


class TestScoredSequence:
    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ScoredSequence(("a", "b"), (0.5,))

    def test_probability_range(self):
        with pytest.raises(ValueError):
            ScoredSequence(("a",), (1.2,))

    def test_mean(self):
        s = seq([("a", 0.2), ("b", 0.6)])
        assert s.mean_prob() == pytest.approx(0.4)
        assert s.mean_prob([1]) == pytest.approx(0.6)
        assert ScoredSequence((), ()).mean_prob() == 0.0


class TestFuse:
    def test_replace_only_keeps_more_probable(self):
        char = seq([("A", 0.9), ("B", 0.4), ("C", 0.8)])
        line = seq([("A", 0.9), ("D", 0.7), ("C", 0.8)])
        result = fuse_detailed(char, line)
        assert result.rule == "replace"
        assert result.sequence.text == "ADC"
        assert result.sequence.probs == (0.9, 0.7, 0.8)

    def test_delete_only_keeps_characters(self):
        char = seq([("A", 0.9), ("B", 0.9)])
        line = seq([("A", 0.95)])
        result = fuse_detailed(char, line)
        assert result.rule == "indel"
        assert result.sequence == char

    def test_mixed_uses_mean(self):
        char = seq([("A", 0.5), ("B", 0.5), ("C", 0.5)])
        line = seq([("A", 0.9), ("X", 0.9)])
        result = fuse_detailed(char, line)
        assert result.rule == "mixed"
        assert result.sequence == line

    def test_mixed_tie_goes_to_characters(self):
        char = seq([("A", 0.5), ("B", 0.5), ("C", 0.5)])
        line = seq([("A", 0.5), ("X", 0.5)])
        assert fuse(char, line) == char

    def test_mismatched_mean_scope(self):
        char = seq([("P", 0.95), ("Q", 0.95), ("R", 0.3), ("S", 0.3)])
        line = seq([("P", 0.5), ("Q", 0.5), ("Z", 0.8)])
        assert fuse(char, line, "all") == char
        assert fuse(char, line, "mismatched") == line

    def test_identity(self):
        s = seq([("天", 0.3), ("地", 0.8), ("玄", 0.6)])
        result = fuse_detailed(s, s)
        assert result.rule == "equal" and result.sequence == s

    def test_empty_line_reading(self):
        char = seq([("A", 0.9)])
        assert fuse_detailed(char, ScoredSequence((), ())).rule == "empty_line"
        assert fuse(char, ScoredSequence((), ())) == char

    def test_empty_character_reading_warns(self, caplog):
        line = seq([("A", 0.9)])
        with caplog.at_level(logging.WARNING, logger="RescoreFusion"):
            result = fuse_detailed(ScoredSequence((), ()), line)
        assert result.sequence == line and result.warning
        assert "falling back" in caplog.text

    def test_replace_flip_is_local(self):
        char = seq([("A", 0.9), ("B", 0.4), ("C", 0.3)])
        line = seq([("A", 0.9), ("D", 0.7), ("E", 0.2)])
        assert fuse(char, line).text == "ADC"
        raised = seq([("A", 0.9), ("D", 0.7), ("E", 0.35)])
        assert fuse(char, raised).text == "ADE"

    def test_output_symbols_come_from_inputs(self):
        rng = np.random.default_rng(2)
        for a, b in random_pairs(100, seed=3):
            if not a or not b:
                continue
            char = ScoredSequence(tuple(a), tuple(np.round(rng.uniform(0, 1, len(a)), 3)))
            line = ScoredSequence(tuple(b), tuple(np.round(rng.uniform(0, 1, len(b)), 3)))
            result = fuse_detailed(char, line)
            assert set(result.sequence.symbols) <= set(a) | set(b)
            if result.rule == "replace":
                assert len(result.sequence) == len(char)

    def test_unknown_scope(self):
        with pytest.raises(ValueError):
            fuse(seq([("A", 0.5)]), seq([("B", 0.5)]), "median")
        with pytest.raises(ValueError):
            RescoreParams(mean_scope="median")


class TestFuseDocument:
    def test_columns_keyed_by_id(self, caplog):
        layout = partition_page([LineSegment.from_coords(0, 500, 999, 500)], 1000, 1000)
        doc = group_page([
            make_det(800, 100, 840, 140, "甲", 0.9),
            make_det(800, 148, 840, 188, "乙", 0.3),
            make_det(800, 600, 840, 640, "丙", 0.9),
        ], layout)
        records = {
            "0:0": ScoredSequence.from_text("甲己", 0.95),
            "9:9": ScoredSequence.from_text("无", 0.95),
        }
        with caplog.at_level(logging.WARNING, logger="RescoreFusion"):
            results = fuse_document(doc, records)
        assert set(results) == {"0:0"}
        assert results["0:0"].sequence.text == "甲己"
        assert "9:9" in caplog.text
