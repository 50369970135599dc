"""
Re-score Fusion Module for the Reading-Order Restoration system.
Aligns the character-level reading of a column with a text-line recognizer's
reading of the same column and fuses them by edit-operation type and
per-symbol probability.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, validator

from modules.geometry import CharDetection
from modules.grouping import Document

# Configure logging
logger = logging.getLogger("RescoreFusion")

EQUAL = "equal"
REPLACE = "replace"
INSERT = "insert"
DELETE = "delete"

MEAN_SCOPES = ("all", "mismatched")


class RescoreParams(BaseModel):
    mean_scope: str = "all"

    class Config:
        extra = "forbid"

    @validator('mean_scope')
    def validate_scope(cls, v):
        if v not in MEAN_SCOPES:
            raise ValueError(f"mean_scope must be one of {MEAN_SCOPES}, got {v!r}")
        return v


@dataclass(frozen=True)
class ScoredSequence:
    symbols: Tuple[str, ...]
    probs: Tuple[float, ...]

    def __post_init__(self):
        symbols, probs = tuple(self.symbols), tuple(float(p) for p in self.probs)
        if len(symbols) != len(probs):
            raise ValueError(f"Got {len(symbols)} symbols but {len(probs)} probabilities")
        for i, p in enumerate(probs):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"Probability at position {i} must be within [0, 1], got {p}")
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_text(cls, text: str, prob: float = 1.0) -> "ScoredSequence":
        return cls(tuple(text), tuple(prob for _ in text))

    @classmethod
    def from_detections(cls, dets: Sequence[CharDetection]) -> "ScoredSequence":
        return cls(tuple(d.label for d in dets), tuple(d.score for d in dets))

    @property
    def text(self) -> str:
        return "".join(self.symbols)

    def mean_prob(self, positions: Optional[Sequence[int]] = None) -> float:
        probs = self.probs if positions is None else [self.probs[i] for i in positions]
        return float(np.mean(probs)) if len(probs) else 0.0

    def __len__(self) -> int:
        return len(self.symbols)


class EditOp(NamedTuple):
    kind: str
    a_index: Optional[int]  # position in the source sequence; None for insert
    b_index: Optional[int]  # position in the target sequence; None for delete


SymbolsLike = Union[ScoredSequence, Sequence[str], str]


def _symbols(seq: SymbolsLike) -> Sequence[str]:
    return seq.symbols if isinstance(seq, ScoredSequence) else seq


def _distance_table(a: Sequence[str], b: Sequence[str]) -> np.ndarray:
    vocab: Dict[str, int] = {}
    a_codes = np.array([vocab.setdefault(s, len(vocab)) for s in a], dtype=np.int64)
    b_codes = np.array([vocab.setdefault(s, len(vocab)) for s in b], dtype=np.int64)
    n, m = len(a_codes), len(b_codes)

    table = np.zeros((n + 1, m + 1), dtype=np.int64)
    steps = np.arange(m + 1)
    table[0] = steps
    for i in range(1, n + 1):
        row = np.empty(m + 1, dtype=np.int64)
        row[0] = i
        if m:
            substitution = table[i - 1, :-1] + (b_codes != a_codes[i - 1])
            row[1:] = np.minimum(table[i - 1, 1:] + 1, substitution)
        # insertions chain along the row: row[j] = min_k(row[k] + j - k)
        table[i] = np.minimum.accumulate(row - steps) + steps
    return table


def edit_script(a: SymbolsLike, b: SymbolsLike) -> List[EditOp]:
    """
    Minimal unit-cost script turning `a` into `b`. Among minimal scripts the
    backtrace prefers equal, then replace, then delete, then insert.
    """
    a, b = _symbols(a), _symbols(b)
    table = _distance_table(a, b)

    ops = []
    i, j = len(a), len(b)
    while i > 0 or j > 0:
        if i > 0 and j > 0 and a[i - 1] == b[j - 1] and table[i, j] == table[i - 1, j - 1]:
            ops.append(EditOp(EQUAL, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and table[i, j] == table[i - 1, j - 1] + 1:
            ops.append(EditOp(REPLACE, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and table[i, j] == table[i - 1, j] + 1:
            ops.append(EditOp(DELETE, i - 1, None))
            i -= 1
        else:
            ops.append(EditOp(INSERT, None, j - 1))
            j -= 1
    ops.reverse()
    return ops


def edit_distance(a: SymbolsLike, b: SymbolsLike) -> int:
    a, b = _symbols(a), _symbols(b)
    return int(_distance_table(a, b)[len(a), len(b)])


def count_ops(ops: Sequence[EditOp]) -> Dict[str, int]:
    counts = {EQUAL: 0, REPLACE: 0, INSERT: 0, DELETE: 0}
    for op in ops:
        counts[op.kind] += 1
    return counts


class FusionResult(NamedTuple):
    sequence: ScoredSequence
    rule: str  # equal | replace | mixed | indel | empty_char | empty_line
    warning: bool = False


def fuse_detailed(char_seq: ScoredSequence, line_seq: ScoredSequence,
                  mean_scope: str = "all") -> FusionResult:
    """
    Fuse a column's character reading with its text-line reading.

    The alignment turns the line reading into the character reading:
      - all ops equal: keep the character reading;
      - replacements only: at each mismatch keep the more probable symbol;
      - replacements plus insertions/deletions: keep the whole reading with
        the higher mean probability (characters on ties);
      - insertions/deletions only: keep the character reading.
    """
    if mean_scope not in MEAN_SCOPES:
        raise ValueError(f"mean_scope must be one of {MEAN_SCOPES}, got {mean_scope!r}")
    if not line_seq:
        return FusionResult(char_seq, "empty_line")
    if not char_seq:
        logger.warning("Character sequence is empty; falling back to the line reading")
        return FusionResult(line_seq, "empty_char", True)

    script = edit_script(line_seq, char_seq)
    counts = count_ops(script)

    if counts[REPLACE] == 0 and counts[INSERT] == 0 and counts[DELETE] == 0:
        return FusionResult(char_seq, "equal")

    if counts[INSERT] == 0 and counts[DELETE] == 0:
        symbols, probs = list(char_seq.symbols), list(char_seq.probs)
        for op in script:
            if op.kind != REPLACE:
                continue
            if line_seq.probs[op.a_index] > char_seq.probs[op.b_index]:
                symbols[op.b_index] = line_seq.symbols[op.a_index]
                probs[op.b_index] = line_seq.probs[op.a_index]
        return FusionResult(ScoredSequence(tuple(symbols), tuple(probs)), "replace")

    if counts[REPLACE] == 0:
        return FusionResult(char_seq, "indel")

    if mean_scope == "mismatched":
        line_mean = line_seq.mean_prob([op.a_index for op in script if op.kind in (REPLACE, DELETE)])
        char_mean = char_seq.mean_prob([op.b_index for op in script if op.kind in (REPLACE, INSERT)])
    else:
        line_mean, char_mean = line_seq.mean_prob(), char_seq.mean_prob()
    winner = line_seq if line_mean > char_mean else char_seq
    return FusionResult(winner, "mixed")


def fuse(char_seq: ScoredSequence, line_seq: ScoredSequence, mean_scope: str = "all") -> ScoredSequence:
    return fuse_detailed(char_seq, line_seq, mean_scope).sequence


def fuse_document(doc: Document, line_records: Mapping[str, ScoredSequence],
                  mean_scope: str = "all") -> Dict[str, FusionResult]:
    """Fuse every column that has a line reading; keyed by column id."""
    results: Dict[str, FusionResult] = {}
    known = set()
    for column_id, col in doc.iter_columns():
        known.add(column_id)
        line_seq = line_records.get(column_id)
        if line_seq is None:
            logger.debug(f"No line reading for column {column_id}")
            continue
        results[column_id] = fuse_detailed(ScoredSequence.from_detections(col.chars), line_seq, mean_scope)

    unknown = sorted(set(line_records) - known)
    if unknown:
        logger.warning(f"Line readings for unknown columns ignored: {', '.join(unknown)}")
    return results
