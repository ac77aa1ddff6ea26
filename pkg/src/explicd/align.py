"""Map approximately quoted spans back to exact offsets in a note.

Candidates are substrings of the note that share their first and last ``n``
characters (case-insensitive) with the generated span, for ``n`` from 7 down
to 1. Each candidate is scored by token-set overlap and the best one is kept
when its score exceeds the retention threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from explicd.corpus import Document, RationaleSpan, preprocess_text
from explicd.errors import ValidationError

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 1.7
MAX_WINDOW = 7


@dataclass(frozen=True)
class Candidate:
    start: int
    end: int
    text: str


@dataclass(frozen=True)
class AlignmentResult:
    generated: str
    candidate: Optional[Candidate]
    score: float
    retained: bool


def span_token_set(s: str) -> frozenset[str]:
    return frozenset(s.lower().split())


def overlap_fraction(generated: str, candidate: str) -> Fraction:
    """Exact rational overlap score; 0 when either token set is empty."""
    tg = span_token_set(generated)
    tc = span_token_set(candidate)
    if not tg or not tc:
        return Fraction(0)
    inter = len(tg & tc)
    return Fraction(inter, len(tg)) + Fraction(inter, len(tc))


def overlap_score(generated: str, candidate: str) -> float:
    """``|Tg & Tc| / |Tg| + |Tg & Tc| / |Tc|`` over lowercased token sets."""
    return float(overlap_fraction(generated, candidate))


def _exceeds(score: Fraction, threshold: float) -> bool:
    # compare against the decimal threshold exactly, so 17/10 is not retained at 1.7
    return score > Fraction(str(threshold))


def candidate_spans(generated: str, note: str, n: int) -> list[Candidate]:
    """All substrings of ``note`` whose first and last ``n`` characters match.

    Candidates are at least ``n`` characters long. Ordered by start, then end.
    """
    if n < 1 or n > len(generated):
        raise ValueError(f"window size {n} outside [1, {len(generated)}]")
    head = generated[:n].lower()
    tail = generated[-n:].lower()
    low = note.lower()
    starts = _find_all(low, head)
    if not starts:
        return []
    ends = [i + n for i in _find_all(low, tail)]
    out = []
    for s in starts:
        for e in ends:
            if e >= s + n:
                out.append(Candidate(s, e, note[s:e]))
    return out


def _find_all(haystack: str, needle: str) -> list[int]:
    hits = []
    i = haystack.find(needle)
    while i != -1:
        hits.append(i)
        i = haystack.find(needle, i + 1)
    return hits


def _first_found_order(generated: str, note: str) -> list[Candidate]:
    # enumeration order of the reference loop: n descending, start ascending, end descending
    order = []
    seen = set()
    for n in range(min(MAX_WINDOW, len(generated)), 0, -1):
        cands = sorted(candidate_spans(generated, note, n), key=lambda c: (c.start, -c.end))
        for c in cands:
            if c.text not in seen:
                seen.add(c.text)
                order.append(c)
    return order


def best_candidate(generated: str, note: str, threshold: float = DEFAULT_THRESHOLD,
                   tie_break: str = "shortest") -> AlignmentResult:
    """Best-scoring candidate span for ``generated`` within ``note``.

    Args:
        generated: The quoted span to locate.
        note: Text to search.
        threshold: Retention requires a score strictly above this value.
        tie_break: ``"shortest"`` prefers the shorter candidate, then the lower
            start offset. ``"first_found"`` keeps the first candidate met in the
            window sweep (largest window first, start ascending, end descending).

    Returns:
        An :class:`AlignmentResult`; ``candidate`` is None when nothing scores
        above zero.
    """
    if not generated:
        return AlignmentResult(generated, None, 0.0, False)
    if tie_break == "first_found":
        pool = _first_found_order(generated, note)
    elif tie_break == "shortest":
        uniq = {}
        for n in range(min(MAX_WINDOW, len(generated)), 0, -1):
            for c in candidate_spans(generated, note, n):
                uniq.setdefault((c.start, c.end), c)
        pool = sorted(uniq.values(), key=lambda c: (c.end - c.start, c.start))
    else:
        raise ValueError(f"unknown tie_break {tie_break!r}")

    best: Optional[Candidate] = None
    best_score = Fraction(0)
    cache: dict[str, Fraction] = {}
    for c in pool:
        sc = cache.get(c.text)
        if sc is None:
            sc = cache[c.text] = overlap_fraction(generated, c.text)
        if sc > best_score:
            best, best_score = c, sc
    return AlignmentResult(generated, best, float(best_score), best is not None and _exceeds(best_score, threshold))


@dataclass
class DroppedSpan:
    doc_id: str
    code: str
    text: str
    best_score: float

    def to_record(self) -> dict:
        return {"doc_id": self.doc_id, "code": self.code, "text": self.text, "best_score": self.best_score}


def align_generated_spans(spans: Iterable[tuple[str, str, str]], docs: Sequence[Document] | dict,
                          threshold: float = DEFAULT_THRESHOLD, normalize: bool = True,
                          tie_break: str = "shortest") -> tuple[list[RationaleSpan], list[DroppedSpan]]:
    """Align ``(doc_id, code, text)`` triples to their documents.

    With ``normalize`` the generated text goes through the same preprocessing
    as documents before matching, since document offsets are over cleaned text.

    Returns:
        ``(retained, dropped)``; their sizes sum to the number of inputs.
    """
    by_id = docs if isinstance(docs, dict) else {d.id: d for d in docs}
    kept: list[RationaleSpan] = []
    dropped: list[DroppedSpan] = []
    for doc_id, code, text in spans:
        doc = by_id.get(doc_id)
        if doc is None:
            raise ValidationError(f"generated span references unknown document {doc_id!r}")
        query = preprocess_text(text) if normalize else text
        res = best_candidate(query, doc.text, threshold, tie_break) if doc.text else AlignmentResult(query, None, 0.0, False)
        if res.retained:
            c = res.candidate
            kept.append(RationaleSpan(doc_id, code, c.start, c.end, c.text, res.score))
        else:
            logger.info("dropped span %r for %s/%s (best score %.3f)", text, doc_id, code, res.score)
            dropped.append(DroppedSpan(doc_id, code, text, res.score))
    return kept, dropped
