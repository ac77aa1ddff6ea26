"""Documents, tokens and rationale annotations with character-offset bookkeeping.

All offsets refer to the *preprocessed* text of a document. Annotations made
against raw text have to be re-located (see :mod:`explicd.align`).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from explicd.errors import ParseError, ValidationError

_NON_ALNUM = re.compile(r"[^a-z0-9\s]")
_WHITESPACE = re.compile(r"\s+")
_NON_SPACE = re.compile(r"\S+")


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class CodeLabel:
    code: str
    description: str = ""

    def __post_init__(self):
        if not self.code:
            raise ValidationError("code label must be non-empty")


@dataclass(frozen=True)
class Document:
    id: str
    raw_text: str
    text: str
    tokens: tuple[Token, ...]
    gold_codes: tuple[CodeLabel, ...] = ()

    @property
    def codes(self) -> frozenset[str]:
        return frozenset(c.code for c in self.gold_codes)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class RationaleSpan:
    doc_id: str
    code: str
    start: int
    end: int
    text: str
    score: Optional[float] = field(default=None, compare=False)

    def to_record(self) -> dict:
        rec = {"doc_id": self.doc_id, "code": self.code, "start": self.start,
               "end": self.end, "text": self.text}
        if self.score is not None:
            rec["score"] = self.score
        return rec


def preprocess_text(raw: str, drop_stray_numbers: bool = False) -> str:
    """Normalize raw note text.

    Lowercases, replaces every character outside ``[a-z0-9]`` and whitespace
    with a space, collapses whitespace runs and trims. Digit-only tokens are
    kept by default so phrases like ``type 2 diabetes`` survive intact.

    Args:
        raw: Input text.
        drop_stray_numbers: If True, remove digit-only tokens that have no
            neighbouring token containing a letter.

    Returns:
        The cleaned string. The function is idempotent.
    """
    text = _NON_ALNUM.sub(" ", raw.lower())
    words = text.split()
    if drop_stray_numbers:
        words = _drop_stray_numbers(words)
    return " ".join(words)


def _has_letter(word: str) -> bool:
    return any("a" <= ch <= "z" for ch in word)


def _drop_stray_numbers(words: list[str]) -> list[str]:
    kept = []
    for i, w in enumerate(words):
        if w.isdigit():
            left = words[i - 1] if i > 0 else ""
            right = words[i + 1] if i + 1 < len(words) else ""
            if not (_has_letter(left) or _has_letter(right)):
                continue
        kept.append(w)
    return kept


def tokenize_with_offsets(text: str) -> list[Token]:
    """Split on whitespace, keeping exact ``[start, end)`` offsets."""
    return [Token(m.group(), m.start(), m.end()) for m in _NON_SPACE.finditer(text)]


def make_document(doc_id: str, raw_text: str, codes: Iterable[CodeLabel] = (),
                  drop_stray_numbers: bool = False) -> Document:
    text = preprocess_text(raw_text, drop_stray_numbers=drop_stray_numbers)
    return Document(doc_id, raw_text, text, tuple(tokenize_with_offsets(text)), tuple(codes))


def document_from_tokens(doc_id: str, words: Sequence[str],
                         codes: Iterable[CodeLabel] = (), raw_text: Optional[str] = None) -> Document:
    """Build a document whose text is ``words`` joined by single spaces.

    Words are assumed to already be in preprocessed form.
    """
    tokens = []
    pos = 0
    for w in words:
        tokens.append(Token(w, pos, pos + len(w)))
        pos += len(w) + 1
    text = " ".join(words)
    return Document(doc_id, text if raw_text is None else raw_text, text, tuple(tokens), tuple(codes))


def _read_jsonl(path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("record is not a JSON object", line=lineno)
            yield lineno, rec


def _parse_codes(raw_codes, lineno) -> tuple[CodeLabel, ...]:
    if not isinstance(raw_codes, list):
        raise ParseError("'codes' must be a list", line=lineno)
    out = []
    for c in raw_codes:
        if isinstance(c, str):
            c = {"code": c}
        if not isinstance(c, dict) or not isinstance(c.get("code"), str) or not c["code"]:
            raise ParseError("each code needs a non-empty 'code' string", line=lineno)
        out.append(CodeLabel(c["code"], str(c.get("description", ""))))
    return tuple(out)


def load_documents(path, format: str = "jsonl", drop_stray_numbers: bool = False) -> list[Document]:
    """Read ``documents.jsonl`` records ``{"id", "text", "codes"}``.

    Raises:
        ParseError: a line is not valid JSON or lacks a required field.
        ValidationError: two records share an id.
    """
    if format != "jsonl":
        raise ValueError(f"unsupported format {format!r}")
    docs = []
    seen: set[str] = set()
    for lineno, rec in _read_jsonl(path):
        for key in ("id", "text"):
            if not isinstance(rec.get(key), str):
                raise ParseError(f"missing or non-string field {key!r}", line=lineno)
        codes = _parse_codes(rec.get("codes", []), lineno)
        if rec["id"] in seen:
            raise ValidationError(f"duplicate document id {rec['id']!r} (line {lineno})")
        seen.add(rec["id"])
        docs.append(make_document(rec["id"], rec["text"], codes, drop_stray_numbers))
    return docs


def write_documents(docs: Iterable[Document], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            rec = {"id": d.id, "text": d.text,
                   "codes": [{"code": c.code, "description": c.description} for c in d.gold_codes],
                   "tokens": [[t.start, t.end] for t in d.tokens]}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def validate_span(span: RationaleSpan, doc: Document) -> None:
    if span.end <= span.start:
        raise ValidationError(f"{span.doc_id}: empty or inverted span [{span.start}, {span.end})")
    if span.start < 0 or span.end > len(doc.text):
        raise ValidationError(f"{span.doc_id}: span [{span.start}, {span.end}) out of bounds")
    if doc.text[span.start:span.end] != span.text:
        raise ValidationError(
            f"{span.doc_id}: text at [{span.start}, {span.end}) is "
            f"{doc.text[span.start:span.end]!r}, expected {span.text!r}")


def validate_spans(spans: Iterable[RationaleSpan], docs) -> None:
    by_id = docs if isinstance(docs, dict) else {d.id: d for d in docs}
    for s in spans:
        doc = by_id.get(s.doc_id)
        if doc is None:
            raise ValidationError(f"span references unknown document {s.doc_id!r}")
        validate_span(s, doc)


def span_from_offsets(doc: Document, code: str, start: int, end: int,
                      score: Optional[float] = None) -> RationaleSpan:
    span = RationaleSpan(doc.id, code, start, end, doc.text[start:end], score)
    validate_span(span, doc)
    return span


def load_annotations(path, corpus: Sequence[Document], threshold: float = 1.7) -> list[RationaleSpan]:
    """Read ``annotations.jsonl`` and validate every span against its document.

    Records either give ``start``/``end`` offsets into the preprocessed text
    (an optional ``text`` must then equal the slice) or give only ``text``, in
    which case the span is located with the overlap-score alignment.
    """
    by_id = {d.id: d for d in corpus}
    spans = []
    for lineno, rec in _read_jsonl(path):
        for key in ("doc_id", "code"):
            if not isinstance(rec.get(key), str):
                raise ParseError(f"missing or non-string field {key!r}", line=lineno)
        doc = by_id.get(rec["doc_id"])
        if doc is None:
            raise ValidationError(f"line {lineno}: unknown document {rec['doc_id']!r}")
        score = rec.get("score")
        if "start" in rec and "end" in rec:
            start, end = rec["start"], rec["end"]
            if not (isinstance(start, int) and isinstance(end, int)):
                raise ParseError("'start'/'end' must be integers", line=lineno)
            if end <= start:
                raise ValidationError(f"line {lineno}: {doc.id} has end {end} <= start {start}")
            span = RationaleSpan(doc.id, rec["code"], start, end, rec.get("text", doc.text[start:end]), score)
            try:
                validate_span(span, doc)
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
        elif isinstance(rec.get("text"), str):
            from explicd.align import best_candidate

            res = best_candidate(preprocess_text(rec["text"]), doc.text, threshold=threshold)
            if res.candidate is None or not res.retained:
                raise ValidationError(
                    f"line {lineno}: could not locate {rec['text']!r} in {doc.id} "
                    f"(best score {res.score:.3f})")
            c = res.candidate
            span = RationaleSpan(doc.id, rec["code"], c.start, c.end, c.text, score)
        else:
            raise ParseError("record needs either start/end or text", line=lineno)
        spans.append(span)
    return spans


def write_annotations(spans: Iterable[RationaleSpan], path, extra: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in spans:
            rec = s.to_record()
            if extra:
                rec.update(extra)
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def covered_tokens(doc: Document, start: int, end: int) -> list[int]:
    """Indices of tokens sharing at least one character with ``[start, end)``."""
    return [j for j, t in enumerate(doc.tokens) if t.start < end and start < t.end]


def label_space(docs: Iterable[Document]) -> list[CodeLabel]:
    """Distinct gold codes across ``docs``, sorted by code."""
    seen: dict[str, CodeLabel] = {}
    for d in docs:
        for c in d.gold_codes:
            seen.setdefault(c.code, c)
    return [seen[k] for k in sorted(seen)]
