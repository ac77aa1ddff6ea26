import json

import pytest
from hypothesis import given, strategies as st

from explicd import corpus
from explicd.corpus import CodeLabel, RationaleSpan
from explicd.errors import ParseError, ValidationError


def write_lines(path, records):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in records))
    return path


@pytest.fixture
def one_doc(tmp_path):
    p = write_lines(tmp_path / "docs.jsonl", [
        {"id": "d1", "text": "HTN noted.", "codes": [{"code": "I10", "description": "Essential hypertension"}]}])
    return corpus.load_documents(p)


def test_load_single_document(one_doc):
    (d,) = one_doc
    assert d.id == "d1"
    assert d.text == "htn noted"
    assert [(t.text, t.start, t.end) for t in d.tokens] == [("htn", 0, 3), ("noted", 4, 9)]
    assert d.codes == {"I10"}
    assert d.gold_codes[0].description == "Essential hypertension"


def test_empty_file(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert corpus.load_documents(p) == []


def test_missing_id_reports_line(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [{"text": "x", "codes": []}])
    with pytest.raises(ParseError) as exc:
        corpus.load_documents(p)
    assert exc.value.line == 1


def test_malformed_json_line_number(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [{"id": "a", "text": "x", "codes": []}, "{not json"])
    with pytest.raises(ParseError) as exc:
        corpus.load_documents(p)
    assert exc.value.line == 2


def test_duplicate_id_rejected(tmp_path):
    rec = {"id": "a", "text": "x", "codes": []}
    p = write_lines(tmp_path / "d.jsonl", [rec, rec])
    with pytest.raises(ValidationError):
        corpus.load_documents(p)


@pytest.mark.parametrize("raw, expected", [
    ("HTN, noted!!", "htn noted"),
    ("", ""),
    ("type 2 diabetes", "type 2 diabetes"),
    ("  Afib   on\tCoumadin. ", "afib on coumadin"),
])
def test_preprocess_examples(raw, expected):
    assert corpus.preprocess_text(raw) == expected


def test_stray_number_rule_only_when_asked():
    raw = "bp 120 / 80 , 7 ; hr 60"
    assert corpus.preprocess_text(raw) == "bp 120 80 7 hr 60"
    # only 80 lacks a letter-bearing neighbour (120 and 7)
    assert corpus.preprocess_text(raw, drop_stray_numbers=True) == "bp 120 7 hr 60"
    assert corpus.preprocess_text("type 2 diabetes", drop_stray_numbers=True) == "type 2 diabetes"


@given(st.text())
def test_preprocess_idempotent(s):
    once = corpus.preprocess_text(s)
    assert corpus.preprocess_text(once) == once
    once = corpus.preprocess_text(s, drop_stray_numbers=True)
    assert corpus.preprocess_text(once, drop_stray_numbers=True) == once


@pytest.mark.parametrize("text, expected", [
    ("htn noted", [("htn", 0, 3), ("noted", 4, 9)]),
    ("", []),
    ("a b", [("a", 0, 1), ("b", 2, 3)]),
])
def test_tokenize_examples(text, expected):
    assert [(t.text, t.start, t.end) for t in corpus.tokenize_with_offsets(text)] == expected


@given(st.text())
def test_token_invariants(raw):
    doc = corpus.make_document("x", raw)
    prev_end = -1
    for t in doc.tokens:
        assert t.end > t.start > prev_end
        assert doc.text[t.start:t.end] == t.text
        prev_end = t.end
    assert " ".join(t.text for t in doc.tokens) == doc.text


def test_load_annotations_offsets(tmp_path, one_doc):
    p = write_lines(tmp_path / "a.jsonl", [{"doc_id": "d1", "code": "I10", "start": 0, "end": 3}])
    (s,) = corpus.load_annotations(p, one_doc)
    assert (s.doc_id, s.code, s.start, s.end, s.text) == ("d1", "I10", 0, 3, "htn")


@pytest.mark.parametrize("rec", [
    {"doc_id": "d1", "code": "I10", "start": 3, "end": 3},
    {"doc_id": "d1", "code": "I10", "start": 3, "end": 1},
    {"doc_id": "d9", "code": "I10", "start": 0, "end": 3},
    {"doc_id": "d1", "code": "I10", "start": 0, "end": 3, "text": "hTn"},
    {"doc_id": "d1", "code": "I10", "start": 0, "end": 99},
])
def test_load_annotations_rejects(tmp_path, one_doc, rec):
    p = write_lines(tmp_path / "a.jsonl", [rec])
    with pytest.raises(ValidationError):
        corpus.load_annotations(p, one_doc)


def test_offset_mismatch_names_doc_and_offsets(one_doc):
    bad = RationaleSpan("d1", "I10", 0, 3, "xyz")
    with pytest.raises(ValidationError, match=r"d1.*0.*3"):
        corpus.validate_span(bad, one_doc[0])


def test_text_only_annotation_is_located(tmp_path, one_doc):
    p = write_lines(tmp_path / "a.jsonl", [{"doc_id": "d1", "code": "I10", "text": "Noted"}])
    (s,) = corpus.load_annotations(p, one_doc)
    assert (s.start, s.end, s.text) == (4, 9, "noted")


def test_text_only_annotation_not_found(tmp_path, one_doc):
    p = write_lines(tmp_path / "a.jsonl", [{"doc_id": "d1", "code": "I10", "text": "pneumonia"}])
    with pytest.raises(ValidationError):
        corpus.load_annotations(p, one_doc)


def test_documents_round_trip(tmp_path, one_doc):
    out = tmp_path / "out.jsonl"
    corpus.write_documents(one_doc, out)
    (back,) = corpus.load_documents(out)
    # the written text is already normalized, so only raw_text differs
    assert (back.id, back.text, back.tokens, back.gold_codes) == (
        one_doc[0].id, one_doc[0].text, one_doc[0].tokens, one_doc[0].gold_codes)


def test_annotations_round_trip(tmp_path, one_doc):
    spans = [RationaleSpan("d1", "I10", 0, 3, "htn"), RationaleSpan("d1", "I10", 4, 9, "noted", 0.5)]
    out = tmp_path / "a.jsonl"
    corpus.write_annotations(spans, out)
    assert corpus.load_annotations(out, one_doc) == spans


def test_code_label_requires_code():
    with pytest.raises(ValidationError):
        CodeLabel("")


def test_covered_tokens_partial_overlap():
    doc = corpus.make_document("x", "aa bb cc")
    assert corpus.covered_tokens(doc, 1, 4) == [0, 1]
    assert corpus.covered_tokens(doc, 2, 3) == []


def test_label_space_sorted_unique():
    docs = [corpus.make_document("a", "x", [CodeLabel("I10", "h"), CodeLabel("E785", "l")]),
            corpus.make_document("b", "y", [CodeLabel("I10", "h")])]
    assert [c.code for c in corpus.label_space(docs)] == ["E785", "I10"]
