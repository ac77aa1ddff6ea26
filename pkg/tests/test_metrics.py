import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from explicd import corpus, metrics
from explicd.corpus import RationaleSpan
from explicd.metrics import MatchCounts
from oracles import brute_match_counts, random_instance

MODES = list(itertools.product(metrics.GRANULARITIES, metrics.POSITION_MODES))


def as_spans(texts, tuples):
    return [RationaleSpan(d, c, s, e, texts[d][s:e]) for d, c, s, e in tuples]


def docs_for(texts):
    return {k: corpus.document_from_tokens(k, v.split(), ()) for k, v in texts.items()}


@pytest.fixture
def d1():
    return corpus.make_document("d1", "htn noted hypertension stable")


def test_identity_all_modes(d1):
    spans = [RationaleSpan("d1", "I10", 0, 3, "htn"), RationaleSpan("d1", "I10", 10, 22, "hypertension")]
    for g, p in MODES:
        c = metrics.match_counts(spans, spans, g, p, [d1])
        assert c.tp == c.accurate_count and c.fp == 0 and c.fn == 0


def test_span_exact_hand_example(d1):
    gold = [RationaleSpan("d1", "I10", 0, 3, "htn")]
    pred = gold + [RationaleSpan("d1", "I10", 10, 22, "hypertension")]
    c = metrics.match_counts(pred, gold, "span", "exact", [d1])
    assert (c.tp, c.fp, c.fn) == (1, 1, 0)


def test_exact_vs_position_independent():
    doc = corpus.make_document("d1", "htn and hypertension then htn")
    gold = [RationaleSpan("d1", "I10", 0, 3, "htn"), RationaleSpan("d1", "I10", 8, 20, "hypertension")]
    pred = [RationaleSpan("d1", "I10", 26, 29, "htn")]
    ex = metrics.match_counts(pred, gold, "span", "exact", [doc])
    pi = metrics.match_counts(pred, gold, "span", "position_independent", [doc])
    assert ex.tp == 0
    assert (pi.tp, pi.fn) == (1, 1)


def test_position_independent_is_case_insensitive():
    doc = corpus.make_document("d1", "htn")
    a = [RationaleSpan("d1", "I10", 0, 3, "htn")]
    b = [RationaleSpan("d1", "I10", 0, 3, "HTN")]
    # b is not a valid slice, so compare the normalizer directly
    assert metrics.normalize_span_text(b[0].text) == a[0].text
    assert metrics.match_counts(a, a, "span", "position_independent", [doc]).tp == 1


def test_codes_are_not_mixed(d1):
    a = [RationaleSpan("d1", "I10", 0, 3, "htn")]
    b = [RationaleSpan("d1", "E785", 0, 3, "htn")]
    for g, p in MODES:
        assert metrics.match_counts(a, b, g, p, [d1]).tp == 0


def test_pi_unit_code_merges_documents():
    docs = [corpus.make_document("a", "htn"), corpus.make_document("b", "htn")]
    pred = [RationaleSpan("a", "I10", 0, 3, "htn")]
    gold = [RationaleSpan("b", "I10", 0, 3, "htn")]
    assert metrics.match_counts(pred, gold, "span", "position_independent", docs).tp == 0
    assert metrics.match_counts(pred, gold, "span", "position_independent", docs, pi_unit="code").tp == 1


def test_bad_mode_names(d1):
    with pytest.raises(ValueError):
        metrics.match_counts([], [], "sentence", "exact", [d1])
    with pytest.raises(ValueError):
        metrics.match_counts([], [], "span", "fuzzy", [d1])


@pytest.mark.parametrize("tp, fp, fn, expected", [
    (1, 1, 0, (0.5, 1.0, 2 / 3)),
    (0, 0, 0, (0.0, 0.0, 0.0)),
    (5, 0, 0, (1.0, 1.0, 1.0)),
])
def test_prf_from_counts(tp, fp, fn, expected):
    prf = metrics.prf_from_counts(MatchCounts(tp + fp, tp + fn, tp))
    assert (prf.precision, prf.recall) == expected[:2]
    assert prf.f1 == pytest.approx(expected[2], abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_match_counts_equal_brute_force(seed):
    texts, pred, gold = random_instance(np.random.default_rng(seed))
    docs = docs_for(texts)
    for g, p in MODES:
        c = metrics.match_counts(as_spans(texts, pred), as_spans(texts, gold), g, p, docs)
        assert (c.prediction_count, c.accurate_count, c.tp) == brute_match_counts(pred, gold, g, p, texts)
        assert 0 <= c.tp <= min(c.prediction_count, c.accurate_count)


def test_plausibility_reports_all_modes(d1):
    spans = [RationaleSpan("d1", "I10", 0, 3, "htn")]
    rep = metrics.plausibility(spans, spans, [d1])
    assert set(rep) == {"span/exact", "span/position_independent", "token/exact", "token/position_independent"}
    assert all(r["f1"] == 1.0 for r in rep.values())


def test_iaa_identity_and_disjoint(d1):
    a = [RationaleSpan("d1", "I10", 0, 3, "htn")]
    b = [RationaleSpan("d1", "I10", 10, 22, "hypertension")]
    for prf in metrics.iaa_report(a, a, [d1]).values():
        assert (prf.precision, prf.recall, prf.f1) == (1.0, 1.0, 1.0)
    for prf in metrics.iaa_report(a, b, [d1]).values():
        assert (prf.precision, prf.recall, prf.f1) == (0.0, 0.0, 0.0)


def test_iaa_direction():
    doc = corpus.make_document("d1", "aa bb cc")
    a = [RationaleSpan("d1", "X", 0, 5, "aa bb")]
    b = [RationaleSpan("d1", "X", 0, 2, "aa")]
    tok = metrics.iaa_report(a, b, [doc])["token"]
    # a marks 2 tokens, b marks 1, they share 1
    assert (tok.precision, tok.recall) == (0.5, 1.0)


def test_classification_hand_example():
    scores = np.array([[0.9, 0.2], [0.6, 0.7]])
    gold = np.array([[1, 0], [0, 1]])
    rep = metrics.classification_report(scores, gold, at_n=(1,), tau=0.5)
    assert rep.micro_precision == pytest.approx(2 / 3, abs=1e-15)
    assert rep.micro_recall == 1.0
    assert rep.micro_f1 == pytest.approx(0.8, abs=1e-15)
    assert rep.precision_at[1] == 1.0


def test_classification_perfect():
    scores = np.array([[0.9, 0.1, 0.2], [0.1, 0.8, 0.7], [0.95, 0.05, 0.6]])
    gold = scores > 0.5
    rep = metrics.classification_report(scores, gold)
    assert rep.micro_f1 == rep.macro_f1 == rep.micro_auc == rep.macro_auc == 1.0


def test_classification_all_zero_scores():
    scores = np.zeros((3, 4))
    gold = np.eye(3, 4)
    rep = metrics.classification_report(scores, gold, at_n=(2,))
    assert rep.micro_recall == 0.0
    assert rep.precision_at[2] == 0.0


def test_classification_no_positives_warns():
    rep = metrics.classification_report(np.full((2, 2), 0.3), np.zeros((2, 2)))
    assert rep.warnings
    assert rep.macro_f1 == 0.0


def test_threshold_is_strict():
    rep = metrics.classification_report(np.array([[0.5]]), np.array([[1]]), at_n=(1,), tau=0.5)
    assert rep.micro_recall == 0.0


def pairwise_auc(s, y):
    pos = [a for a, t in zip(s, y) if t]
    neg = [a for a, t in zip(s, y) if not t]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


@given(st.lists(st.tuples(st.integers(0, 4), st.booleans()), min_size=2, max_size=25))
def test_rank_auc_matches_pairwise(pairs):
    s = np.array([p[0] for p in pairs], dtype=float) / 4
    y = np.array([p[1] for p in pairs])
    got = metrics.rank_auc(s, y)
    if y.all() or not y.any():
        assert got is None
    else:
        assert got == pytest.approx(pairwise_auc(s, y), abs=1e-12)


def test_precision_at_n_definition():
    scores = np.array([[0.9, 0.8, 0.1], [0.2, 0.3, 0.4]])
    gold = np.array([[1, 0, 0], [0, 0, 1]])
    assert metrics.precision_at_n(scores, gold, 2) == pytest.approx((1 / 2 + 1 / 2) / 2)
    with pytest.raises(ValueError):
        metrics.precision_at_n(scores, gold, 0)


def test_report_metric_lookup():
    rep = metrics.classification_report(np.array([[0.9, 0.1]]), np.array([[1, 0]]), at_n=(1,))
    assert rep.metric("micro_f1") == rep.micro_f1
    assert rep.metric("precision@1") == 1.0
    with pytest.raises(KeyError):
        rep.metric("precision@7")
    with pytest.raises(KeyError):
        rep.metric("accuracy")
