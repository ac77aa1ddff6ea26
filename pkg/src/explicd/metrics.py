"""Plausibility matching, classification metrics and inter-annotator agreement."""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from explicd.corpus import Document, RationaleSpan, covered_tokens, validate_spans
from explicd.errors import ShapeError, ValidationError

logger = logging.getLogger(__name__)

GRANULARITIES = ("span", "token")
POSITION_MODES = ("exact", "position_independent")


@dataclass(frozen=True)
class MatchCounts:
    prediction_count: int
    accurate_count: int
    tp: int

    @property
    def fp(self) -> int:
        return self.prediction_count - self.tp

    @property
    def fn(self) -> int:
        return self.accurate_count - self.tp

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.prediction_count + other.prediction_count,
                           self.accurate_count + other.accurate_count, self.tp + other.tp)

    def to_dict(self) -> dict:
        return {"prediction": self.prediction_count, "accurate": self.accurate_count,
                "tp": self.tp, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def prf_from_counts(c: MatchCounts) -> PRF:
    p = _ratio(c.tp, c.tp + c.fp)
    r = _ratio(c.tp, c.tp + c.fn)
    return PRF(p, r, f1_score(p, r))


def normalize_span_text(s: str) -> str:
    return " ".join(s.lower().split())


def _group(spans: Iterable[RationaleSpan], by_doc: bool) -> dict[tuple, list[RationaleSpan]]:
    g: dict[tuple, list[RationaleSpan]] = defaultdict(list)
    for s in spans:
        g[(s.doc_id, s.code) if by_doc else (s.code,)].append(s)
    return g


def _token_units(spans, docs, exact: bool) -> set:
    units = set()
    for s in spans:
        doc = docs[s.doc_id]
        for j in covered_tokens(doc, s.start, s.end):
            units.add((s.doc_id, j) if exact else normalize_span_text(doc.tokens[j].text))
    return units


def match_counts(predicted: Sequence[RationaleSpan], gold: Sequence[RationaleSpan],
                 granularity: str, position_mode: str, docs,
                 pi_unit: str = "doc_code") -> MatchCounts:
    """Count matches between predicted and gold rationales.

    Comparison happens per ``(doc, code)`` group and is summed. Exact span
    matching is one-to-one on ``(start, end)``; position-independent modes
    compare deduplicated normalized texts.

    Args:
        predicted: Candidate spans.
        gold: Reference spans.
        granularity: ``"span"`` or ``"token"``.
        position_mode: ``"exact"`` or ``"position_independent"``.
        docs: Documents (sequence or id mapping) the spans refer to.
        pi_unit: Deduplication scope for position-independent modes:
            ``"doc_code"`` (default) or ``"code"`` for corpus-wide per code.

    Raises:
        ValidationError: a span does not match its document slice.
    """
    if granularity not in GRANULARITIES:
        raise ValueError(f"granularity must be one of {GRANULARITIES}")
    if position_mode not in POSITION_MODES:
        raise ValueError(f"position_mode must be one of {POSITION_MODES}")
    if pi_unit not in ("doc_code", "code"):
        raise ValueError("pi_unit must be 'doc_code' or 'code'")
    by_id = docs if isinstance(docs, dict) else {d.id: d for d in docs}
    validate_spans(predicted, by_id)
    validate_spans(gold, by_id)

    exact = position_mode == "exact"
    by_doc = exact or pi_unit == "doc_code"
    gp, gg = _group(predicted, by_doc), _group(gold, by_doc)
    total = MatchCounts(0, 0, 0)
    for key in sorted(set(gp) | set(gg)):
        ps, gs = gp.get(key, []), gg.get(key, [])
        if granularity == "span" and exact:
            pc = Counter((s.start, s.end) for s in ps)
            gc = Counter((s.start, s.end) for s in gs)
            tp = sum(min(n, gc[k]) for k, n in pc.items())
            total += MatchCounts(len(ps), len(gs), tp)
        elif granularity == "span":
            pt = {normalize_span_text(s.text) for s in ps}
            gt = {normalize_span_text(s.text) for s in gs}
            total += MatchCounts(len(pt), len(gt), len(pt & gt))
        else:
            pu, gu = _token_units(ps, by_id, exact), _token_units(gs, by_id, exact)
            total += MatchCounts(len(pu), len(gu), len(pu & gu))
    return total


def plausibility(predicted, gold, docs, pi_unit: str = "doc_code") -> dict[str, dict]:
    """All four granularity x position combinations, counts plus PRF."""
    out = {}
    for gran in GRANULARITIES:
        for pos in POSITION_MODES:
            c = match_counts(predicted, gold, gran, pos, docs, pi_unit)
            out[f"{gran}/{pos}"] = {**c.to_dict(), **prf_from_counts(c).to_dict()}
    return out


def iaa_report(a: Sequence[RationaleSpan], b: Sequence[RationaleSpan], docs) -> dict[str, PRF]:
    """Agreement of annotator ``a`` against reference annotator ``b``.

    Precision is ``|A_b & A_a| / |A_a|`` and recall ``|A_b & A_a| / |A_b|``.
    """
    return {
        "span": prf_from_counts(match_counts(a, b, "span", "exact", docs)),
        "token": prf_from_counts(match_counts(a, b, "token", "exact", docs)),
    }


# --------------------------------------------------------------------------
# document-level classification


@dataclass
class ClassificationReport:
    micro_f1: float
    macro_f1: float
    micro_precision: float
    macro_precision: float
    micro_recall: float
    macro_recall: float
    micro_auc: float
    macro_auc: float
    precision_at: dict[int, float] = field(default_factory=dict)
    retention: Optional[float] = None
    warnings: list[str] = field(default_factory=list)

    def metric(self, name: str) -> float:
        """Look up a metric by name, e.g. ``micro_f1`` or ``precision@5``."""
        key = name.lower().replace("-", "_")
        for prefix in ("precision@", "p@", "precision_at_"):
            if key.startswith(prefix):
                n = int(key[len(prefix):])
                if n not in self.precision_at:
                    raise KeyError(f"precision@{n} was not computed")
                return self.precision_at[n]
        if key == "retention":
            return self.retention
        if not hasattr(self, key) or key in ("precision_at", "warnings", "metric"):
            raise KeyError(f"unknown metric {name!r}")
        return getattr(self, key)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("micro_f1", "macro_f1", "micro_precision", "macro_precision",
                                          "micro_recall", "macro_recall", "micro_auc", "macro_auc")}
        for n, v in sorted(self.precision_at.items()):
            d[f"precision@{n}"] = v
        if self.retention is not None:
            d["retention"] = self.retention
        return d


def rank_auc(scores: np.ndarray, labels: np.ndarray) -> Optional[float]:
    """Area under ROC via the rank statistic; tied scores count one half.

    Returns None when either class is absent.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(s.size)
    i = 0
    # average ranks over tie blocks
    while i < s.size:
        j = i
        while j + 1 < s.size and s[j + 1] == s[i]:
            j += 1
        ranks[i:j + 1] = (i + j) / 2.0 + 1.0
        i = j + 1
    r = np.empty(s.size)
    r[order] = ranks
    return float((r[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def precision_at_n(scores: np.ndarray, gold: np.ndarray, n: int) -> float:
    """Mean over documents of gold hits among the ``n`` top-scored labels, over ``n``."""
    if n < 1:
        raise ValueError("N must be >= 1")
    if scores.shape[0] == 0:
        return 0.0
    order = np.argsort(-scores, axis=1, kind="stable")[:, :n]
    # a zero score is no retrieval, so all-zero rows score 0 regardless of tie order
    retrieved = np.take_along_axis(scores, order, axis=1) > 0
    hits = (np.take_along_axis(gold, order, axis=1).astype(bool) & retrieved).sum(axis=1)
    return float(np.mean(hits / n))


def classification_report(scores, gold, at_n: Sequence[int] = (5, 8), tau: float = 0.5,
                          decisions=None) -> ClassificationReport:
    """F1, precision, recall, AUC (micro and macro) and precision@N.

    Args:
        scores: ``(n_docs, n_labels)`` probabilities.
        gold: Same-shape 0/1 indicators.
        at_n: Cut-offs for precision@N.
        tau: Decision threshold (strict ``>``) used when ``decisions`` is None.
        decisions: Optional precomputed boolean decisions.

    Macro averages run over labels with at least one gold positive.
    """
    scores = np.asarray(scores, dtype=float)
    gold = np.asarray(gold).astype(bool)
    if scores.ndim != 2 or scores.shape != gold.shape:
        raise ShapeError(f"scores {scores.shape} and gold {gold.shape} must be equal 2-d shapes")
    pred = scores > tau if decisions is None else np.asarray(decisions, dtype=bool)
    if pred.shape != gold.shape:
        raise ShapeError("decisions shape mismatch")
    warns = []

    tp = (pred & gold).sum(axis=0)
    fp = (pred & ~gold).sum(axis=0)
    fn = (~pred & gold).sum(axis=0)
    mp = _ratio(tp.sum(), tp.sum() + fp.sum())
    mr = _ratio(tp.sum(), tp.sum() + fn.sum())

    active = np.flatnonzero(gold.sum(axis=0) > 0)
    if active.size == 0:
        warns.append("no gold positives; macro metrics reported as 0")
        logger.warning(warns[-1])
        Mp = Mr = Mf = Mauc = 0.0
    else:
        ps = [_ratio(tp[l], tp[l] + fp[l]) for l in active]
        rs = [_ratio(tp[l], tp[l] + fn[l]) for l in active]
        Mp, Mr = float(np.mean(ps)), float(np.mean(rs))
        Mf = float(np.mean([f1_score(p, r) for p, r in zip(ps, rs)]))
        aucs = [a for a in (rank_auc(scores[:, l], gold[:, l]) for l in active) if a is not None]
        if not aucs:
            warns.append("no label has both classes; macro AUC reported as 0")
        Mauc = float(np.mean(aucs)) if aucs else 0.0
    micro_auc = rank_auc(scores, gold)
    if micro_auc is None:
        warns.append("pooled cells lack a class; micro AUC reported as 0")
        micro_auc = 0.0
    return ClassificationReport(
        micro_f1=f1_score(mp, mr), macro_f1=Mf, micro_precision=mp, macro_precision=Mp,
        micro_recall=mr, macro_recall=Mr, micro_auc=micro_auc, macro_auc=Mauc,
        precision_at={n: precision_at_n(scores, gold, n) for n in at_n}, warnings=warns)


def gold_matrix(docs: Sequence[Document], labels: Sequence[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(labels)}
    y = np.zeros((len(docs), len(labels)), dtype=bool)
    for i, d in enumerate(docs):
        for c in d.codes:
            if c in index:
                y[i, index[c]] = True
    return y


def report_from_predictions(predictions, docs: Sequence[Document], labels: Sequence[str],
                            at_n: Sequence[int] = (5, 8)) -> ClassificationReport:
    """Classification report from a list of :class:`~explicd.coder.PredictionSet`."""
    if len(predictions) != len(docs):
        raise ValidationError("one prediction per document required")
    scores = np.array([p.probabilities for p in predictions]).reshape(len(docs), len(labels))
    decisions = np.array([p.decisions for p in predictions]).reshape(len(docs), len(labels))
    return classification_report(scores, gold_matrix(docs, labels), at_n=at_n, decisions=decisions)
