"""Sufficiency and comprehensiveness of attention rationales.

Sufficiency is ``P(full) - P(rationale only)`` and comprehensiveness is
``P(full) - P(full without rationale)`` for a performance measure ``P``.
Lower sufficiency and higher comprehensiveness indicate better faithfulness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from explicd import coder
from explicd.corpus import Document, document_from_tokens
from explicd.errors import ConfigError, ValidationError
from explicd.metrics import classification_report, gold_matrix

RETAIN, REMOVE = "retain", "remove"
MEASURES = {RETAIN: "sufficiency", REMOVE: "comprehensiveness"}
TOP_P_GRID = tuple(range(10, 100, 10))
TOP_N_GRID = tuple(range(200, 2001, 200))


@dataclass(frozen=True)
class PerturbedDocument:
    base_id: str
    mode: str
    kept: tuple[int, ...]
    document: Document


@dataclass(frozen=True)
class FaithfulnessResult:
    mode: str
    k: float
    measure: str
    metric: str
    p_full: float
    p_perturbed: float
    delta: float
    retention_pct: float

    def to_row(self) -> dict:
        return {"mode": self.mode, "k": self.k, "measure": self.measure, "metric": self.metric,
                "P_full": self.p_full, "P_perturbed": self.p_perturbed, "delta": self.delta,
                "retention_pct": self.retention_pct}


def perturb_document(doc: Document, selected, mode: str,
                     token_scores: Optional[np.ndarray] = None) -> PerturbedDocument:
    """Keep (``retain``) or drop (``remove``) the selected tokens.

    When removal would leave nothing, the single token with the lowest
    ``token_scores`` value is kept (lowest index on ties; index 0 without
    scores). Kept tokens are re-joined with single spaces.
    """
    n = len(doc.tokens)
    sel = set(int(j) for j in selected)
    if any(j < 0 or j >= n for j in sel):
        raise ValidationError(f"{doc.id}: selection has indices outside [0, {n})")
    if mode == RETAIN:
        kept = sorted(sel)
        if not kept:
            raise ValidationError(f"{doc.id}: retaining an empty selection leaves no input")
    elif mode == REMOVE:
        kept = [j for j in range(n) if j not in sel]
        if not kept:
            j = int(np.argmin(token_scores)) if token_scores is not None else 0
            kept = [j]
    else:
        raise ConfigError(f"mode must be {RETAIN!r} or {REMOVE!r}")
    words = [doc.tokens[j].text for j in kept]
    new = document_from_tokens(doc.id, words, doc.gold_codes, raw_text=doc.raw_text)
    return PerturbedDocument(doc.id, mode, tuple(kept), new)


def _probabilities(params, docs, tau):
    return np.array([coder.predict_codes(params, d, tau).probabilities for d in docs]).reshape(
        len(docs), params.n_labels)


def _metric(scores, gold, metric, tau, at_n):
    return classification_report(scores, gold, at_n=at_n, tau=tau).metric(metric)


def _with_precision_cutoff(metric, at_n):
    at_n = tuple(at_n)
    key = metric.lower()
    for prefix in ("precision@", "p@", "precision_at_"):
        if key.startswith(prefix):
            n = int(key[len(prefix):])
            if n not in at_n:
                at_n = at_n + (n,)
    return at_n


def evaluate_perturbed(params: coder.ModelParams, docs: Sequence[Document], selections, mode: str,
                       metric: str = "micro_f1", tau: float = 0.5, at_n: Sequence[int] = (5, 8),
                       token_scores=None, threshold=("custom", 0)) -> FaithfulnessResult:
    """Score the model on perturbed inputs against the unperturbed baseline.

    Args:
        params: Trained model.
        docs: Documents in evaluation order.
        selections: Per document either a list of token indices (pooled
            scope) or a ``{label: indices}`` dict (per-label scope).
        mode: ``retain`` (sufficiency) or ``remove`` (comprehensiveness).
        metric: Name understood by :meth:`ClassificationReport.metric`.
        tau: Decision threshold.
        at_n: Precision@N cut-offs to compute.
        token_scores: Per document, the ranking scores used for the
            all-removed fallback (per-label dicts for per-label selections).
            Computed from attention when omitted.
        threshold: ``(selection mode, k)`` echoed into the result.
    """
    if len(selections) != len(docs):
        raise ValidationError("one selection per document required")
    at_n = _with_precision_cutoff(metric, at_n)
    gold = gold_matrix(docs, params.labels)
    full = _probabilities(params, docs, tau)
    perturbed = np.empty_like(full)
    kept_fracs = []
    for i, (doc, sel) in enumerate(zip(docs, selections)):
        scores_i = token_scores[i] if token_scores is not None else None
        if isinstance(sel, dict):
            if scores_i is None:
                attn = coder.forward(params, doc, tau)[0].weights
                scores_i = {lab: attn[l] for l, lab in enumerate(params.labels)}
            for l, lab in enumerate(params.labels):
                pd = perturb_document(doc, sel[lab], mode, scores_i[lab])
                perturbed[i, l] = coder.predict_codes(params, pd.document, tau).probabilities[l]
                kept_fracs.append(len(pd.kept) / len(doc.tokens))
        else:
            if scores_i is None and mode == REMOVE:
                attn, pred, _ = coder.forward(params, doc, tau)
                scores_i = coder.pooled_scores(attn.weights, pred.decisions, "pooled_max")
            pd = perturb_document(doc, sel, mode, scores_i)
            perturbed[i] = coder.predict_codes(params, pd.document, tau).probabilities
            kept_fracs.append(len(pd.kept) / len(doc.tokens))
    p_full = _metric(full, gold, metric, tau, at_n)
    p_pert = _metric(perturbed, gold, metric, tau, at_n)
    retention = 100.0 * float(np.mean(kept_fracs)) if kept_fracs else 0.0
    return FaithfulnessResult(threshold[0], threshold[1], MEASURES[mode], metric, p_full, p_pert,
                              p_full - p_pert, retention)


def faithfulness_sweep(params: coder.ModelParams, corpus: Sequence[Document], thresholds,
                       metric: str = "micro_f1", scope: str = "pooled_max", tau: float = 0.5,
                       at_n: Sequence[int] = (5, 8)) -> list[FaithfulnessResult]:
    """Sufficiency then comprehensiveness rows for every ``(mode, k)`` threshold.

    Within each measure rows are ordered by selection mode and ascending ``k``.
    """
    thresholds = sorted({(m, k) for m, k in thresholds}, key=lambda t: (t[0], t[1]))
    if not thresholds:
        return []
    attns, preds = [], []
    for d in corpus:
        a, p, _ = coder.forward(params, d, tau)
        attns.append(a)
        preds.append(p)
    if scope == "per_label":
        fallback = [{lab: a.weights[l] for l, lab in enumerate(params.labels)} for a in attns]
    else:
        fallback = [coder.pooled_scores(a.weights, p.decisions, scope) for a, p in zip(attns, preds)]
    rows = []
    for mode in (RETAIN, REMOVE):
        for sel_mode, k in thresholds:
            selections = [coder.extract_rationale_tokens(a, d, sel_mode, k, scope, p.decisions)
                          for a, p, d in zip(attns, preds, corpus)]
            rows.append(evaluate_perturbed(params, corpus, selections, mode, metric, tau, at_n,
                                           token_scores=fallback, threshold=(sel_mode, k)))
    return rows


def parse_grid(spec: str) -> list[float]:
    """Parse ``start:stop:step`` (inclusive stop) or a comma-separated list."""
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid {spec!r} must be start:stop:step")
        start, stop, step = (float(x) for x in parts)
        if step <= 0 or stop < start:
            raise ConfigError(f"grid {spec!r} must have positive step and stop >= start")
        n = int(round((stop - start) / step))
        vals = [start + i * step for i in range(n + 1) if start + i * step <= stop + 1e-9]
    else:
        vals = [float(x) for x in spec.split(",") if x.strip()]
    return [int(v) if float(v).is_integer() else v for v in vals]
