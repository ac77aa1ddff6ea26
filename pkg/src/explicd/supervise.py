"""Rationale learning: attention supervision and the NER reformulation."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from explicd import coder, encoders
from explicd.corpus import Document, RationaleSpan, covered_tokens, validate_spans
from explicd.errors import ConfigError, TrainingError, ValidationError
from explicd.losses import rationale_loss  # noqa: F401  re-exported

logger = logging.getLogger(__name__)

OUTSIDE = "O"
TAGGER_FORMAT = "explicd-tagger/1"


@dataclass
class RationaleMask:
    mask: np.ndarray
    labels: tuple[str, ...] = ()


@dataclass
class BioSequence:
    tags: list[str]
    dropped: int = 0
    truncated: int = 0


def _spans_of(distant) -> list[RationaleSpan]:
    if distant is None:
        return []
    return list(getattr(distant, "spans", distant))


def spans_to_mask(doc: Document, spans: Iterable[RationaleSpan], labels: Sequence[str]) -> RationaleMask:
    """``M[l, j] = 1`` iff token ``j`` overlaps a span of label ``l`` by a character."""
    index = {c: i for i, c in enumerate(labels)}
    m = np.zeros((len(labels), len(doc.tokens)), dtype=np.int8)
    for s in spans:
        if s.doc_id != doc.id or s.code not in index:
            continue
        for j in covered_tokens(doc, s.start, s.end):
            m[index[s.code], j] = 1
    return RationaleMask(m, tuple(labels))


def masks_for_corpus(corpus: Sequence[Document], spans: Iterable[RationaleSpan],
                     labels: Sequence[str]) -> list[np.ndarray]:
    by_doc = defaultdict(list)
    for s in spans:
        by_doc[s.doc_id].append(s)
    return [spans_to_mask(d, by_doc.get(d.id, []), labels).mask for d in corpus]


def multiobjective_train(params: coder.ModelParams, corpus: Sequence[Document], distant,
                         config: coder.TrainConfig):
    """Train on ``coding + config.lam * rationale`` with masks from ``distant``.

    Returns:
        ``(params, per-epoch trace)``.
    """
    spans = _spans_of(distant)
    by_id = {d.id: d for d in corpus}
    unknown = {s.doc_id for s in spans} - set(by_id)
    if unknown:
        raise ValidationError(f"distant spans reference unknown documents: {sorted(unknown)[:5]}")
    validate_spans(spans, by_id)
    masks = masks_for_corpus(corpus, spans, params.labels)
    return coder.fit(params, corpus, config, masks=masks, lam=config.lam)


def attention_mass(params: coder.ModelParams, corpus: Sequence[Document], spans) -> float:
    """Mean attention mass on masked tokens over supervised ``(doc, label)`` rows."""
    masks = masks_for_corpus(corpus, _spans_of(spans), params.labels)
    vals = []
    for d, m in zip(corpus, masks):
        rows = np.flatnonzero(m.any(axis=1))
        if rows.size:
            A = coder.forward(params, d)[0].weights
            vals.extend((A[rows] * m[rows]).sum(axis=1).tolist())
    return float(np.mean(vals)) if vals else 0.0


# --------------------------------------------------------------------------
# BIO tagging


def tagset(codes: Sequence[str]) -> list[str]:
    tags = [OUTSIDE]
    for c in codes:
        tags += [f"B-{c}", f"I-{c}"]
    return tags


def _split(tag: str) -> tuple[str, Optional[str]]:
    if tag == OUTSIDE:
        return OUTSIDE, None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
        return tag[0], tag[2:]
    raise ValidationError(f"malformed BIO tag {tag!r}")


def encode_bio(doc: Document, spans: Sequence[RationaleSpan]) -> BioSequence:
    """BIO tags for ``spans`` over the document's tokens.

    Overlaps are resolved with longer spans (in tokens) claiming contested
    tokens first and earlier spans winning ties. A partly shadowed span is cut
    to its longest unclaimed contiguous run; a fully shadowed one is dropped.
    """
    n = len(doc.tokens)
    tags = [OUTSIDE] * n
    owner = [False] * n
    covered = [covered_tokens(doc, s.start, s.end) for s in spans]
    order = sorted(range(len(spans)), key=lambda i: (-len(covered[i]), i))
    dropped = truncated = 0
    for i in order:
        toks = covered[i]
        if not toks:
            dropped += 1
            continue
        runs, cur = [], []
        for j in range(toks[0], toks[-1] + 1):
            if owner[j]:
                if cur:
                    runs.append(cur)
                cur = []
            else:
                cur.append(j)
        if cur:
            runs.append(cur)
        if not runs:
            dropped += 1
            continue
        best = max(runs, key=len)  # first longest run
        if len(best) < len(toks):
            truncated += 1
        code = spans[i].code
        for pos, j in enumerate(best):
            owner[j] = True
            tags[j] = f"{'B' if pos == 0 else 'I'}-{code}"
    return BioSequence(tags, dropped, truncated)


def decode_bio(tags: Sequence[str], doc: Document) -> tuple[list[RationaleSpan], int]:
    """Turn maximal ``B``/``I`` runs into spans.

    An ``I`` tag that does not continue a run of the same code is treated as
    ``B``; the number of such repairs is returned alongside the spans.
    """
    if len(tags) != len(doc.tokens):
        raise ValidationError(f"{doc.id}: {len(tags)} tags for {len(doc.tokens)} tokens")
    spans: list[RationaleSpan] = []
    repairs = 0
    run: Optional[tuple[str, int, int]] = None

    def close():
        if run is not None:
            code, a, b = run
            s, e = doc.tokens[a].start, doc.tokens[b].end
            spans.append(RationaleSpan(doc.id, code, s, e, doc.text[s:e]))

    for j, tag in enumerate(tags):
        kind, code = _split(tag)
        if kind == "I" and run is not None and run[0] == code:
            run = (code, run[1], j)
            continue
        close()
        run = None
        if kind == "I":
            repairs += 1
        if kind in "BI":
            run = (code, j, j)
    close()
    return spans, repairs


# --------------------------------------------------------------------------
# tagger


@dataclass
class TaggerParams(coder.ModelParams):
    """Encoder plus a per-token output layer; ``labels`` holds the tagset."""

    @property
    def tags(self) -> list[str]:
        return self.labels

    def copy(self) -> "TaggerParams":
        base = super().copy()
        return TaggerParams(base.variant, base.width, base.arrays, base.vocab, base.labels)


def init_tagger(config: coder.TrainConfig, vocab: dict[str, int], tags: Sequence[str]) -> TaggerParams:
    if len(vocab) < 1 or len(tags) < 2:
        raise ConfigError("tagger needs a vocabulary and at least one entity tag")
    rng = np.random.default_rng(config.seed)
    shapes = {"emb": (len(vocab), config.d)}
    shapes.update(encoders.encoder_shapes(config.variant, config.d, config.d_out, config.width))
    shapes["Wo"] = (config.d_out, len(tags))
    shapes["bo"] = (len(tags),)
    arrays = coder._init_arrays(shapes, rng, config.init_scale)
    return TaggerParams(config.variant, config.width, arrays, dict(vocab), list(tags))


def _tagger_forward(params: TaggerParams, ids: np.ndarray):
    a = params.arrays
    E = a["emb"][ids]
    T, enc = encoders.encode(params.variant, a, E, params.width)
    logits = T @ a["Wo"] + a["bo"]
    logits = logits - logits.max(axis=1, keepdims=True)
    P = np.exp(logits)
    P /= P.sum(axis=1, keepdims=True)
    return T, enc, P


def tagger_objective(params: TaggerParams, ids: np.ndarray, targets: np.ndarray, need_grad: bool = True):
    """Mean per-token cross-entropy for one document and its gradients."""
    T, enc, P = _tagger_forward(params, ids)
    n = len(ids)
    loss = -float(np.mean(np.log(np.maximum(P[np.arange(n), targets], 1e-300))))
    if not need_grad:
        return loss, None
    a = params.arrays
    dlog = P.copy()
    dlog[np.arange(n), targets] -= 1.0
    dlog /= n
    grads = {"Wo": T.T @ dlog, "bo": dlog.sum(axis=0)}
    dE, enc_grads = encoders.encode_backward(params.variant, a, dlog @ a["Wo"].T, enc, params.width)
    grads.update(enc_grads)
    demb = np.zeros_like(a["emb"])
    np.add.at(demb, ids, dE)
    grads["emb"] = demb
    return loss, grads


def _tag_targets(doc: Document, spans: Sequence[RationaleSpan], tag_index: dict[str, int]) -> np.ndarray:
    bio = encode_bio(doc, [s for s in spans if f"B-{s.code}" in tag_index])
    return np.array([tag_index[t] for t in bio.tags], dtype=np.int64)


def ner_train(corpus: Sequence[Document], distant, config: coder.TrainConfig,
              codes: Optional[Sequence[str]] = None):
    """Train a per-token tagger on distant rationale spans.

    Every corpus document is a training example; tokens outside the spans are
    tagged ``O``. ``codes`` restricts the tagset (single-code models).

    Returns:
        ``(TaggerParams, per-epoch trace)``.
    """
    spans = _spans_of(distant)
    if not spans:
        raise TrainingError("NER training needs at least one distant rationale span")
    if not corpus:
        raise TrainingError("cannot train on an empty corpus")
    by_id = {d.id: d for d in corpus}
    validate_spans([s for s in spans if s.doc_id in by_id], by_id)
    codes = sorted({s.code for s in spans}) if codes is None else list(codes)
    tags = tagset(codes)
    params = init_tagger(config, coder.build_vocab(corpus), tags)
    tag_index = {t: i for i, t in enumerate(tags)}
    per_doc = defaultdict(list)
    for s in spans:
        per_doc[s.doc_id].append(s)
    ids = [coder.token_ids(params, d) for d in corpus]
    targets = [_tag_targets(d, per_doc.get(d.id, []), tag_index) for d in corpus]

    rng = np.random.default_rng(config.seed)
    velocity = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    trace = []
    n = len(corpus)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b0 in range(0, n, config.batch_size):
            batch = order[b0:b0 + config.batch_size]
            acc = {k: np.zeros_like(v) for k, v in params.arrays.items()}
            for i in batch:
                loss, g = tagger_objective(params, ids[i], targets[i])
                total += loss
                for k, v in g.items():
                    acc[k] += v
            for k, arr in params.arrays.items():
                velocity[k] = config.momentum * velocity[k] + acc[k] / len(batch)
                arr -= config.learning_rate * velocity[k]
        mean = total / n
        if not np.isfinite(mean):
            raise TrainingError("non-finite tagger loss", epoch=epoch)
        trace.append({"epoch": epoch, "loss": mean})
    return params, trace


def ner_predict(params: TaggerParams, doc: Document) -> tuple[list[RationaleSpan], set[str]]:
    """Greedy per-token tags decoded into spans; codes are those of the spans."""
    if not doc.tokens:
        return [], set()
    _, _, P = _tagger_forward(params, coder.token_ids(params, doc))
    tags = [params.tags[int(k)] for k in P.argmax(axis=1)]
    spans, _ = decode_bio(tags, doc)
    return spans, {s.code for s in spans}


def save_tagger(params: TaggerParams, path, config: Optional[coder.TrainConfig] = None) -> None:
    coder.save_checkpoint(params, path, config, kind=TAGGER_FORMAT)


def load_tagger(path):
    base, cfg, _ = coder.load_checkpoint(path, kind=TAGGER_FORMAT)
    return TaggerParams(base.variant, base.width, base.arrays, base.vocab, base.labels), cfg
