"""Seeded synthetic corpora with planted keyword rationales.

Each code owns a few keyword tokens. A document carries one to three codes
and, for each, one or two planted mentions of one or two of that code's
keywords. Mentions are separated by filler tokens so every planted mention is
its own span.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from explicd.corpus import CodeLabel, Document, RationaleSpan, document_from_tokens

CODE_POOL = [
    ("I10", "Essential (primary) hypertension", ["hypertension", "htn", "hypertensive"]),
    ("E785", "Hyperlipidemia, unspecified", ["hyperlipidemia", "hld", "dyslipidemia"]),
    ("Z7901", "Long term (current) use of anticoagulants", ["warfarin", "coumadin"]),
    ("I4891", "Unspecified atrial fibrillation", ["afib", "fibrillation", "digoxin"]),
    ("E119", "Type 2 diabetes mellitus without complications", ["diabetes", "dm2", "metformin"]),
    ("N179", "Acute kidney failure, unspecified", ["aki", "creatinine"]),
    ("J449", "Chronic obstructive pulmonary disease, unspecified", ["copd", "emphysema", "tiotropium"]),
    ("K219", "Gastro-esophageal reflux disease without esophagitis", ["gerd", "reflux", "omeprazole"]),
    ("F329", "Major depressive disorder, single episode, unspecified", ["depression", "sertraline"]),
    ("E039", "Hypothyroidism, unspecified", ["hypothyroidism", "levothyroxine", "tsh"]),
]


@dataclass
class SyntheticCorpus:
    docs: list[Document]
    spans: list[RationaleSpan]
    labels: list[CodeLabel]
    keywords: dict[str, list[str]]


def _filler_vocab(size: int) -> list[str]:
    consonants, vowels = "bdfgklmnprstvz", "aeiou"
    words = []
    for i in range(size):
        a, b, c = i % 14, (i // 14) % 5, (i // 70) % 14
        words.append(f"{consonants[a]}{vowels[b]}{consonants[c]}{vowels[(a + c) % 5]}x{i}")
    return words


def generate_corpus(n_docs: int = 500, n_codes: int = 8, seed: int = 0, min_len: int = 40,
                    max_len: int = 80, n_filler: int = 200, id_prefix: str = "syn") -> SyntheticCorpus:
    """Generate documents, gold codes and the planted rationale spans.

    The keyword assignment depends only on ``n_codes``; ``seed`` drives
    document content, so corpora from different seeds share a label space.
    """
    if not 1 <= n_codes <= len(CODE_POOL):
        raise ValueError(f"n_codes must be in [1, {len(CODE_POOL)}]")
    rng = np.random.default_rng(seed)
    pool = CODE_POOL[:n_codes]
    labels = [CodeLabel(c, desc) for c, desc, _ in pool]
    keywords = {c: list(kw) for c, _, kw in pool}
    filler = _filler_vocab(n_filler)

    docs, spans = [], []
    for i in range(n_docs):
        n_gold = int(rng.integers(1, 4))
        gold = sorted(rng.choice(n_codes, size=n_gold, replace=False).tolist())
        mentions = []
        for g in gold:
            code = pool[g][0]
            for _ in range(int(rng.integers(1, 3))):
                size = int(rng.integers(1, 3))
                words = rng.choice(keywords[code], size=min(size, len(keywords[code])), replace=False)
                mentions.append((code, [str(w) for w in words]))
        order = rng.permutation(len(mentions))
        mentions = [mentions[k] for k in order]
        length = int(rng.integers(min_len, max_len + 1))
        n_fill = max(length - sum(len(m[1]) for m in mentions), len(mentions) + 1)
        # gaps between mentions are at least one filler token
        cuts = np.sort(rng.choice(np.arange(1, n_fill), size=len(mentions), replace=False))
        words: list[str] = []
        planted = []
        prev = 0
        for cut, (code, kw) in zip(cuts, mentions):
            words.extend(rng.choice(filler, size=int(cut - prev)).tolist())
            planted.append((code, len(words), len(words) + len(kw)))
            words.extend(kw)
            prev = cut
        words.extend(rng.choice(filler, size=int(n_fill - prev)).tolist())
        doc = document_from_tokens(f"{id_prefix}{i:04d}", words,
                                   [labels[g] for g in gold])
        docs.append(doc)
        for code, a, b in planted:
            start, end = doc.tokens[a].start, doc.tokens[b - 1].end
            spans.append(RationaleSpan(doc.id, code, start, end, doc.text[start:end]))
    return SyntheticCorpus(docs, spans, labels, keywords)
