"""Clamped binary cross-entropy terms for code probabilities and attention."""

import numpy as np

from explicd.errors import ShapeError

DEFAULT_EPS = 1e-7


def _bce_sum(p, y, eps):
    q = np.clip(p, eps, 1.0 - eps)
    return -float(np.sum(y * np.log(q) + (1.0 - y) * np.log(1.0 - q)))


def _inside(p, eps):
    return (p >= eps) & (p <= 1.0 - eps)


def coding_loss(p, y, eps=DEFAULT_EPS):
    """Mean over documents of the summed per-label binary cross-entropy.

    ``p`` and ``y`` are ``(n_labels,)`` for a single document or
    ``(n_docs, n_labels)``. Probabilities are clamped into ``[eps, 1 - eps]``.
    """
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    if p.shape != y.shape:
        raise ShapeError(f"probabilities {p.shape} vs targets {y.shape}")
    n_docs = 1 if p.ndim <= 1 else p.shape[0]
    if n_docs == 0:
        return 0.0
    return _bce_sum(p, y, eps) / n_docs


def coding_logit_grad(p, y, eps=DEFAULT_EPS):
    """d(single-doc coding loss)/d(logits); zero where the clamp is active."""
    return np.where(_inside(p, eps), p - y, 0.0)


def supervised_rows(mask):
    return np.flatnonzero(np.asarray(mask).any(axis=1))


def rationale_loss(attn, mask, eps=DEFAULT_EPS):
    """Attention-versus-mask binary cross-entropy, averaged over documents.

    Only label rows whose mask has at least one positive contribute.

    Args:
        attn: One ``(n_labels, n_tokens)`` attention matrix or a list of them.
        mask: Matching 0/1 mask matrix or list.
        eps: Clamp applied to attention before the logarithms.
    """
    if isinstance(attn, np.ndarray) and attn.ndim == 2:
        attn, mask = [attn], [mask]
    if len(attn) != len(mask):
        raise ShapeError("one mask per attention matrix required")
    if not attn:
        return 0.0
    total = 0.0
    for a, m in zip(attn, mask):
        a = np.asarray(getattr(a, "weights", a), dtype=float)
        m = np.asarray(getattr(m, "mask", m), dtype=float)
        if a.shape != m.shape:
            raise ShapeError(f"attention {a.shape} vs mask {m.shape}")
        rows = supervised_rows(m)
        if rows.size:
            total += _bce_sum(a[rows], m[rows], eps)
    return total / len(attn)


def rationale_attention_grad(a, m, eps=DEFAULT_EPS):
    """d(single-doc rationale loss)/d(attention) for supervised rows."""
    g = np.zeros_like(a)
    rows = supervised_rows(m)
    if rows.size:
        ar, mr = a[rows], m[rows]
        q = np.clip(ar, eps, 1.0 - eps)
        g[rows] = np.where(_inside(ar, eps), -(mr / q) + (1.0 - mr) / (1.0 - q), 0.0)
    return g
