"""Label-wise attention code classifiers with convolutional or recurrent encoders.

For label ``l`` and token state ``t_j`` the attention score is ``u_l . t_j``
(``conv``) or ``u_l . tanh(W t_j)`` (``recur``); a softmax over tokens gives
the attention row, the attention-weighted sum of states gives the label-aware
document vector ``h_l`` and ``p_l = sigmoid(z_l . h_l + b_l)``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from explicd import encoders
from explicd.corpus import Document, label_space
from explicd.errors import ConfigError, EvaluationError, TrainingError, ValidationError
from explicd.losses import (DEFAULT_EPS, coding_logit_grad, coding_loss, rationale_attention_grad,
                            rationale_loss)

logger = logging.getLogger(__name__)

UNK = "<unk>"
VARIANTS = ("conv", "recur")
SCOPES = ("per_label", "pooled_max", "pooled_mean")
SELECTION_MODES = ("top_p_percent", "top_n")
CHECKPOINT_FORMAT = "explicd-coder/1"


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 8
    epochs: int = 30
    seed: int = 1337
    variant: str = "conv"
    d: int = 32
    d_out: int = 32
    width: int = 5
    tau: float = 0.5
    eps: float = DEFAULT_EPS
    momentum: float = 0.9
    lam: float = 1.0
    init_scale: float = 0.3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 < self.eps < 0.5:
            raise ConfigError("eps must lie in (0, 0.5)")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)")
        for name in ("batch_size", "d", "d_out", "width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0 or self.learning_rate < 0 or self.lam < 0:
            raise ConfigError("epochs, learning_rate and lam must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.variant == "recur" and self.d_out % 2:
            raise ConfigError("recurrent variant needs an even d_out (two directions)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ModelParams:
    variant: str
    width: int
    arrays: dict[str, np.ndarray]
    vocab: dict[str, int] = field(default_factory=dict)
    labels: list[str] = field(default_factory=list)

    @property
    def n_labels(self) -> int:
        return self.arrays["U"].shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(self.variant, self.width, {k: v.copy() for k, v in self.arrays.items()},
                           dict(self.vocab), list(self.labels))

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())


@dataclass
class AttentionMatrix:
    weights: np.ndarray
    labels: tuple[str, ...] = ()


@dataclass
class PredictionSet:
    probabilities: np.ndarray
    decisions: np.ndarray
    tau: float
    labels: tuple[str, ...] = ()

    @property
    def codes(self) -> list[str]:
        return [c for c, on in zip(self.labels, self.decisions) if on]


def param_shapes(config: TrainConfig, vocab_size: int, n_labels: int) -> dict[str, tuple]:
    shapes = {"emb": (vocab_size, config.d)}
    shapes.update(encoders.encoder_shapes(config.variant, config.d, config.d_out, config.width))
    shapes["U"] = (n_labels, config.d_out)
    if config.variant == "recur":
        shapes["W"] = (config.d_out, config.d_out)
    shapes["Z"] = (n_labels, config.d_out)
    shapes["bz"] = (n_labels,)
    return shapes


def _init_arrays(shapes: dict[str, tuple], rng: np.random.Generator, scale: float) -> dict[str, np.ndarray]:
    arrays = {}
    for name, shape in shapes.items():
        if len(shape) == 1:
            arrays[name] = np.zeros(shape)
        else:
            fan_in = shape[0] if name != "emb" else 1
            lim = scale / math.sqrt(fan_in) if name != "emb" else scale
            arrays[name] = rng.uniform(-lim, lim, size=shape)
    return arrays


def init_params(config: TrainConfig, vocab_size: int, n_labels: int) -> ModelParams:
    """Fresh parameters drawn uniformly from a small symmetric range; biases zero."""
    if vocab_size < 1 or n_labels < 1:
        raise ConfigError(f"vocab_size ({vocab_size}) and n_labels ({n_labels}) must be positive")
    rng = np.random.default_rng(config.seed)
    shapes = param_shapes(config, vocab_size, n_labels)
    return ModelParams(config.variant, config.width, _init_arrays(shapes, rng, config.init_scale))


def build_vocab(docs: Sequence[Document]) -> dict[str, int]:
    words = sorted({t.text for d in docs for t in d.tokens})
    vocab = {UNK: 0}
    for w in words:
        if w != UNK:
            vocab[w] = len(vocab)
    return vocab


def new_model(corpus: Sequence[Document], config: TrainConfig,
              labels: Optional[Sequence[str]] = None) -> ModelParams:
    """Initialize a model with vocabulary and label space taken from ``corpus``."""
    vocab = build_vocab(corpus)
    labels = list(labels) if labels is not None else [c.code for c in label_space(corpus)]
    params = init_params(config, len(vocab), len(labels))
    params.vocab, params.labels = vocab, labels
    return params


def token_ids(params: ModelParams, doc: Document) -> np.ndarray:
    return np.array([params.vocab.get(t.text, 0) for t in doc.tokens], dtype=np.int64)


def gold_vector(params: ModelParams, doc: Document) -> np.ndarray:
    codes = doc.codes
    return np.array([1.0 if c in codes else 0.0 for c in params.labels])


def _softmax_rows(S):
    S = S - S.max(axis=1, keepdims=True)
    E = np.exp(S)
    return E / E.sum(axis=1, keepdims=True)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def forward_ids(params: ModelParams, ids: np.ndarray) -> dict:
    """Forward pass on token ids; returns every intermediate needed for backprop."""
    if len(ids) == 0:
        raise EvaluationError("cannot evaluate a document without tokens")
    a = params.arrays
    E = a["emb"][ids]
    T, enc_cache = encoders.encode(params.variant, a, E, params.width)
    if params.variant == "recur":
        G = np.tanh(T @ a["W"].T)
        S = a["U"] @ G.T
    else:
        G = None
        S = a["U"] @ T.T
    A = _softmax_rows(S)
    H = A @ T
    logits = np.sum(a["Z"] * H, axis=1) + a["bz"]
    return {"ids": ids, "E": E, "T": T, "enc": enc_cache, "G": G, "A": A, "H": H,
            "logits": logits, "p": _sigmoid(logits)}


def backward(params: ModelParams, cache: dict, dlogits: np.ndarray,
             dA_extra: Optional[np.ndarray] = None) -> dict[str, np.ndarray]:
    """Parameter gradients given ``dL/dlogits`` and an optional ``dL/dA`` term."""
    a = params.arrays
    T, A, H = cache["T"], cache["A"], cache["H"]
    grads = {"Z": dlogits[:, None] * H, "bz": dlogits.copy()}
    dH = dlogits[:, None] * a["Z"]
    dA = dH @ T.T
    if dA_extra is not None:
        dA = dA + dA_extra
    dT = A.T @ dH
    dS = A * (dA - np.sum(dA * A, axis=1, keepdims=True))
    if params.variant == "recur":
        G = cache["G"]
        grads["U"] = dS @ G
        dGpre = (dS.T @ a["U"]) * (1.0 - G * G)
        grads["W"] = dGpre.T @ T
        dT += dGpre @ a["W"]
    else:
        grads["U"] = dS @ T
        dT += dS.T @ a["U"]
    dE, enc_grads = encoders.encode_backward(params.variant, a, dT, cache["enc"], params.width)
    grads.update(enc_grads)
    demb = np.zeros_like(a["emb"])
    np.add.at(demb, cache["ids"], dE)
    grads["emb"] = demb
    return grads


def forward(params: ModelParams, doc: Document, tau: float = 0.5):
    """Attention, predictions and cached intermediates for one document."""
    cache = forward_ids(params, token_ids(params, doc))
    labels = tuple(params.labels)
    attn = AttentionMatrix(cache["A"], labels)
    return attn, PredictionSet(cache["p"], cache["p"] > tau, tau, labels), cache


def predict_codes(params: ModelParams, doc: Document, tau: float = 0.5) -> PredictionSet:
    return forward(params, doc, tau)[1]


def doc_objective(params: ModelParams, ids: np.ndarray, y: np.ndarray, mask: Optional[np.ndarray] = None,
                  lam: float = 0.0, eps: float = DEFAULT_EPS, need_grad: bool = True):
    """Single-document loss ``coding + lam * rationale`` and its gradients.

    Returns:
        ``(total, coding, rationale, grads)``; ``grads`` is None when not requested.
    """
    cache = forward_ids(params, ids)
    p, A = cache["p"], cache["A"]
    lc = coding_loss(p, y, eps)
    use_mask = mask is not None and lam != 0.0 and np.any(mask)
    lr = rationale_loss(A, mask, eps) if use_mask else 0.0
    total = lc + lam * lr if use_mask else lc
    if not need_grad:
        return total, lc, lr, None
    dA = lam * rationale_attention_grad(A, np.asarray(mask, dtype=float), eps) if use_mask else None
    return total, lc, lr, backward(params, cache, coding_logit_grad(p, y, eps), dA)


def fit(params: ModelParams, corpus: Sequence[Document], config: TrainConfig,
        masks: Optional[Sequence[Optional[np.ndarray]]] = None, lam: float = 0.0):
    """Mini-batch gradient descent with momentum on the combined objective.

    Returns:
        ``(trained params, trace)`` where ``trace`` holds one dict per epoch
        with mean total, coding and rationale losses.
    """
    if not corpus:
        raise TrainingError("cannot train on an empty corpus")
    if masks is not None and len(masks) != len(corpus):
        raise ValidationError("one mask (or None) per document required")
    params = params.copy()
    rng = np.random.default_rng(config.seed)
    ids = [token_ids(params, d) for d in corpus]
    ys = [gold_vector(params, d) for d in corpus]
    velocity = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    trace = []
    n = len(corpus)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        sums = np.zeros(3)
        for b0 in range(0, n, config.batch_size):
            batch = order[b0:b0 + config.batch_size]
            acc = {k: np.zeros_like(v) for k, v in params.arrays.items()}
            for i in batch:
                m = masks[i] if masks is not None else None
                tot, lc, lr, g = doc_objective(params, ids[i], ys[i], m, lam, config.eps)
                sums += (tot, lc, lr)
                for k, v in g.items():
                    acc[k] += v
            scale = 1.0 / len(batch)
            for k, arr in params.arrays.items():
                velocity[k] = config.momentum * velocity[k] + acc[k] * scale
                arr -= config.learning_rate * velocity[k]
        means = sums / n
        if not np.all(np.isfinite(means)) or not all(np.all(np.isfinite(a)) for a in params.arrays.values()):
            raise TrainingError("non-finite loss or parameters", epoch=epoch)
        trace.append({"epoch": epoch, "loss": float(means[0]), "coding": float(means[1]),
                      "rationale": float(means[2])})
        logger.debug("epoch %d loss %.6f", epoch, means[0])
    return params, trace


def train(params: ModelParams, corpus: Sequence[Document], config: TrainConfig):
    """Train on the coding loss alone. Returns ``(params, per-epoch trace)``."""
    return fit(params, corpus, config)


# --------------------------------------------------------------------------
# rationale token selection


def selection_size(n_tokens: int, mode: str, k) -> int:
    if mode == "top_p_percent":
        if not 0 < k <= 100:
            raise ConfigError(f"top_p_percent needs k in (0, 100], got {k}")
        return math.ceil(Fraction(str(k)) * n_tokens / 100)
    if mode == "top_n":
        if k < 1 or int(k) != k:
            raise ConfigError(f"top_n needs an integer k >= 1, got {k}")
        return min(int(k), n_tokens)
    raise ConfigError(f"mode must be one of {SELECTION_MODES}")


def top_indices(scores: np.ndarray, size: int) -> list[int]:
    """Indices of the ``size`` largest scores; ties go to the lower index."""
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    return sorted(int(j) for j in order[:size])


def pooled_scores(weights: np.ndarray, predicted: Optional[np.ndarray], scope: str) -> np.ndarray:
    """Per-token ranking scores pooled over predicted-positive labels.

    Falls back to all labels when nothing is predicted positive.
    """
    rows = np.flatnonzero(predicted) if predicted is not None else np.array([], dtype=int)
    sub = weights[rows] if rows.size else weights
    if scope == "pooled_max":
        return sub.max(axis=0)
    if scope == "pooled_mean":
        return sub.mean(axis=0)
    raise ConfigError(f"unknown pooled scope {scope!r}")


def extract_rationale_tokens(attn, doc: Optional[Document], mode: str, k, scope: str = "pooled_max",
                             predicted: Optional[np.ndarray] = None):
    """Select rationale tokens by attention weight.

    Args:
        attn: :class:`AttentionMatrix` or ``(n_labels, n_tokens)`` array.
        doc: The document (used only for a length consistency check).
        mode: ``"top_p_percent"`` keeps ``ceil(n_tokens * k / 100)`` tokens,
            ``"top_n"`` keeps ``min(k, n_tokens)``.
        k: Percentage or count.
        scope: ``"per_label"`` returns one selection per label; the pooled
            scopes rank tokens by max/mean attention over predicted labels.
        predicted: Boolean decisions used by the pooled scopes.

    Returns:
        Sorted token indices, or a ``{label: indices}`` dict for ``per_label``.
    """
    weights = np.asarray(getattr(attn, "weights", attn))
    labels = tuple(getattr(attn, "labels", ())) or tuple(range(weights.shape[0]))
    n_tokens = weights.shape[1]
    if doc is not None and len(doc.tokens) != n_tokens:
        raise ValidationError("attention width does not match document length")
    size = selection_size(n_tokens, mode, k)
    if scope == "per_label":
        return {lab: top_indices(weights[i], size) for i, lab in enumerate(labels)}
    if scope not in SCOPES:
        raise ConfigError(f"scope must be one of {SCOPES}")
    return top_indices(pooled_scores(weights, predicted, scope), size)


# --------------------------------------------------------------------------
# gradient checking


def flat_view(arrays: dict[str, np.ndarray]):
    for name in sorted(arrays):
        arr = arrays[name]
        for idx in np.ndindex(arr.shape):
            yield name, idx


def gradient_check(params: ModelParams, doc, y, eps_fd: float = 1e-5, mask=None, lam: float = 0.0,
                   eps: float = DEFAULT_EPS, grad_fn: Optional[Callable] = None,
                   loss_fn: Optional[Callable] = None) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    The gap for each parameter is ``|g_a - g_fd| / max(1, |g_a|, |g_fd|)``.

    Args:
        params: Model to probe; left unchanged.
        doc: A :class:`Document` or an array of token ids.
        y: Gold indicator vector.
        eps_fd: Finite-difference step.
        mask: Optional rationale mask for the combined objective.
        lam: Weight of the rationale term.
        grad_fn: Override for the analytic gradient, ``grad_fn(params) -> dict``.
        loss_fn: Override for the scalar loss, ``loss_fn(params) -> float``.
    """
    ids = doc if isinstance(doc, np.ndarray) else token_ids(params, doc)
    y = np.asarray(y, dtype=float)
    if loss_fn is None:
        def loss_fn(p):
            return doc_objective(p, ids, y, mask, lam, eps, need_grad=False)[0]
    if grad_fn is None:
        def grad_fn(p):
            return doc_objective(p, ids, y, mask, lam, eps)[3]
    if params.n_parameters() > 5000:
        raise ConfigError("gradient_check is meant for tiny models")
    analytic = grad_fn(params)
    probe = params.copy()
    worst = 0.0
    for name, idx in flat_view(probe.arrays):
        arr = probe.arrays[name]
        orig = arr[idx]
        arr[idx] = orig + eps_fd
        up = loss_fn(probe)
        arr[idx] = orig - eps_fd
        down = loss_fn(probe)
        arr[idx] = orig
        g_fd = (up - down) / (2 * eps_fd)
        g_a = float(analytic[name][idx])
        worst = max(worst, abs(g_a - g_fd) / max(1.0, abs(g_a), abs(g_fd)))
    return worst


# --------------------------------------------------------------------------
# checkpoints


def _encode_array(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}


def _decode_array(rec: dict) -> np.ndarray:
    return np.array(rec["data"], dtype=float).reshape(rec["shape"])


def params_to_dict(params: ModelParams) -> dict:
    return {"variant": params.variant, "width": params.width,
            "vocab": sorted(params.vocab, key=params.vocab.get), "labels": list(params.labels),
            "arrays": {k: _encode_array(params.arrays[k]) for k in sorted(params.arrays)}}


def params_from_dict(d: dict) -> ModelParams:
    return ModelParams(d["variant"], int(d["width"]),
                       {k: _decode_array(v) for k, v in d["arrays"].items()},
                       {w: i for i, w in enumerate(d["vocab"])}, list(d["labels"]))


def save_checkpoint(params: ModelParams, path, config: Optional[TrainConfig] = None,
                    kind: str = CHECKPOINT_FORMAT, extra: Optional[dict] = None) -> None:
    """Write a self-describing JSON checkpoint that reloads bit-exactly."""
    body = {"format": kind, "config": asdict(config) if config is not None else None,
            "params": params_to_dict(params)}
    if extra:
        body.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path, kind: str = CHECKPOINT_FORMAT):
    """Inverse of :func:`save_checkpoint`; returns ``(params, config or None, body)``."""
    with open(path, encoding="utf-8") as fh:
        body = json.load(fh)
    if body.get("format") != kind:
        raise ValidationError(f"{path}: expected checkpoint format {kind!r}, got {body.get('format')!r}")
    cfg = TrainConfig.from_dict(body["config"]) if body.get("config") else None
    return params_from_dict(body["params"]), cfg, body
