"""Prompt construction, generation fetching (live or replayed), response parsing
and assembly of distant-supervision rationale datasets."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import urllib.error
import urllib.request
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from explicd.align import DEFAULT_THRESHOLD, DroppedSpan, align_generated_spans
from explicd.corpus import RationaleSpan
from explicd.errors import ConfigError, ValidationError

logger = logging.getLogger(__name__)

ZERO_SHOT, FEW_SHOT = "zero_shot", "few_shot"
KEEP_SPANS = "Keep the spans as what they are in"

_HEAD = ("Note Text: {text} + Code: {code}. Description: {description}. "
         "Could you please select the spans (rationales) which are related to the code {code}? "
         "The spans can be words, phrases, or sentences. "
         "Only list the exact spans extracted from the 'Note Text', without including their section names. ")
_EXAMPLES = "For example: {examples}. "
_TAIL = ("List each span with a number in front. For example: '1. Span1 2. Span2'. "
         "Only keep the spans. Do not include any additional responses. "
         "Exclude any punctuations at the end of the spans. "
         "Keep the spans as what they are in 'Note Text'. "
         "Keep the spans as what they are in 'Note Text'. "
         "Keep the spans as what they are in the 'Note Text'.")

TRAILING_PUNCT = ".,;:!?"


@dataclass(frozen=True)
class PromptSpec:
    template: str
    note: str
    code: str
    description: str
    examples: tuple[str, ...] = ()
    doc_id: str = ""

    def __post_init__(self):
        if self.template not in (ZERO_SHOT, FEW_SHOT):
            raise ConfigError(f"unknown template {self.template!r}")
        if self.template == FEW_SHOT and not self.examples:
            raise ConfigError("few_shot prompts need at least one example")


@dataclass
class GenerationConfig:
    endpoint: Optional[str] = None
    replay_path: Optional[str] = None
    cache_path: Optional[str] = None
    temperature: float = 0.1
    top_probability_mass: float = 0.99
    max_tokens: int = 8000
    timeout: float = 60.0
    concurrency: int = 4
    credential_env: Optional[str] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if not 0 < self.top_probability_mass <= 1:
            raise ConfigError("top_probability_mass must lie in (0, 1]")
        if self.max_tokens < 1 or self.concurrency < 1:
            raise ConfigError("max_tokens and concurrency must be positive")
        if self.endpoint is None and self.replay_path is None:
            raise ConfigError("either an endpoint or a replay file is required")


@dataclass
class Generation:
    prompt_id: str
    response: Optional[str]
    error: Optional[str] = None
    cached: bool = False

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class DistantDataset:
    spans: list[RationaleSpan]
    provenance: str
    dropped: list[DroppedSpan] = field(default_factory=list)
    stats: dict = field(default_factory=dict)


def quote_example(s: str) -> str:
    """Single-quote an example, switching to double quotes if it has an apostrophe."""
    if "'" in s and '"' not in s:
        return f'"{s}"'
    return f"'{s}'"


def build_prompt(spec: PromptSpec) -> str:
    for name in ("note", "code", "description"):
        if not getattr(spec, name):
            raise ConfigError(f"prompt field {name!r} must be non-empty")
    head = _HEAD.format(text=spec.note, code=spec.code, description=spec.description)
    if spec.template == FEW_SHOT:
        head += _EXAMPLES.format(examples=", ".join(quote_example(e) for e in spec.examples))
    return head + _TAIL


def prompt_id(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass
class FewShotSelection:
    examples: list[str]
    doc_ids: list[str]
    insufficient: bool


def select_fewshot_examples(code: str, annotations: Sequence[RationaleSpan], k: int = 5,
                            seed: int = 1337) -> FewShotSelection:
    """Sample ``k`` annotated documents for ``code`` and collect their span texts.

    Documents are ordered by first appearance in ``annotations``; texts keep
    annotation order and duplicates.
    """
    order: list[str] = []
    texts = defaultdict(list)
    for s in annotations:
        if s.code != code:
            continue
        if s.doc_id not in texts:
            order.append(s.doc_id)
        texts[s.doc_id].append(s.text)
    if not order:
        raise ValidationError(f"no annotated documents for code {code!r}")
    if k < 1:
        raise ConfigError("k must be >= 1")
    insufficient = len(order) < k
    if insufficient:
        logger.warning("code %s has only %d annotated documents (< %d)", code, len(order), k)
        chosen = list(order)
    else:
        rng = np.random.default_rng(seed)
        picked = set(rng.choice(len(order), size=k, replace=False).tolist())
        chosen = [d for i, d in enumerate(order) if i in picked]
    return FewShotSelection([t for d in chosen for t in texts[d]], chosen, insufficient)


def _item_pattern(n: int) -> re.Pattern:
    return re.compile(rf"(?:^|(?<=\s)){n}\.\s")


def parse_numbered_spans(response: str) -> list[str]:
    """Split a ``'1. a 2. b'`` style response into span strings.

    Item numbers must run 1, 2, 3, ...; a number that breaks the sequence is
    kept as item text. Each item is trimmed and loses one trailing
    ``.,;:!?`` character.
    """
    m = _item_pattern(1).search(response)
    if m is None:
        logger.warning("response has no numbered items")
        return []
    bounds = [(m.start(), m.end())]
    n = 2
    pos = m.end()
    while True:
        nxt = _item_pattern(n).search(response, pos)
        if nxt is None:
            break
        bounds.append((nxt.start(), nxt.end()))
        pos = nxt.end()
        n += 1
    items = []
    for i, (_, body_start) in enumerate(bounds):
        end = bounds[i + 1][0] if i + 1 < len(bounds) else len(response)
        text = response[body_start:end].strip()
        if text and text[-1] in TRAILING_PUNCT:
            text = text[:-1].rstrip()
        if text:
            items.append(text)
    return items


def format_numbered_spans(spans: Sequence[str]) -> str:
    return " ".join(f"{i}. {s}" for i, s in enumerate(spans, start=1))


# --------------------------------------------------------------------------
# generation


def _load_jsonl_map(path, key: str, value: str) -> dict[str, str]:
    out = {}
    p = Path(path)
    if not p.exists():
        return out
    with open(p, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec[key]] = rec[value]
    return out


def _post(prompt: str, cfg: GenerationConfig) -> str:
    body = json.dumps({"prompt": prompt, "temperature": cfg.temperature,
                       "top_probability_mass": cfg.top_probability_mass,
                       "max_tokens": cfg.max_tokens}).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if cfg.credential_env and os.environ.get(cfg.credential_env):
        headers["Authorization"] = f"Bearer {os.environ[cfg.credential_env]}"
    req = urllib.request.Request(cfg.endpoint, data=body, headers=headers, method="POST")
    with urllib.request.urlopen(req, timeout=cfg.timeout) as resp:
        payload = json.loads(resp.read().decode("utf-8"))
    if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
        raise ValueError("endpoint reply lacks a 'text' string")
    return payload["text"]


def fetch_generations(prompts: Sequence[PromptSpec | str], cfg: GenerationConfig) -> list[Generation]:
    """Obtain one response per prompt, from cache, replay file or endpoint.

    Failures are isolated per prompt: the returned record carries ``error``
    and the rest of the batch proceeds. Successful live responses are
    appended to ``cfg.cache_path`` when set.
    """
    texts = [p if isinstance(p, str) else build_prompt(p) for p in prompts]
    ids = [prompt_id(t) for t in texts]
    cache = _load_jsonl_map(cfg.cache_path, "prompt_sha256", "response") if cfg.cache_path else {}
    replay = _load_jsonl_map(cfg.replay_path, "prompt_sha256", "response") if cfg.replay_path else {}
    results: list[Optional[Generation]] = [None] * len(texts)
    todo = []
    for i, pid in enumerate(ids):
        if pid in cache:
            results[i] = Generation(pid, cache[pid], cached=True)
        elif pid in replay:
            results[i] = Generation(pid, replay[pid])
        elif cfg.endpoint is None:
            results[i] = Generation(pid, None, f"replay miss for prompt {pid}")
        else:
            todo.append(i)

    def call(i):
        try:
            return Generation(ids[i], _post(texts[i], cfg))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            logger.warning("generation failed for prompt %s: %s", ids[i][:12], exc)
            return Generation(ids[i], None, f"{type(exc).__name__}: {exc}")

    if todo:
        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            for i, gen in zip(todo, pool.map(call, todo)):
                results[i] = gen
        if cfg.cache_path:
            with open(cfg.cache_path, "a", encoding="utf-8") as fh:
                for i in todo:
                    if results[i].ok:
                        fh.write(json.dumps({"prompt_sha256": ids[i], "response": results[i].response}) + "\n")
    return results


def assemble_distant_supervision(responses: Iterable[tuple[str, str, str]], docs,
                                 threshold: float = DEFAULT_THRESHOLD,
                                 provenance: str = ZERO_SHOT) -> DistantDataset:
    """Parse ``(doc_id, code, response)`` triples, align spans and keep the good ones."""
    triples = []
    for doc_id, code, response in responses:
        triples.extend((doc_id, code, s) for s in parse_numbered_spans(response or ""))
    return distant_from_spans(triples, docs, threshold, provenance)


def distant_from_spans(triples: Iterable[tuple[str, str, str]], docs,
                       threshold: float = DEFAULT_THRESHOLD, provenance: str = ZERO_SHOT) -> DistantDataset:
    """Like :func:`assemble_distant_supervision` for already-parsed span texts."""
    triples = list(triples)
    kept, dropped = align_generated_spans(triples, docs, threshold)
    per_code = Counter(s.code for s in kept)
    stats = {"generated": len(triples), "retained": len(kept), "dropped": len(dropped),
             "drop_rate": len(dropped) / len(triples) if triples else 0.0,
             "spans_per_code": dict(sorted(per_code.items()))}
    return DistantDataset(kept, provenance, dropped, stats)
