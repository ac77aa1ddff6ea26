"""Command-line entry point.

Settings resolve as flags > ``--config`` key=value file > defaults. Exit
status is 0 on success, 1 on invalid input or usage, 2 on runtime failure.
Logs go to standard error; data goes only to the files named by flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from explicd import align, coder, corpus, faithfulness, llm, metrics, reports, supervise
from explicd.errors import ConfigError, ExplicdError, ParseError, ValidationError

logger = logging.getLogger("explicd")

COMMANDS = ("ingest", "train", "predict", "extract", "faithfulness", "plausibility", "align", "iaa",
            "prompts", "parse-llm", "distill", "train-multiobj", "train-ner", "report")


@dataclass
class RunConfig:
    docs: Optional[str] = None
    annotations: Optional[str] = None
    reference: Optional[str] = None
    predicted: Optional[str] = None
    spans: Optional[str] = None
    prompts: Optional[str] = None
    model: Optional[str] = None
    out: Optional[str] = None
    dropped: Optional[str] = None
    mode: str = "top_p_percent"
    grid: Optional[str] = None
    k: Optional[float] = None
    scope: str = "pooled_max"
    granularity: Optional[str] = None
    position: Optional[str] = None
    pi_unit: str = "doc_code"
    metric: str = "micro_f1"
    lam: float = 1.0
    tau: float = 0.5
    seed: int = 1337
    epochs: int = 30
    learning_rate: float = 0.05
    batch_size: int = 8
    momentum: float = 0.9
    variant: str = "conv"
    d: int = 32
    d_out: int = 32
    width: int = 5
    at_n: str = "5,8"
    threshold: float = 1.7
    template: str = "zero_shot"
    fewshot_k: int = 5
    codes: Optional[str] = None
    endpoint: Optional[str] = None
    replay: Optional[str] = None
    cache: Optional[str] = None
    credential_env: Optional[str] = None
    temperature: float = 0.1
    top_p: float = 0.99
    max_tokens: int = 8000

    def train_config(self) -> coder.TrainConfig:
        return coder.TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                                 epochs=self.epochs, seed=self.seed, variant=self.variant, d=self.d,
                                 d_out=self.d_out, width=self.width, tau=self.tau,
                                 momentum=self.momentum, lam=self.lam)

    def at_n_list(self) -> list[int]:
        return [int(x) for x in str(self.at_n).split(",") if x.strip()]

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) in (None, "")]
        if missing:
            raise ConfigError("missing required setting(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _coerce(name: str, value: str):
    f = {f.name: f for f in fields(RunConfig)}[name]
    typ = str(f.type)
    try:
        if "int" in typ and "Optional" not in typ:
            return int(value)
        if "float" in typ:
            return float(value)
    except ValueError:
        raise ConfigError(f"setting {name}: {value!r} is not a number") from None
    return value


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected key=value", line=lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key == "lambda":
                key = "lam"
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
            out[key] = _coerce(key, value)
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    add = common.add_argument
    add("--config", help="key=value settings file")
    add("--seed", type=int)
    add("--docs", help="documents.jsonl")
    add("--annotations", help="annotations.jsonl (gold, candidate or distant spans)")
    add("--reference", help="reference annotations for iaa")
    add("--predicted", help="predicted rationale spans for plausibility")
    add("--spans", help="llm_spans.jsonl")
    add("--prompts", help="prompts.jsonl")
    add("--model", help="checkpoint path")
    add("--out", help="output path")
    add("--dropped", help="dropped.jsonl for align")
    add("--mode", choices=coder.SELECTION_MODES)
    add("--grid", help="start:stop:step or comma list")
    add("--k", type=float)
    add("--scope", choices=coder.SCOPES)
    add("--granularity", choices=metrics.GRANULARITIES)
    add("--position", choices=metrics.POSITION_MODES)
    add("--pi-unit", dest="pi_unit", choices=("doc_code", "code"))
    add("--metric")
    add("--lambda", dest="lam", type=float)
    add("--tau", type=float)
    add("--epochs", type=int)
    add("--learning-rate", dest="learning_rate", type=float)
    add("--batch-size", dest="batch_size", type=int)
    add("--variant", choices=coder.VARIANTS)
    add("--at-n", dest="at_n")
    add("--threshold", type=float)
    add("--template", choices=(llm.ZERO_SHOT, llm.FEW_SHOT))
    add("--fewshot-k", dest="fewshot_k", type=int)
    add("--codes", help="comma-separated code subset")
    add("--endpoint")
    add("--replay")
    add("--cache")
    add("--credential-env", dest="credential_env", help="name of the env var holding the API key")
    parser = _Parser(prog="explicd", description="Rationale extraction and evaluation toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=name)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


# --------------------------------------------------------------------------
# helpers


def _echo(cfg: RunConfig, command: str) -> dict:
    return {"command": command, **asdict(cfg)}


def _write_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")


def _read_jsonl(path):
    return [rec for _, rec in corpus._read_jsonl(path)]


def _load_model(path):
    with open(path, encoding="utf-8") as fh:
        kind = json.load(fh).get("format")
    if kind == supervise.TAGGER_FORMAT:
        return supervise.load_tagger(path)[0]
    return coder.load_checkpoint(path)[0]


def _tokens_to_spans(doc, code, indices, weights=None):
    spans = []
    idx = sorted(indices)
    i = 0
    while i < len(idx):
        j = i
        while j + 1 < len(idx) and idx[j + 1] == idx[j] + 1:
            j += 1
        a, b = doc.tokens[idx[i]].start, doc.tokens[idx[j]].end
        score = float(np.mean(weights[idx[i]:idx[j] + 1])) if weights is not None else None
        spans.append(corpus.RationaleSpan(doc.id, code, a, b, doc.text[a:b], score))
        i = j + 1
    return spans


def _train_report(cfg, command, trace, params, docs):
    preds = [coder.predict_codes(params, d, cfg.tau) for d in docs]
    rep = metrics.report_from_predictions(preds, docs, params.labels, cfg.at_n_list())
    return {"trace": trace, "train_metrics": rep.to_dict()}


# --------------------------------------------------------------------------
# commands


def cmd_ingest(cfg):
    cfg.require("docs", "out")
    docs = corpus.load_documents(cfg.docs)
    if cfg.annotations:
        spans = corpus.load_annotations(cfg.annotations, docs, cfg.threshold)
        logger.info("validated %d annotation spans", len(spans))
    corpus.write_documents(docs, cfg.out)
    logger.info("wrote %d documents to %s", len(docs), cfg.out)


def cmd_train(cfg, command="train"):
    cfg.require("docs", "out")
    docs = corpus.load_documents(cfg.docs)
    tc = cfg.train_config()
    params = coder.new_model(docs, tc)
    if command == "train-multiobj":
        cfg.require("annotations")
        distant = corpus.load_annotations(cfg.annotations, docs, cfg.threshold)
        params, trace = supervise.multiobjective_train(params, docs, distant, tc)
    else:
        params, trace = coder.train(params, docs, tc)
    coder.save_checkpoint(params, cfg.out, tc)
    reports.write_report(_train_report(cfg, command, trace, params, docs), "json",
                         cfg.out + ".report.json", _echo(cfg, command))


def cmd_train_ner(cfg):
    cfg.require("docs", "annotations", "out")
    docs = corpus.load_documents(cfg.docs)
    distant = corpus.load_annotations(cfg.annotations, docs, cfg.threshold)
    codes = [c.strip() for c in cfg.codes.split(",")] if cfg.codes else None
    tc = cfg.train_config()
    params, trace = supervise.ner_train(docs, distant, tc, codes)
    supervise.save_tagger(params, cfg.out, tc)
    reports.write_report({"trace": trace}, "json", cfg.out + ".report.json", _echo(cfg, "train-ner"))


def cmd_predict(cfg):
    cfg.require("model", "docs", "out")
    params = _load_model(cfg.model)
    docs = corpus.load_documents(cfg.docs)
    recs = []
    for d in docs:
        if isinstance(params, supervise.TaggerParams):
            _, codes = supervise.ner_predict(params, d)
            recs.append({"doc_id": d.id, "codes": sorted(codes)})
        else:
            p = coder.predict_codes(params, d, cfg.tau)
            recs.append({"doc_id": d.id, "codes": p.codes,
                         "probabilities": {c: float(v) for c, v in zip(params.labels, p.probabilities)}})
    _write_jsonl(recs, cfg.out)


def cmd_report(cfg):
    cfg.require("model", "docs", "out")
    params = _load_model(cfg.model)
    if isinstance(params, supervise.TaggerParams):
        raise ConfigError("report needs a coder checkpoint")
    docs = corpus.load_documents(cfg.docs)
    preds = [coder.predict_codes(params, d, cfg.tau) for d in docs]
    rep = metrics.report_from_predictions(preds, docs, params.labels, cfg.at_n_list())
    fmt = reports.format_for(cfg.out)
    row = rep.to_dict()
    if fmt == "csv":
        rows = [{"metric": k, "value": v} for k, v in row.items()]
        reports.write_report(rows, "csv", cfg.out, _echo(cfg, "report"), percent_keys=("value",))
    else:
        reports.write_report(row, "json", cfg.out, _echo(cfg, "report"))


def cmd_extract(cfg):
    cfg.require("model", "docs", "out")
    params = _load_model(cfg.model)
    docs = corpus.load_documents(cfg.docs)
    out = []
    if isinstance(params, supervise.TaggerParams):
        for d in docs:
            out.extend(supervise.ner_predict(params, d)[0])
    else:
        k = cfg.k if cfg.k is not None else (faithfulness.parse_grid(cfg.grid)[0] if cfg.grid else None)
        if k is None:
            raise ConfigError("extract needs --k (or a single-value --grid)")
        for d in docs:
            attn, pred, _ = coder.forward(params, d, cfg.tau)
            sel = coder.extract_rationale_tokens(attn, d, cfg.mode, k, cfg.scope, pred.decisions)
            for l in np.flatnonzero(pred.decisions):
                code = params.labels[l]
                idx = sel[code] if isinstance(sel, dict) else sel
                out.extend(_tokens_to_spans(d, code, idx, attn.weights[l]))
    corpus.write_annotations(out, cfg.out)


def cmd_faithfulness(cfg):
    cfg.require("model", "docs", "out")
    params = _load_model(cfg.model)
    docs = corpus.load_documents(cfg.docs)
    grid = faithfulness.parse_grid(cfg.grid) if cfg.grid else list(
        faithfulness.TOP_P_GRID if cfg.mode == "top_p_percent" else faithfulness.TOP_N_GRID)
    rows = faithfulness.faithfulness_sweep(params, docs, [(cfg.mode, k) for k in grid], cfg.metric,
                                           cfg.scope, cfg.tau, cfg.at_n_list())
    data = [r.to_row() for r in rows]
    cols = ["mode", "k", "measure", "metric", "P_full", "P_perturbed", "delta", "retention_pct"]
    if reports.format_for(cfg.out) == "csv":
        reports.write_report(data, "csv", cfg.out, _echo(cfg, "faithfulness"),
                             percent_keys=("P_full", "P_perturbed", "delta"), columns=cols)
    else:
        reports.write_report(data, "json", cfg.out, _echo(cfg, "faithfulness"))


def cmd_plausibility(cfg):
    cfg.require("docs", "annotations", "predicted", "out")
    docs = corpus.load_documents(cfg.docs)
    gold = corpus.load_annotations(cfg.annotations, docs, cfg.threshold)
    pred = corpus.load_annotations(cfg.predicted, docs, cfg.threshold)
    grans = [cfg.granularity] if cfg.granularity else list(metrics.GRANULARITIES)
    poss = [cfg.position] if cfg.position else list(metrics.POSITION_MODES)
    results = {}
    for g in grans:
        for p in poss:
            c = metrics.match_counts(pred, gold, g, p, docs, cfg.pi_unit)
            results[f"{g}/{p}"] = {"counts": c.to_dict(), "prf": metrics.prf_from_counts(c).to_dict()}
    if reports.format_for(cfg.out) == "csv":
        rows = [{"match": k, **v["counts"], **v["prf"]} for k, v in results.items()]
        reports.write_report(rows, "csv", cfg.out, _echo(cfg, "plausibility"),
                             percent_keys=("precision", "recall", "f1"))
    else:
        reports.write_report(results, "json", cfg.out, _echo(cfg, "plausibility"))


def _read_llm_spans(path):
    triples = []
    for lineno, rec in corpus._read_jsonl(path):
        if not all(isinstance(rec.get(k), str) for k in ("doc_id", "code", "text")):
            raise ParseError("llm span needs doc_id, code and text strings", line=lineno)
        triples.append((rec["doc_id"], rec["code"], rec["text"]))
    return triples


def cmd_align(cfg):
    cfg.require("docs", "spans", "out")
    docs = corpus.load_documents(cfg.docs)
    kept, dropped = align.align_generated_spans(_read_llm_spans(cfg.spans), docs, cfg.threshold)
    corpus.write_annotations(kept, cfg.out)
    if cfg.dropped:
        _write_jsonl([d.to_record() for d in dropped], cfg.dropped)
    logger.info("retained %d, dropped %d", len(kept), len(dropped))


def cmd_distill(cfg):
    cfg.require("docs", "spans", "out")
    docs = corpus.load_documents(cfg.docs)
    ds = llm.distant_from_spans(_read_llm_spans(cfg.spans), docs, cfg.threshold, cfg.template)
    corpus.write_annotations(ds.spans, cfg.out, extra={"provenance": ds.provenance})
    reports.write_report(ds.stats, "json", cfg.out + ".stats.json", _echo(cfg, "distill"))
    if cfg.dropped:
        _write_jsonl([d.to_record() for d in ds.dropped], cfg.dropped)


def cmd_iaa(cfg):
    cfg.require("docs", "annotations", "reference", "out")
    docs = corpus.load_documents(cfg.docs)
    a = corpus.load_annotations(cfg.annotations, docs, cfg.threshold)
    b = corpus.load_annotations(cfg.reference, docs, cfg.threshold)
    rep = {k: v.to_dict() for k, v in metrics.iaa_report(a, b, docs).items()}
    if reports.format_for(cfg.out) == "csv":
        rows = [{"level": k, **v} for k, v in rep.items()]
        reports.write_report(rows, "csv", cfg.out, _echo(cfg, "iaa"), percent_keys=("precision", "recall", "f1"))
    else:
        reports.write_report(rep, "json", cfg.out, _echo(cfg, "iaa"))


def cmd_prompts(cfg):
    cfg.require("docs", "out")
    docs = corpus.load_documents(cfg.docs)
    wanted = {c.strip() for c in cfg.codes.split(",")} if cfg.codes else None
    examples = {}
    if cfg.template == llm.FEW_SHOT:
        cfg.require("annotations")
        ann = corpus.load_annotations(cfg.annotations, docs, cfg.threshold)
        for code in sorted({s.code for s in ann}):
            examples[code] = llm.select_fewshot_examples(code, ann, cfg.fewshot_k, cfg.seed)
    recs = []
    for d in docs:
        for c in d.gold_codes:
            if wanted is not None and c.code not in wanted:
                continue
            ex = ()
            if cfg.template == llm.FEW_SHOT:
                sel = examples.get(c.code)
                if sel is None:
                    logger.warning("no few-shot examples for %s; skipping %s", c.code, d.id)
                    continue
                ex = tuple(sel.examples)
            spec = llm.PromptSpec(cfg.template, d.raw_text, c.code, c.description or c.code, ex, d.id)
            text = llm.build_prompt(spec)
            recs.append({"prompt_sha256": llm.prompt_id(text), "doc_id": d.id, "code": c.code,
                         "template": cfg.template, "prompt": text})
    _write_jsonl(recs, cfg.out)


def cmd_parse_llm(cfg):
    cfg.require("prompts", "out")
    recs = _read_jsonl(cfg.prompts)
    gen_cfg = llm.GenerationConfig(endpoint=cfg.endpoint, replay_path=cfg.replay, cache_path=cfg.cache,
                                   temperature=cfg.temperature, top_probability_mass=cfg.top_p,
                                   max_tokens=cfg.max_tokens, credential_env=cfg.credential_env)
    gens = llm.fetch_generations([r["prompt"] for r in recs], gen_cfg)
    out, failed = [], 0
    for r, g in zip(recs, gens):
        if not g.ok:
            failed += 1
            logger.error("prompt %s (%s/%s): %s", g.prompt_id[:12], r["doc_id"], r["code"], g.error)
            continue
        for s in llm.parse_numbered_spans(g.response):
            out.append({"doc_id": r["doc_id"], "code": r["code"], "text": s})
    _write_jsonl(out, cfg.out)
    if failed:
        logger.warning("%d of %d prompts failed", failed, len(recs))


HANDLERS = {
    "ingest": cmd_ingest, "train": cmd_train, "predict": cmd_predict, "extract": cmd_extract,
    "faithfulness": cmd_faithfulness, "plausibility": cmd_plausibility, "align": cmd_align,
    "iaa": cmd_iaa, "prompts": cmd_prompts, "parse-llm": cmd_parse_llm, "distill": cmd_distill,
    "train-multiobj": lambda cfg: cmd_train(cfg, "train-multiobj"), "train-ner": cmd_train_ner,
    "report": cmd_report,
}


def execute_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        HANDLERS[args.command](cfg)
    except (ParseError, ValidationError, ConfigError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return 1
    except (ExplicdError, OSError) as exc:
        logger.error("%s", exc)
        return 2
    return 0


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    return execute_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
