"""Train a coder on a synthetic keyword corpus, then score its attention rationales.

Run: python3 demos/synthetic_end_to_end.py
"""

from explicd import coder, faithfulness, metrics, supervise, synthetic
from explicd.corpus import RationaleSpan
from explicd.coder import TrainConfig

sc = synthetic.generate_corpus(n_docs=300, n_codes=6, seed=0)
train, test = sc.docs[:240], sc.docs[240:]
test_ids = {d.id for d in test}
gold_spans = [s for s in sc.spans if s.doc_id in test_ids]

cfg = TrainConfig(variant="conv", epochs=20, seed=1337)
model, trace = coder.train(coder.new_model(train, cfg), train, cfg)
print(f"loss {trace[0]['loss']:.3f} -> {trace[-1]['loss']:.3f}")

preds = [coder.predict_codes(model, d) for d in test]
rep = metrics.report_from_predictions(preds, test, model.labels)
print(f"held-out micro-F1 {rep.micro_f1:.3f}  macro-AUC {rep.macro_auc:.3f}")

# lower sufficiency and higher comprehensiveness read as more faithful
for r in faithfulness.faithfulness_sweep(model, test, [("top_p_percent", k) for k in (10, 30, 50)],
                                         scope="per_label"):
    print(f"{r.measure:17s} top {r.k:>3}%  delta {r.delta:+.3f}  retention {r.retention_pct:.1f}%")

# rationales: the top 2 tokens per predicted code, compared with the planted keywords
extracted = []
for d in test:
    attn, pred, _ = coder.forward(model, d)
    sel = coder.extract_rationale_tokens(attn, d, "top_n", 2, "per_label", pred.decisions)
    for l, code in enumerate(model.labels):
        if pred.decisions[l]:
            for j in sel[code]:
                t = d.tokens[j]
                extracted.append(RationaleSpan(d.id, code, t.start, t.end, t.text))
for mode, row in metrics.plausibility(extracted, gold_spans, test).items():
    print(f"plausibility {mode:28s} P {row['precision']:.3f} R {row['recall']:.3f} F1 {row['f1']:.3f}")

# the same corpus with keyword masks as distant supervision
sup_cfg = TrainConfig(variant="conv", epochs=20, seed=1337, lam=1.0)
sup, _ = supervise.multiobjective_train(coder.new_model(train, sup_cfg), train,
                                        [s for s in sc.spans if s.doc_id not in test_ids], sup_cfg)
print(f"attention mass on planted keywords: baseline {supervise.attention_mass(model, test, gold_spans):.3f}"
      f"  supervised {supervise.attention_mass(sup, test, gold_spans):.3f}")
