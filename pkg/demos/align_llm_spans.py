"""Turn quoted model output into character-offset rationales, with the 1.7 retention cut.

Run: python3 demos/align_llm_spans.py
"""

from explicd import align, corpus, llm

doc = corpus.make_document("n1", "Pt with HTN, on Coumadin 2 mg weekly. Denies chest pain.",
                           [corpus.CodeLabel("I10", "Essential (primary) hypertension"),
                            corpus.CodeLabel("Z7901", "Long term (current) use of anticoagulants")])

prompt = llm.build_prompt(llm.PromptSpec(llm.ZERO_SHOT, doc.raw_text, "Z7901",
                                         "Long term (current) use of anticoagulants"))
print(prompt, end="\n\n")

# a canned response stands in for the endpoint
response = "1. on coumadin 2 mg weekly\n2. anticoagulation therapy"
for text in llm.parse_numbered_spans(response):
    r = align.best_candidate(corpus.preprocess_text(text), doc.text)
    where = f"[{r.candidate.start}:{r.candidate.end}] {r.candidate.text!r}" if r.candidate else "no match"
    print(f"{text!r:32s} score {r.score:.3f}  {'kept' if r.retained else 'dropped'}  {where}")

ds = llm.assemble_distant_supervision([("n1", "Z7901", response), ("n1", "I10", "1. HTN")], [doc])
print("\nstats", ds.stats)
for s in ds.spans:
    print(f"  {s.code:6s} {s.start:>3}-{s.end:<3} {s.text!r}")
