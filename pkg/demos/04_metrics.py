#!/usr/bin/env python3
# Compile and pass rates: the published per-project aggregation, then the
# hand-labelled result fixture with the exact-match leak check.
import json
from pathlib import Path

from repotrans.evalkit import exact_match_rate, format_table, normalize_for_match, summarize

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

# C#->Java counts per project (n, compiled, passed).
table = {
    "lucene": (113, 56, 41),
    "poi": (229, 164, 134),
    "jgit": (134, 57, 48),
    "itext": (67, 41, 41),
    "quartz": (42, 31, 24),
    "rocketmq-clients": (42, 14, 11),
}
groups = {
    name: [{"status": "passed"}] * p + [{"status": "compiled_only"}] * (c - p) + [{"status": "failed"}] * (n - c)
    for name, (n, c, p) in table.items()
}
print(format_table(summarize(groups)))

docs = [json.loads(p.read_text()) for p in sorted((FIXTURES / "eval_results").glob("*.json"))]
by_project = {}
for d in docs:
    by_project.setdefault(d["project"], []).append(d)
print()
print(format_table(summarize(by_project)))
rate = exact_match_rate((d["final_code"], d["ground_truth"]) for d in docs)
print(f"\nexact matches with ground truth: {rate:.0%}")

a = "public int width() {\n    // inclusive\n    return end - start + 1;\n}"
print("\nnormalized for matching:")
print(" ", normalize_for_match(a, "java"))
