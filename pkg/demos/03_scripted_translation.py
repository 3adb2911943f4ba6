#!/usr/bin/env python3
# Translate all ten fixture pairs with the checked-in script and the stub
# Java toolchain, then replay the recorded transcript and compare.
import filecmp
import json
import sys
import tempfile
from pathlib import Path

from repotrans.cli import main
from repotrans.pipeline import RunConfig

CORPUS = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "corpus"
out = Path(tempfile.mkdtemp(prefix="repotrans-demo-"))

code = main(["translate", "--config", str(CORPUS / "config.json"), "--all", "--out", str(out / "recorded")])
print(f"exit code {code}\n")

# Follow one pair through its iterations.
for path in sorted((out / "recorded" / "results").glob("*.json")):
    doc = json.loads(path.read_text())
    if not doc["pair_id"].endswith("totalCount"):
        continue
    print(f"{doc['pair_id']}: {doc['status']} after {doc['iterations_used']} iterations")
    print(f"  rag: use={doc['trace']['rag']['use_rag']} retained={doc['trace']['rag']['retained']}")
    print(f"  context tools: {[c['tool'] for c in doc['trace']['context']]}")
    for it in doc["iterations"]:
        print(f"  iteration {it['iteration']}: {it['category']} ({it['phase']})")
        for m in it["messages"][:3]:
            print(f"      {m}")
        if it["reflection"]:
            print(f"    analysis: {it['reflection']['analysis']}")
            print(f"    tool calls: {it['reflection']['tool_calls']}")
    print("  final code:")
    print("    " + doc["final_code"].replace("\n", "\n    "))

# Replay: same answers from the recording, no script, no network.
main(["translate", "--config", str(CORPUS / "config.json"), "--all", "--out", str(out / "replayed"),
      "--backend", "replay", "--replay", str(out / "recorded" / "transcript.ndjson")])
files = sorted(p.relative_to(out / "recorded").as_posix() for p in (out / "recorded").rglob("*") if p.is_file())
_, mismatch, errors = filecmp.cmpfiles(out / "recorded", out / "replayed", files, shallow=False)
print(f"\nreplay: {len(files)} artifacts compared, {len(mismatch) + len(errors)} differ")
print(f"outputs kept in {out}")
sys.exit(0 if not mismatch and not errors else 1)
