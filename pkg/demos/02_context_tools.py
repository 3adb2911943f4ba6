#!/usr/bin/env python3
# The context agent's five tools and the prompt it sees on each turn.
import json
from pathlib import Path

from repotrans import context_agent as ca
from repotrans.llm_gateway import ScriptedBackend
from repotrans.repo_index import build_index, extract_pairs
from repotrans.templates import Templates

CORPUS = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "corpus"

source = build_index(CORPUS / "source_cs", "csharp")
target = build_index(CORPUS / "target_java", "java")
pairs = {p.pair_id: p for p in extract_pairs(source, target, CORPUS / "mapping.tsv")}
pair = pairs["org.toy.cells.util.MathUtil.add(int,int,int)"]
box = ca.ToolBox(source, target, pair)

print("Tools offered to the agent:")
print(ca.render_tools())

for call in (
    ca.ToolCall("t1", "get_source_class_info", {}),
    ca.ToolCall("t2", "get_target_class_info", {}),
    ca.ToolCall("t3", "find_target_imports", {}),
    ca.ToolCall("t4", "find_target_class_info", {"class_name": "Range"}),
    # the overload being translated is withheld, its sibling is shown
    ca.ToolCall("t5", "find_target_method_body", {"class_name": "MathUtil", "method_name": "add"}),
):
    r = box.execute(call)
    print(f"\n{call.name}({call.args}) ok={r.ok} {r.note}")
    print(json.dumps(json.loads(r.payload), indent=2))

# A scripted conversation: the agent repeats itself once, then stops.
llm = ScriptedBackend([
    {"agent_role": "context", "response": '{"id": "c1", "name": "get_target_class_info", "args": {}}'},
    {"agent_role": "context", "response": '{"id": "c2", "name": "get_target_class_info", "args": {}}'},
    {"agent_role": "context", "response": 'Enough. {"id": "c3", "name": "done", "args": {}}'},
])
gathered = ca.run_context_loop(llm, ca.ToolBox(source, target, pair), pair)
print(f"\ngathered {gathered.call_count} results, {gathered.suppressed} duplicate suppressed, "
      f"{llm.transcript.count()} chat calls")

print("\nThird prompt of that conversation:\n")
print(llm.transcript.records[2].messages[0]["content"])
