import json
import sys

import pytest

from conftest import FIXTURES
from repotrans import context_agent as ca
from repotrans.errors import ToolCallParseError
from repotrans.llm_gateway import OfflineBackend, ScriptedBackend
from repotrans.templates import Templates

sys.path.insert(0, str(FIXTURES / "golden"))
import make_golden  # noqa: E402

GOLDEN = json.loads((FIXTURES / "golden" / "tools.json").read_text(encoding="utf-8"))
PAIR = "org.toy.cells.CellHelper.recordCell"


def test_tools_match_hand_checked_golden(source_index, target_index):
    got = {name: r for name, r in make_golden.cases(source_index, target_index)}
    assert len(got) == len(GOLDEN) == 19
    for case in GOLDEN:
        r = got[case["case"]]
        assert (r.call.name, dict(r.call.args), r.ok, r.note) == \
            (case["tool"], case["args"], case["ok"], case["note"]), case["case"]
        assert json.loads(r.payload) == json.loads(case["payload"]), case["case"]


def test_golden_spot_checks():
    by = {c["case"]: json.loads(c["payload"]) for c in GOLDEN}
    assert len(by["class_info_ambiguous"]["matches"]) == 2
    assert by["class_info_absent"]["matches"] == []
    [kept] = by["method_body_focal_withheld"]["matches"]
    assert "int c" in kept["signature"]
    assert len(by["method_body_overloads"]["matches"]) == 2


def test_payloads_are_json_objects():
    for case in GOLDEN:
        assert isinstance(json.loads(case["payload"]), dict)


def test_toolbox_withholds_focal_body(pair_by_id, source_index, target_index):
    pair = pair_by_id["org.toy.cells.util.MathUtil.add(int,int,int)"]
    box = ca.ToolBox(source_index, target_index, pair)
    r = box.execute(ca.ToolCall("x", "find_target_method_body", {"class_name": "MathUtil", "method_name": "add"}))
    assert r.note == "focal method body withheld"
    assert pair.target_ground_truth.body_text not in r.payload
    assert box.executions == 1


def test_toolbox_errors_become_results(pair_by_id, source_index, target_index):
    box = ca.ToolBox(source_index, target_index, pair_by_id[PAIR])
    r = box.execute(ca.ToolCall("x", "find_target_class_info", {}))  # missing arg -> KeyError inside
    assert not r.ok and "KeyError" in r.note
    r = box.execute(ca.ToolCall("y", "launch_missiles", {}))
    assert not r.ok


@pytest.mark.parametrize("text, name, args", [
    ('{"id": "c1", "name": "get_target_class_info", "args": {}}', "get_target_class_info", {}),
    ('Thinking...\n{"id": 3, "name": "find_target_class_info", "args": {"class_name": "Range"}}',
     "find_target_class_info", {"class_name": "Range"}),
    ('```json\n{"id": "d", "name": "done", "args": {"why": "enough"}}\n```', "done", {}),
])
def test_parse_tool_call_ok(text, name, args):
    call = ca.parse_tool_call(text)
    assert (call.name, call.args) == (name, args)


@pytest.mark.parametrize("text", [
    "I will call a tool now.",
    '{"id": "c1", "name": "rm_rf", "args": {}}',
    '{"id": "c1", "args": {}}',
    '{"id": "c1", "name": "find_target_class_info", "args": {}}',
    '{"id": "c1", "name": "find_target_class_info", "args": {"class_name": ["A"]}}',
    '{"id": "c1", "name": "get_target_class_info", "args": "none"}',
])
def test_parse_tool_call_rejects(text):
    with pytest.raises(ToolCallParseError):
        ca.parse_tool_call(text)


def test_prompt_sections_first_and_later_turns(pair_by_id, source_index, target_index):
    pair = pair_by_id[PAIR]
    t = Templates()
    first = ca.build_context_prompt(pair, ca.GatheredContext(), t)
    heads = [line[3:] for line in first.splitlines() if line.startswith("## ")]
    assert heads == ["Goals", "Tools", "Guidelines", "Example", "Input", "Output Format"]
    assert pair.source_fn.full_text in first and pair.target_signature in first
    assert pair.target_ground_truth.body_text not in first

    g = ca.GatheredContext()
    g.append(ca.ToolBox(source_index, target_index, pair).execute(ca.ToolCall("c1", "get_target_class_info", {})))
    later = ca.build_context_prompt(pair, g, t)
    heads = [line[3:] for line in later.splitlines() if line.startswith("## ")]
    assert heads == [h for h in ca.SECTION_ORDER]
    assert later.index("## Last Command") > later.index("## Output Format")
    for name in ca.TOOL_REGISTRY:
        assert name in later


def test_consolidate_round_trip(pair_by_id, source_index, target_index):
    box = ca.ToolBox(source_index, target_index, pair_by_id[PAIR])
    g = ca.GatheredContext()
    for call in (ca.ToolCall("a", "get_target_class_info", {}),
                 ca.ToolCall("b", "find_target_class_info", {"class_name": "Range"})):
        g.append(box.execute(call))
    doc = json.loads(ca.consolidate_context(g))
    assert [d["tool"] for d in doc] == ["get_target_class_info", "find_target_class_info"]
    assert doc[1]["args"] == {"class_name": "Range"}
    assert doc[0]["payload"] == json.loads(g.entries[0].payload)


def _backend(*replies):
    return ScriptedBackend([{"agent_role": "context", "response": r} for r in replies])


def _call(n, name, **args):
    return json.dumps({"id": f"c{n}", "name": name, "args": args})


def _box(pair_by_id, source_index, target_index, pid=PAIR):
    return ca.ToolBox(source_index, target_index, pair_by_id[pid])


def test_loop_three_tools_then_done(pair_by_id, source_index, target_index):
    llm = _backend(_call(1, "get_source_class_info"), _call(2, "get_target_class_info"),
                   _call(3, "find_target_imports"), _call(4, "done"))
    g = ca.run_context_loop(llm, _box(pair_by_id, source_index, target_index), pair_by_id[PAIR])
    assert g.call_count == 3 and llm.transcript.count("context") == 4
    assert [e.call.name for e in g.entries] == list(ca.BOOTSTRAP_TOOLS)


def test_loop_bootstrap_then_done(pair_by_id, source_index, target_index):
    llm = _backend(_call(1, "done"))
    box = _box(pair_by_id, source_index, target_index)
    g = ca.run_context_loop(llm, box, pair_by_id[PAIR], auto_bootstrap=True)
    assert g.call_count == 3 and box.executions == 3 and llm.transcript.count() == 1
    # the one prompt already carries the bootstrap results
    assert "## Gathered Context" in llm.transcript.records[0].messages[0]["content"]


def test_loop_suppresses_duplicates(pair_by_id, source_index, target_index):
    llm = _backend(_call(1, "get_target_class_info"), _call(2, "get_target_class_info"), _call(3, "done"))
    box = _box(pair_by_id, source_index, target_index)
    g = ca.run_context_loop(llm, box, pair_by_id[PAIR])
    assert g.call_count == 1 and g.suppressed == 1 and box.executions == 1
    third_prompt = llm.transcript.records[2].messages[0]["content"]
    assert "duplicate call suppressed" in third_prompt


def test_failed_call_may_be_retried(pair_by_id, source_index, target_index):
    pair = pair_by_id["org.toy.cells.Range.width"]  # owner is indexed; use an unknown class lookup
    llm = _backend(_call(1, "find_target_class_info", class_name="Nope"),
                   _call(2, "find_target_class_info", class_name="Nope"), _call(3, "done"))
    g = ca.run_context_loop(llm, _box(pair_by_id, source_index, target_index, pair.pair_id), pair)
    # "no class matched" is a successful (empty) lookup, so the repeat is suppressed
    assert g.call_count == 1 and g.suppressed == 1


def test_loop_respects_max_iter(pair_by_id, source_index, target_index):
    replies = [_call(i, "find_target_class_info", class_name=f"C{i}") for i in range(12)]
    llm = _backend(*replies)
    g = ca.run_context_loop(llm, _box(pair_by_id, source_index, target_index), pair_by_id[PAIR], max_iter=10)
    assert g.call_count == 10 and llm.transcript.count() == 10
    with pytest.raises(ValueError):
        ca.run_context_loop(llm, _box(pair_by_id, source_index, target_index), pair_by_id[PAIR], max_iter=0)


def test_loop_reprompts_once_then_aborts(pair_by_id, source_index, target_index):
    llm = _backend("let me think", _call(1, "get_target_class_info"), _call(2, "done"))
    g = ca.run_context_loop(llm, _box(pair_by_id, source_index, target_index), pair_by_id[PAIR])
    assert g.call_count == 1 and llm.transcript.count() == 3
    first, retry = (r.messages[0]["content"] for r in llm.transcript.records[:2])
    assert retry == first + "\n" + Templates().render("format_reminder.txt")

    llm = _backend("nope", "still nope", _call(1, "get_target_class_info"))
    g = ca.run_context_loop(llm, _box(pair_by_id, source_index, target_index), pair_by_id[PAIR])
    assert g.call_count == 0 and "unparseable" in g.diagnostics[0]


def test_loop_transport_error_aborts(pair_by_id, source_index, target_index):
    g = ca.run_context_loop(OfflineBackend(), _box(pair_by_id, source_index, target_index), pair_by_id[PAIR])
    assert g.call_count == 0 and "aborted" in g.diagnostics[0]
    llm = _backend(_call(1, "get_target_class_info"))  # then the script runs dry
    g = ca.run_context_loop(llm, _box(pair_by_id, source_index, target_index), pair_by_id[PAIR])
    assert g.call_count == 1 and g.diagnostics


def test_templates_override_and_literal_braces(tmp_path):
    (tmp_path / "context").mkdir()
    (tmp_path / "context" / "goals.txt").write_text('Translate {source_language}. Keep {"json": 1} and {unknown}.')
    t = Templates(tmp_path)
    assert t.render("context/goals.txt", source_language="C#") == 'Translate C#. Keep {"json": 1} and {unknown}.'
    assert t.render("context/input.txt", source_function="f", target_signature="s",
                    source_language="C#", target_language="Java")  # falls back to the packaged asset
    with pytest.raises(Exception, match="missing template"):
        Templates().render("nope.txt")
