"""Tool-driven context gathering.

The agent is shown a sectioned prompt and answers with one JSON tool call
per turn (``{"id", "name", "args"}``).  Each call runs against the
repository indexes and its result is appended to the gathered context,
which is fed back into the next prompt.  The loop stops when the agent
answers with the reserved name ``done``, when the turn budget runs out, or
after two unparseable replies in a row.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from typing import Mapping

from .errors import JSONExtractionError, ToolCallParseError, TransportError
from .llm_gateway import ChatConfig, ChatMessage, chat, extract_json_object
from .repo_index import RepoIndex, imports_of, lookup_class, lookup_method, owning_class_of
from .templates import Templates

log = logging.getLogger(__name__)

DONE = "done"


@dataclass(frozen=True)
class ToolSpec:
    name: str
    params: tuple[str, ...]
    description: str


TOOL_REGISTRY: Mapping[str, ToolSpec] = {
    t.name: t for t in (
        ToolSpec("get_source_class_info", (),
                 "Fields and method signatures of the class that contains the source function."),
        ToolSpec("get_target_class_info", (),
                 "Fields and method signatures of the class that contains the target function."),
        ToolSpec("find_target_imports", (),
                 "Classes imported by the file that contains the target function."),
        ToolSpec("find_target_class_info", ("class_name",),
                 "Fields and method signatures of every target-repository class matching class_name."),
        ToolSpec("find_target_method_body", ("class_name", "method_name"),
                 "Signature and body of every method named method_name in the target class class_name."),
    )
}
BOOTSTRAP_TOOLS = ("get_source_class_info", "get_target_class_info", "find_target_imports")


@dataclass(frozen=True)
class ToolCall:
    id: str
    name: str
    args: Mapping[str, str] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, str]:
        return self.name, json.dumps(dict(self.args), sort_keys=True)

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "args": dict(self.args)}


@dataclass(frozen=True)
class ToolResult:
    call: ToolCall
    payload: str
    ok: bool = True
    note: str = ""

    def __post_init__(self):
        if not self.ok and not self.note:
            raise ValueError("a failed tool result needs a note")


@dataclass
class GatheredContext:
    entries: list[ToolResult] = field(default_factory=list)
    suppressed: int = 0
    diagnostics: list[str] = field(default_factory=list)

    @property
    def call_count(self) -> int:
        return len(self.entries)

    def has_successful(self, call: ToolCall) -> bool:
        return any(e.ok and e.call.key == call.key for e in self.entries)

    def append(self, result: ToolResult):
        if result.ok and self.has_successful(result.call):
            raise ValueError(f"duplicate successful call {result.call.key}")
        self.entries.append(result)


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False)


def _class_payload(cls) -> dict:
    return {
        "class": cls.qualified_name,
        "fields": [f.render() for f in cls.fields],
        "method_signatures": list(cls.method_signatures),
    }


def _auto_call(name, **args) -> ToolCall:
    return ToolCall("auto", name, args)


# ---------------------------------------------------------------- tools


def tool_get_source_class_info(source_index: RepoIndex, source_fn, call=None) -> ToolResult:
    call = call or _auto_call("get_source_class_info")
    cls = owning_class_of(source_index, source_fn)
    if cls is None:
        return ToolResult(call, _dump({"error": "owning class not indexed"}), False, "owning class not indexed")
    return ToolResult(call, _dump(_class_payload(cls)))


def tool_get_target_class_info(target_index: RepoIndex, owner: str, call=None) -> ToolResult:
    call = call or _auto_call("get_target_class_info")
    match = [c for c in lookup_class(target_index, owner) if c.qualified_name == owner]
    if not match:
        return ToolResult(call, _dump({"error": "owning class not indexed"}), False, "owning class not indexed")
    return ToolResult(call, _dump(_class_payload(match[0])))


def tool_find_target_imports(target_index: RepoIndex, file_path: str, call=None) -> ToolResult:
    call = call or _auto_call("find_target_imports")
    if file_path not in target_index.imports:
        return ToolResult(call, _dump({"error": "file not indexed"}), False, f"file {file_path} not indexed")
    imports = [i.imported_name for i in imports_of(target_index, file_path)]
    return ToolResult(call, _dump({"file": file_path, "imports": imports}))


def tool_find_target_class_info(target_index: RepoIndex, class_name: str, call=None) -> ToolResult:
    call = call or _auto_call("find_target_class_info", class_name=class_name)
    matches = [_class_payload(c) for c in lookup_class(target_index, class_name)]
    note = "" if matches else "no class matched"
    return ToolResult(call, _dump({"query": class_name, "matches": matches}), True, note)


def tool_find_target_method_body(target_index: RepoIndex, class_name: str, method_name: str,
                                 call=None, withheld=()) -> ToolResult:
    """All overloads of ``class_name.method_name``.

    Methods whose ref is in ``withheld`` (the focal method being
    translated) are left out so the ground truth never leaks into context.
    """
    call = call or _auto_call("find_target_method_body", class_name=class_name, method_name=method_name)
    found = lookup_method(target_index, class_name, method_name)
    kept = [m for m in found if m.ref not in withheld]
    matches = [{"class": m.owning_class, "signature": m.signature_text, "body": m.body_text} for m in kept]
    note = ""
    if len(kept) < len(found):
        note = "focal method body withheld"
    elif not kept:
        note = "no method matched"
    return ToolResult(call, _dump({"class": class_name, "method": method_name, "matches": matches}), True, note)


class ToolBox:
    """Binds the five tools to one translation pair and dispatches calls."""

    def __init__(self, source_index: RepoIndex, target_index: RepoIndex, pair):
        self.source_index = source_index
        self.target_index = target_index
        self.pair = pair
        self.executions = 0
        self._lock = threading.Lock()

    def execute(self, call: ToolCall) -> ToolResult:
        with self._lock:
            self.executions += 1
        try:
            return self._dispatch(call)
        except Exception as exc:  # tools never abort the loop
            log.exception("tool %s failed", call.name)
            return ToolResult(call, _dump({"error": str(exc)}), False, f"{type(exc).__name__}: {exc}")

    def _dispatch(self, call: ToolCall) -> ToolResult:
        pair, a = self.pair, call.args
        gt = pair.target_ground_truth
        if call.name == "get_source_class_info":
            return tool_get_source_class_info(self.source_index, pair.source_fn, call)
        if call.name == "get_target_class_info":
            return tool_get_target_class_info(self.target_index, gt.owning_class, call)
        if call.name == "find_target_imports":
            return tool_find_target_imports(self.target_index, gt.file_path, call)
        if call.name == "find_target_class_info":
            return tool_find_target_class_info(self.target_index, a["class_name"], call)
        if call.name == "find_target_method_body":
            return tool_find_target_method_body(self.target_index, a["class_name"], a["method_name"],
                                                call, withheld={gt.ref})
        return ToolResult(call, _dump({"error": "unknown tool"}), False, f"unknown tool {call.name!r}")


# ---------------------------------------------------------------- protocol


def parse_tool_call(llm_text: str, registry=TOOL_REGISTRY) -> ToolCall:
    """Parse ``{"id", "name", "args"}`` from an agent reply."""
    try:
        obj = json.loads(extract_json_object(llm_text))
    except JSONExtractionError as exc:
        raise ToolCallParseError(str(exc)) from exc
    missing = [k for k in ("id", "name", "args") if k not in obj]
    if missing:
        raise ToolCallParseError(f"tool call lacks {missing}")
    name, args = obj["name"], obj["args"]
    if not isinstance(name, str) or (name != DONE and name not in registry):
        raise ToolCallParseError(f"unknown tool {name!r}")
    if not isinstance(args, dict):
        raise ToolCallParseError("args must be an object")
    clean = {}
    for k, v in args.items():
        if isinstance(v, (dict, list)) or v is None:
            raise ToolCallParseError(f"argument {k!r} must be a string")
        clean[str(k)] = v if isinstance(v, str) else json.dumps(v)
    if name != DONE and set(clean) != set(registry[name].params):
        raise ToolCallParseError(f"{name} expects arguments {list(registry[name].params)}, got {sorted(clean)}")
    return ToolCall(str(obj["id"]), name, clean if name != DONE else {})


def consolidate_context(gathered: GatheredContext) -> str:
    """The gathered context as a JSON array of ``{tool, args, payload}``."""
    return json.dumps(
        [{"tool": e.call.name, "args": dict(e.call.args), "payload": json.loads(e.payload)}
         for e in gathered.entries],
        ensure_ascii=False,
    )


# ---------------------------------------------------------------- prompt

SECTION_ORDER = ("Goals", "Tools", "Guidelines", "Example", "Input", "Gathered Context",
                 "Output Format", "Last Command")


@dataclass(frozen=True)
class PromptSections:
    goals: str
    tools: str
    guidelines: str
    example: str
    input: str
    output_format: str
    gathered_context: str | None = None
    last_command: str | None = None

    def render(self) -> str:
        blocks = [
            ("Goals", self.goals), ("Tools", self.tools), ("Guidelines", self.guidelines),
            ("Example", self.example), ("Input", self.input),
            ("Gathered Context", self.gathered_context), ("Output Format", self.output_format),
            ("Last Command", self.last_command),
        ]
        return "\n\n".join(f"## {title}\n{body.strip()}" for title, body in blocks if body is not None) + "\n"


@dataclass(frozen=True)
class LastCommand:
    call: ToolCall
    outcome: str

    def render(self) -> str:
        return f"Call: {_dump(self.call.to_dict())}\nResult: {self.outcome}"


def render_tools(registry=TOOL_REGISTRY) -> str:
    lines = []
    for spec in registry.values():
        params = ", ".join(spec.params)
        lines.append(f"- {spec.name}({params}): {spec.description}")
    lines.append(f"- {DONE}(): Stop; the gathered context is sufficient.")
    return "\n".join(lines)


def pair_languages(pair):
    src = "C#" if pair.source_fn.file_path.endswith(".cs") else "Java"
    tgt = "C#" if pair.target_ground_truth.file_path.endswith(".cs") else "Java"
    return src, tgt


def build_context_prompt(pair, gathered: GatheredContext, templates: Templates,
                         last_command: LastCommand | None = None) -> str:
    src_lang, tgt_lang = pair_languages(pair)
    values = dict(source_language=src_lang, target_language=tgt_lang,
                  source_function=pair.source_fn.full_text, target_signature=pair.target_signature)
    gathered_text = last_text = None
    if gathered.call_count:
        gathered_text = consolidate_context(gathered)
        if last_command is None:
            e = gathered.entries[-1]
            last_command = LastCommand(e.call, e.payload if e.ok else f"failed: {e.note}")
        last_text = last_command.render()
    return PromptSections(
        goals=templates.render("context/goals.txt", **values),
        tools=render_tools(),
        guidelines=templates.render("context/guidelines.txt", **values),
        example=templates.render("context/example.txt", **values),
        input=templates.render("context/input.txt", **values),
        gathered_context=gathered_text,
        output_format=templates.render("context/output_format.txt", **values),
        last_command=last_text,
    ).render()


# ---------------------------------------------------------------- loop


def run_context_loop(llm, toolbox: ToolBox, pair, max_iter=10, templates: Templates | None = None,
                     cfg: ChatConfig | None = None, auto_bootstrap=False,
                     gathered: GatheredContext | None = None) -> GatheredContext:
    """Let the agent call tools until it answers ``done`` or the budget runs out."""
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    templates = templates or Templates()
    cfg = cfg or ChatConfig.for_role("context")
    gathered = gathered if gathered is not None else GatheredContext()
    last = None
    if auto_bootstrap:
        for name in BOOTSTRAP_TOOLS:
            call = ToolCall(f"boot-{name}", name, {})
            if not gathered.has_successful(call):
                gathered.append(toolbox.execute(call))

    for _ in range(max_iter):
        prompt = build_context_prompt(pair, gathered, templates, last)
        try:
            call = _ask_for_call(llm, prompt, templates, cfg)
        except TransportError as exc:
            gathered.diagnostics.append(f"context loop aborted: {exc}")
            break
        except ToolCallParseError as exc:
            gathered.diagnostics.append(f"context loop aborted after two unparseable replies: {exc}")
            break
        if call.name == DONE:
            break
        if gathered.has_successful(call):
            gathered.suppressed += 1
            last = LastCommand(call, "duplicate call suppressed; its result is already in Gathered Context")
            continue
        result = toolbox.execute(call)
        gathered.append(result)
        last = LastCommand(call, result.payload if result.ok else f"failed: {result.note}")
    return gathered


def _ask_for_call(llm, prompt, templates, cfg) -> ToolCall:
    text = chat(llm, [ChatMessage("user", prompt)], cfg)
    try:
        return parse_tool_call(text)
    except ToolCallParseError as first:
        log.info("unparseable tool call (%s); re-prompting once", first)
    retry = prompt + "\n" + templates.render("format_reminder.txt")
    return parse_tool_call(chat(llm, [ChatMessage("user", retry)], cfg))
