"""Generate a translation, run the focal tests, reflect on failures, repair.

One iteration is one candidate executed in a scratch copy of the target
repository.  After a failure the agent writes a reflection (root cause, fix
plan, optionally a few extra tool calls for more context) and produces a
corrected candidate.  The loop ends on an all-pass report or when the
iteration budget is spent.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

from .context_agent import (DONE, TOOL_REGISTRY, GatheredContext, ToolBox, consolidate_context,
                            pair_languages, render_tools)
from .errors import InfrastructureError, JSONExtractionError, ToolCallParseError
from .evalkit import normalize_for_match
from .exec_harness import ErrorCategory, ExecutionReport
from .llm_gateway import ChatConfig, ChatMessage, chat, extract_json_object
from .rag_agent import RagContext, render_similar_functions
from .templates import Templates

log = logging.getLogger(__name__)

MAX_REFINE_ITER = 5
REFLECTION_TOOL_BUDGET = 3
PARSE_FALLBACK = "parse-fallback"

PASSED, COMPILED_ONLY, FAILED = "passed", "compiled_only", "failed"
_COMPILED_FAILURES = (ErrorCategory.FUNCTIONAL, ErrorCategory.RUNTIME, ErrorCategory.NON_TERMINATING)

_FENCE_TAGS = {"java": {"java"}, "csharp": {"csharp", "cs", "c#"}}
_FENCE = re.compile(r"```[ \t]*([\w#+-]*)[^\n]*\n(.*?)```", re.S)


@dataclass(frozen=True)
class Reflection:
    analysis: str
    fix_plan: str
    extra_tool_calls: tuple = ()

    def to_dict(self) -> dict:
        return {"analysis": self.analysis, "fix_plan": self.fix_plan,
                "tool_calls": [c.to_dict() for c in self.extra_tool_calls]}


@dataclass(frozen=True)
class Candidate:
    code: str
    diagnostics: tuple[str, ...] = ()


@dataclass(frozen=True)
class IterationRecord:
    code: str
    report: ExecutionReport
    reflection: Reflection | None = None


@dataclass
class RefineState:
    iteration: int = 0
    history: list[IterationRecord] = field(default_factory=list)
    current_context: str = "[]"

    def push(self, record: IterationRecord):
        self.history.append(record)
        self.iteration = len(self.history)


@dataclass
class TranslationResult:
    pair_id: str
    final_code: str
    status: str
    iterations_used: int
    reports: list[IterationRecord]
    project: str = ""
    ground_truth: str = ""
    diagnostics: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    trace: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in (PASSED, COMPILED_ONLY, FAILED):
            raise ValueError(f"bad status {self.status!r}")
        if self.status == PASSED and not (self.reports and self.reports[-1].report.passed):
            raise ValueError("passed status needs a final all-pass report")

    def to_dict(self, log_cap=4096) -> dict:
        return {
            "pair_id": self.pair_id,
            "project": self.project,
            "status": self.status,
            "iterations_used": self.iterations_used,
            "iterations": [
                {
                    "iteration": n,
                    "code": rec.code,
                    **rec.report.to_dict(log_cap),
                    "reflection": rec.reflection.to_dict() if rec.reflection else None,
                }
                for n, rec in enumerate(self.reports)
            ],
            "final_code": self.final_code,
            "ground_truth": self.ground_truth,
            "diagnostics": list(self.diagnostics),
            "stats": dict(self.stats),
            "trace": dict(self.trace),
        }

    def to_json(self, log_cap=4096) -> str:
        return json.dumps(self.to_dict(log_cap), ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def status_of(report: ExecutionReport | None) -> str:
    if report is None:
        return FAILED
    if report.passed:
        return PASSED
    if report.phase == "test" and report.category in _COMPILED_FAILURES:
        return COMPILED_ONLY
    return FAILED


# ---------------------------------------------------------------- extraction


def extract_code_block(llm_text: str, target_language: str = "java") -> str:
    """First fence tagged with the target language, else the first fence, else the text."""
    fences = _FENCE.findall(llm_text)
    wanted = _FENCE_TAGS.get(target_language, {target_language})
    for tag, body in fences:
        if tag.lower() in wanted:
            return body.strip("\n").rstrip()
    if fences:
        return fences[0][1].strip("\n").rstrip()
    return llm_text.strip()


def _looks_like_code(text: str) -> bool:
    return bool(text) and ("{" in text or ";" in text)


def _fence_tag(target_language):
    return "csharp" if target_language == "csharp" else "java"


def _lang_tag(pair):
    return "csharp" if pair.target_ground_truth.file_path.endswith(".cs") else "java"


# ---------------------------------------------------------------- prompts


def system_prompt(pair, templates: Templates) -> str:
    src, tgt = pair_languages(pair)
    return templates.render("refine/system.txt", source_language=src, target_language=tgt)


def initial_prompt(pair, rag_ctx: RagContext | None, gathered_json: str, templates: Templates) -> str:
    return templates.render(
        "refine/initial.txt",
        source_function=pair.source_fn.full_text,
        target_signature=pair.target_signature,
        similar_functions=render_similar_functions(rag_ctx),
        repository_context=gathered_json if gathered_json not in ("", "[]") else "(none)",
        target_fence=_fence_tag(_lang_tag(pair)),
    )


def _report_fields(report: ExecutionReport) -> dict:
    loc = f"{report.location[0]}:{report.location[1]}" if report.location else "(unknown)"
    msgs = "\n".join(f"- {m}" for m in report.messages) or "(none)"
    return dict(category=report.category.value, location=loc, messages=msgs)


def correction_prompt(pair, prev_code, report, reflection: Reflection, context_json, rag_ctx,
                      templates: Templates) -> str:
    tail = templates.render(
        "refine/correction.txt", previous_code=prev_code, analysis=reflection.analysis,
        fix_plan=reflection.fix_plan or "(none)", target_fence=_fence_tag(_lang_tag(pair)),
        **_report_fields(report),
    )
    return initial_prompt(pair, rag_ctx, context_json, templates) + "\n" + tail


def _complete_code(llm, pair, user_prompt, templates, cfg) -> Candidate:
    lang = _lang_tag(pair)
    messages = [ChatMessage("system", system_prompt(pair, templates)), ChatMessage("user", user_prompt)]
    code = extract_code_block(chat(llm, messages, cfg), lang)
    if not _looks_like_code(code):
        reminder = templates.render("refine/code_reminder.txt", target_fence=_fence_tag(lang))
        messages = [messages[0], ChatMessage("user", user_prompt + "\n\n" + reminder)]
        code = extract_code_block(chat(llm, messages, cfg), lang)
        if not _looks_like_code(code):
            return Candidate("", ("no code in reply after a format reminder",))
    diags = ()
    want = normalize_for_match(pair.target_signature, lang)
    if not normalize_for_match(code, lang).startswith(want):
        diags = (f"candidate does not start with the target signature {pair.target_signature!r}",)
    return Candidate(code, diags)


def generate_initial(llm, pair, rag_ctx: RagContext | None, gathered_json: str, *,
                     templates=None, cfg: ChatConfig | None = None) -> Candidate:
    templates = templates or Templates()
    cfg = cfg or ChatConfig.for_role("refine")
    return _complete_code(llm, pair, initial_prompt(pair, rag_ctx, gathered_json, templates), templates, cfg)


def correct(llm, pair, prev_code, report, reflection, context_json, rag_ctx, *,
            templates=None, cfg: ChatConfig | None = None) -> Candidate:
    templates = templates or Templates()
    cfg = cfg or ChatConfig.for_role("refine")
    prompt = correction_prompt(pair, prev_code, report, reflection, context_json, rag_ctx, templates)
    return _complete_code(llm, pair, prompt, templates, cfg)


# ---------------------------------------------------------------- reflection


def _tool_calls_from(raw, diagnostics) -> list:
    from .context_agent import ToolCall

    calls = []
    for n, item in enumerate(raw if isinstance(raw, list) else []):
        if not isinstance(item, dict) or item.get("name") == DONE:
            continue
        name, args = item.get("name"), item.get("args", {})
        spec = TOOL_REGISTRY.get(name)
        if spec is None or not isinstance(args, dict) or set(args) != set(spec.params):
            diagnostics.append(f"reflection tool call {item!r} ignored")
            continue
        calls.append(ToolCall(str(item.get("id", f"r{n + 1}")), name, {k: str(v) for k, v in args.items()}))
    return calls


def reflect(llm, pair, code, report: ExecutionReport, *, toolbox: ToolBox | None = None,
            gathered: GatheredContext | None = None, templates=None, cfg: ChatConfig | None = None,
            tool_budget=REFLECTION_TOOL_BUDGET, diagnostics=None) -> Reflection:
    """Analyse a failed candidate; requested tool calls extend ``gathered``.

    Without a toolbox (context ablation) requested calls are recorded but
    not executed.
    """
    if report.passed:
        raise ValueError("reflect needs a failing report")
    templates = templates or Templates()
    cfg = cfg or ChatConfig.for_role("refine")
    diagnostics = diagnostics if diagnostics is not None else []
    context_json = consolidate_context(gathered) if gathered is not None else "[]"
    prompt = templates.render(
        "refine/reflection.txt", source_function=pair.source_fn.full_text,
        target_signature=pair.target_signature, code=code,
        repository_context=context_json if context_json != "[]" else "(none)",
        tools=render_tools(), tool_budget=tool_budget, target_fence=_fence_tag(_lang_tag(pair)),
        **_report_fields(report),
    )
    messages = [ChatMessage("system", system_prompt(pair, templates)), ChatMessage("user", prompt)]
    obj = None
    for attempt in (0, 1):
        text = chat(llm, messages, cfg)
        try:
            obj = json.loads(extract_json_object(text))
        except JSONExtractionError:
            obj = None
        if isinstance(obj, dict) and str(obj.get("analysis") or "").strip():
            break
        obj = None
        if attempt == 0:
            messages = [messages[0], ChatMessage("user", prompt + "\n" + templates.render("format_reminder.txt"))]
    if obj is None:
        diagnostics.append("reflection unparseable twice")
        return Reflection(PARSE_FALLBACK, "")
    calls = _tool_calls_from(obj.get("tool_calls"), diagnostics)
    if len(calls) > tool_budget:
        diagnostics.append(f"reflection requested {len(calls)} tool calls; only {tool_budget} run")
        calls = calls[:tool_budget]
    if toolbox is not None and gathered is not None:
        for call in calls:
            if gathered.has_successful(call):
                gathered.suppressed += 1
                continue
            gathered.append(toolbox.execute(call))
    return Reflection(str(obj["analysis"]).strip(), str(obj.get("fix_plan") or "").strip(), tuple(calls))


# ---------------------------------------------------------------- loop


def run_refine_loop(llm, harness, pair, rag_ctx: RagContext | None = None,
                    gathered: GatheredContext | None = None, max_refine_iter=MAX_REFINE_ITER, *,
                    toolbox: ToolBox | None = None, tool_budget=REFLECTION_TOOL_BUDGET,
                    templates=None, task_id="", model="default", temperature=None) -> TranslationResult:
    """Generate, execute, reflect and correct until the tests pass or the budget is spent."""
    if max_refine_iter < 1:
        raise ValueError("max_refine_iter must be at least 1")
    templates = templates or Templates()
    cfg = ChatConfig.for_role("refine", task_id=task_id, model=model, temperature=temperature)
    gathered = gathered if gathered is not None else GatheredContext()
    state = RefineState(current_context=consolidate_context(gathered))
    diagnostics: list[str] = []
    target = pair.target_ground_truth

    cand = generate_initial(llm, pair, rag_ctx, state.current_context, templates=templates, cfg=cfg)
    while True:
        diagnostics.extend(cand.diagnostics)
        if not cand.code:
            diagnostics.append(f"iteration {state.iteration}: no candidate code")
            break
        try:
            report = harness.evaluate(target, cand.code, pair.test_selector)
        except InfrastructureError as exc:
            diagnostics.append(f"infrastructure: {exc}")
            break
        last_round = state.iteration + 1 >= max_refine_iter
        hung_twice = (report.category is ErrorCategory.NON_TERMINATING and state.history
                      and state.history[-1].report.category is ErrorCategory.NON_TERMINATING)
        if report.passed or last_round or hung_twice:
            if hung_twice and not report.passed:
                diagnostics.append("stopped after two consecutive non-terminating candidates")
            state.push(IterationRecord(cand.code, report))
            break
        reflection = reflect(llm, pair, cand.code, report, toolbox=toolbox, gathered=gathered,
                             templates=templates, cfg=cfg, tool_budget=tool_budget,
                             diagnostics=diagnostics)
        state.push(IterationRecord(cand.code, report, reflection))
        state.current_context = consolidate_context(gathered)
        cand = correct(llm, pair, cand.code, report, reflection, state.current_context, rag_ctx,
                       templates=templates, cfg=cfg)

    final = state.history[-1] if state.history else None
    return TranslationResult(
        pair_id=pair.pair_id,
        final_code=final.code if final else "",
        status=status_of(final.report if final else None),
        iterations_used=len(state.history),
        reports=state.history,
        ground_truth=target.full_text,
        diagnostics=diagnostics,
    )
