"""Selective, multi-route retrieval of already translated examples.

The agent first decides whether the function needs examples at all.  If it
does, translation pairs are retrieved by source-body similarity and target
methods by name similarity; the merged candidates are then judged one at a
time and only the useful ones are kept.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field

from .errors import JSONExtractionError
from .llm_gateway import ChatConfig, ChatMessage, chat, extract_json_object
from .repo_index import RepoIndex, resolve_method_ref
from .retrieval import (NameStore, PairStore, RetrievalConfig, RetrievalHit, merge_routes,
                        retrieve_names, retrieve_pairs)
from .context_agent import pair_languages
from .templates import Templates

log = logging.getLogger(__name__)

SIMPLICITY_THRESHOLD = 10
PARSE_FALLBACK = "parse-fallback"


@dataclass(frozen=True)
class RagDecision:
    use_rag: bool
    rationale: str


@dataclass(frozen=True)
class RetainedItem:
    hit: RetrievalHit
    source_body: str
    target_body: str


@dataclass
class RagContext:
    retained: list[RetainedItem] = field(default_factory=list)
    skipped: bool = False
    decision: RagDecision | None = None
    candidates: int = 0
    queries: int = 0
    diagnostics: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.skipped and self.retained:
            raise ValueError("a skipped RAG context cannot retain hits")


class RetrievalStores:
    """The two stores plus what is needed to show candidate bodies.

    ``queries`` counts store lookups so ablations can be checked.
    """

    def __init__(self, pair_store: PairStore, name_store: NameStore, target_index: RepoIndex,
                 cfg: RetrievalConfig | None = None, embedder=None):
        self.pair_store = pair_store
        self.name_store = name_store
        self.target_index = target_index
        self.cfg = cfg or pair_store.config
        self.embedder = embedder
        self.queries = 0
        self._lock = threading.Lock()
        self._pairs = {e.pair_id: e for e in pair_store.entries}

    def _count(self):
        with self._lock:
            self.queries += 1

    def pairs(self, source_body, exclude=(), cfg=None):
        self._count()
        return retrieve_pairs(self.pair_store, source_body, cfg or self.cfg, exclude, self.embedder)

    def names(self, name, exclude=(), cfg=None):
        self._count()
        return retrieve_names(self.name_store, name, cfg or self.cfg, exclude)

    def bodies(self, hit: RetrievalHit) -> tuple[str, str]:
        """(source body, target body) shown to the filter for a candidate."""
        entry = self._pairs.get(hit.id)
        if entry is not None:
            return entry.source_body, entry.target_body
        method, _ = resolve_method_ref(self.target_index, hit.ref)
        return "", method.full_text if method else ""


# ---------------------------------------------------------------- decision

_IDENT = re.compile(r"\b([A-Za-z_]\w*)\s*(\()?")


def project_references(source_fn, source_index: RepoIndex) -> set[str]:
    """Project-local classes and methods the function body mentions.

    The owning class and the function itself do not count.
    """
    owner_simple = source_fn.owning_class.rsplit(".", 1)[-1]
    class_names = {c.simple_name for c in source_index.all_classes()} - {owner_simple}
    method_names = {m.name for m in source_index.all_methods()} - {source_fn.name}
    found = set()
    for m in _IDENT.finditer(source_fn.body_text):
        word, call = m.group(1), m.group(2)
        if word in class_names or (call and word in method_names):
            found.add(word)
    return found


def heuristic_decision(source_fn, source_index: RepoIndex | None,
                       threshold=SIMPLICITY_THRESHOLD) -> RagDecision:
    refs = sorted(project_references(source_fn, source_index)) if source_index else []
    lines = len(source_fn.body_text.splitlines())
    if refs:
        return RagDecision(True, f"heuristic: references project symbols {', '.join(refs)}")
    if lines > threshold:
        return RagDecision(True, f"heuristic: body has {lines} lines (> {threshold})")
    return RagDecision(False, f"heuristic: standalone, {lines} lines")


def _ask_json(llm, prompt, templates, cfg):
    """One chat call plus one format re-prompt; returns the parsed object or None."""
    text = chat(llm, [ChatMessage("user", prompt)], cfg)
    for attempt in (0, 1):
        try:
            obj = json.loads(extract_json_object(text))
            if isinstance(obj, dict):
                return obj
        except JSONExtractionError:
            pass
        if attempt == 0:
            text = chat(llm, [ChatMessage("user", prompt + "\n" + templates.render("format_reminder.txt"))], cfg)
    return None


def needs_rag(llm, source_fn, source_index: RepoIndex | None = None, *, templates=None,
              cfg: ChatConfig | None = None, threshold=SIMPLICITY_THRESHOLD,
              source_language="C#") -> RagDecision:
    """Selective retrieval: should this function get translated examples?"""
    if llm.fallback:
        return heuristic_decision(source_fn, source_index, threshold)
    templates = templates or Templates()
    cfg = cfg or ChatConfig.for_role("rag")
    prompt = templates.render("rag/decision.txt", source_language=source_language,
                              source_function=source_fn.full_text)
    obj = _ask_json(llm, prompt, templates, cfg)
    if obj is None or not isinstance(obj.get("use_rag"), bool):
        return RagDecision(True, PARSE_FALLBACK)
    rationale = str(obj.get("rationale") or "").strip() or "no rationale given"
    return RagDecision(obj["use_rag"], rationale)


# ---------------------------------------------------------------- filtering


def _render_candidate(item_src, item_tgt):
    parts = []
    if item_src:
        parts.append(f"Source:\n{item_src}")
    parts.append(f"Target:\n{item_tgt}" if item_src else item_tgt)
    return "\n".join(parts)


def is_exact_name_hit(hit: RetrievalHit, name: str) -> bool:
    """A name-route hit whose method name equals ``name``.

    Score alone does not tell: the best BM25 hit is normalized to 1.0 too.
    """
    simple = hit.ref.split("(", 1)[0].rsplit(".", 1)[-1]
    return hit.route == "name" and hit.score == 1.0 and simple == name


def filter_results(llm, pair, candidates, stores: RetrievalStores, *, templates=None,
                   cfg: ChatConfig | None = None) -> RagContext:
    """Judge each candidate separately; exact name matches skip the judge."""
    if not candidates:
        raise ValueError("filter_results needs at least one candidate")
    templates = templates or Templates()
    cfg = cfg or ChatConfig.for_role("rag")
    src_lang, tgt_lang = pair_languages(pair)
    ctx = RagContext(candidates=len(candidates))
    for hit in candidates:
        src_body, tgt_body = stores.bodies(hit)
        item = RetainedItem(hit, src_body, tgt_body)
        if is_exact_name_hit(hit, pair.target_ground_truth.name):
            ctx.retained.append(item)
            continue
        if llm.fallback:
            # without a judge keep everything retrieval produced
            ctx.retained.append(item)
            continue
        prompt = templates.render(
            "rag/filter.txt", source_language=src_lang, target_language=tgt_lang,
            source_function=pair.source_fn.full_text, target_signature=pair.target_signature,
            candidate_route=hit.route, candidate_score=f"{hit.score:.4f}",
            candidate=_render_candidate(src_body, tgt_body),
        )
        obj = _ask_json(llm, prompt, templates, cfg)
        if obj is None or not isinstance(obj.get("keep"), bool):
            msg = f"filter judgment for {hit.ref} unparseable; candidate discarded"
            log.warning(msg)
            ctx.diagnostics.append(msg)
            continue
        if obj["keep"]:
            ctx.retained.append(item)
    return ctx


def run_rag(llm, stores: RetrievalStores, pair, cfg: RetrievalConfig | None = None, *,
            source_index: RepoIndex | None = None, templates=None, task_id="",
            model="default") -> RagContext:
    """Decision, both retrieval routes, merge, filter."""
    templates = templates or Templates()
    chat_cfg = ChatConfig.for_role("rag", task_id=task_id, model=model)
    src_lang, _ = pair_languages(pair)
    decision = needs_rag(llm, pair.source_fn, source_index, templates=templates, cfg=chat_cfg,
                         source_language=src_lang)
    if not decision.use_rag:
        return RagContext(skipped=True, decision=decision)
    # The pair under translation and its ground truth are never their own examples.
    pair_hits = stores.pairs(pair.source_fn.full_text, exclude={pair.pair_id}, cfg=cfg)
    name_hits = stores.names(pair.target_ground_truth.name, exclude={pair.target_ground_truth.ref}, cfg=cfg)
    candidates = merge_routes(pair_hits, name_hits)
    if not candidates:
        return RagContext(decision=decision, queries=2, diagnostics=["retrieval returned no candidates"])
    ctx = filter_results(llm, pair, candidates, stores, templates=templates, cfg=chat_cfg)
    ctx.decision = decision
    ctx.queries = 2
    return ctx


def render_similar_functions(rag_ctx: RagContext | None) -> str:
    if rag_ctx is None or not rag_ctx.retained:
        return "(none)"
    blocks = []
    for n, item in enumerate(rag_ctx.retained, 1):
        head = f"### Example {n} ({item.hit.route}, {item.hit.ref})"
        body = _render_candidate(item.source_body, item.target_body)
        blocks.append(f"{head}\n{body}")
    return "\n\n".join(blocks)
