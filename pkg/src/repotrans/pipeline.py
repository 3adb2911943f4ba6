"""Run configuration and the per-pair RAG -> Context -> Refine pipeline."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .context_agent import GatheredContext, ToolBox, run_context_loop
from .errors import ConfigurationError, InfrastructureError, TransportError
from .exec_harness import DEFAULT_TOOLCHAINS, ExecutionHarness, ToolchainConfig
from .llm_gateway import ChatConfig, Transcript, make_backend
from .rag_agent import RetrievalStores, run_rag
from .refine_agent import FAILED, PASSED, TranslationResult, run_refine_loop
from .repo_index import CSHARP, JAVA, build_index, extract_pairs, save_index
from .retrieval import RetrievalConfig, build_name_store, build_pair_store, save_store
from .templates import Templates

log = logging.getLogger(__name__)

BACKENDS = ("http", "scripted", "replay", "offline")
DIRECTIONS = {"csharp->java": (CSHARP, JAVA), "java->csharp": (JAVA, CSHARP)}
_PATH_KEYS = ("source_repo", "target_repo", "mapping_file", "script", "replay", "out_dir",
              "workspace_dir", "templates_dir")


@dataclass(frozen=True)
class RunConfig:
    source_repo: Path
    target_repo: Path
    mapping_file: Path
    direction: str = "csharp->java"
    project: str = ""
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    max_context_iter: int = 10
    max_refine_iter: int = 5
    reflection_tool_budget: int = 3
    auto_bootstrap: bool = False
    toolchain: ToolchainConfig | None = None
    backend: str = "scripted"
    script: Path | None = None
    replay: Path | None = None
    model: str = "default"
    refine_temperature: float | None = None
    no_rag: bool = False
    no_context: bool = False
    no_refine: bool = False
    full_suite: bool = False
    slots: int = 2
    workspace_dir: Path | None = None
    out_dir: Path = Path("out")
    templates_dir: Path | None = None
    log_cap: int = 4096

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ConfigurationError(f"direction must be one of {sorted(DIRECTIONS)}")
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"backend must be one of {BACKENDS}")
        if self.backend == "scripted" and self.script is None:
            raise ConfigurationError("the scripted backend needs a script file")
        if self.backend == "replay" and self.replay is None:
            raise ConfigurationError("the replay backend needs a recorded transcript")
        for name in ("max_context_iter", "max_refine_iter", "reflection_tool_budget", "slots"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")

    @property
    def languages(self) -> tuple[str, str]:
        return DIRECTIONS[self.direction]

    @property
    def effective_toolchain(self) -> ToolchainConfig:
        return self.toolchain or DEFAULT_TOOLCHAINS[self.languages[1]]

    @property
    def project_name(self) -> str:
        return self.project or Path(self.target_repo).name

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        """Build from a JSON-style dict; relative paths resolve against ``base_dir``."""
        base = Path(base_dir)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        values = dict(d)
        for k in _PATH_KEYS:
            if values.get(k) is not None:
                p = Path(values[k])
                values[k] = p if p.is_absolute() else base / p
        if isinstance(values.get("retrieval"), dict):
            values["retrieval"] = RetrievalConfig(**values["retrieval"])
        if isinstance(values.get("toolchain"), dict):
            values["toolchain"] = ToolchainConfig.from_dict(values["toolchain"], base)
        missing = [k for k in ("source_repo", "target_repo", "mapping_file") if k not in values]
        if missing:
            raise ConfigurationError(f"config lacks {missing}")
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def from_file(cls, path, overrides=None) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        cfg = cls.from_dict(doc, path.resolve().parent)
        return cfg.with_overrides(**(overrides or {}))

    def with_overrides(self, **overrides) -> "RunConfig":
        """Command-line flags win over the file; ``None`` means "not given"."""
        given = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **given) if given else self


# ---------------------------------------------------------------- helpers


def result_filename(pair_id: str) -> str:
    safe = re.sub(r"[^\w.-]+", "_", pair_id).strip("_")
    digest = hashlib.sha1(pair_id.encode("utf-8")).hexdigest()[:8]
    return f"{safe}.{digest}.json"


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- pipeline


class Pipeline:
    """Indexes, stores and agents for one configured source/target pair of repos."""

    def __init__(self, cfg: RunConfig, backend=None, harness=None):
        self.cfg = cfg
        src_lang, tgt_lang = cfg.languages
        self.diagnostics: list[str] = []
        self.source_index = build_index(cfg.source_repo, src_lang)
        self.target_index = build_index(cfg.target_repo, tgt_lang)
        self.pairs = extract_pairs(self.source_index, self.target_index, cfg.mapping_file, self.diagnostics)
        self.pair_store = build_pair_store(self.pairs, cfg.retrieval)
        self.name_store = build_name_store(self.target_index)
        self.stores = RetrievalStores(self.pair_store, self.name_store, self.target_index, cfg.retrieval)
        self.templates = Templates(cfg.templates_dir)
        self.transcript = Transcript()
        self.backend = backend or make_backend(cfg.backend, script=cfg.script, replay=cfg.replay,
                                               transcript=self.transcript)
        self.transcript = self.backend.transcript
        self.harness = harness or ExecutionHarness(cfg.target_repo, cfg.effective_toolchain,
                                                   slots=cfg.slots, full_suite=cfg.full_suite,
                                                   workspace_dir=cfg.workspace_dir)

    def select(self, pair_ids=None):
        if not pair_ids:
            return list(self.pairs)
        by_id = {p.pair_id: p for p in self.pairs}
        unknown = [p for p in pair_ids if p not in by_id]
        if unknown:
            raise ConfigurationError(f"unknown pair ids {unknown}")
        return [by_id[p] for p in pair_ids]

    def translate(self, pair) -> TranslationResult:
        cfg = self.cfg
        task = pair.pair_id
        toolbox = ToolBox(self.source_index, self.target_index, pair)
        gathered = GatheredContext()
        rag_ctx = None
        trace: dict = {"rag": None, "context": []}
        try:
            if not cfg.no_rag:
                rag_ctx = run_rag(self.backend, self.stores, pair, cfg.retrieval,
                                  source_index=self.source_index, templates=self.templates,
                                  task_id=task, model=cfg.model)
                trace["rag"] = {
                    "use_rag": not rag_ctx.skipped,
                    "rationale": rag_ctx.decision.rationale if rag_ctx.decision else "",
                    "candidates": rag_ctx.candidates,
                    "retained": [i.hit.ref for i in rag_ctx.retained],
                    "diagnostics": list(rag_ctx.diagnostics),
                }
            if not cfg.no_context:
                run_context_loop(self.backend, toolbox, pair, cfg.max_context_iter, self.templates,
                                 ChatConfig.for_role("context", task_id=task, model=cfg.model),
                                 auto_bootstrap=cfg.auto_bootstrap, gathered=gathered)
            result = run_refine_loop(
                self.backend, self.harness, pair, rag_ctx, gathered,
                1 if cfg.no_refine else cfg.max_refine_iter,
                toolbox=None if cfg.no_context else toolbox,
                tool_budget=cfg.reflection_tool_budget, templates=self.templates, task_id=task,
                model=cfg.model, temperature=cfg.refine_temperature,
            )
        except (InfrastructureError, TransportError) as exc:
            log.error("pair %s: %s", task, exc)
            result = TranslationResult(pair.pair_id, "", FAILED, 0, [],
                                       ground_truth=pair.target_ground_truth.full_text,
                                       diagnostics=[f"{type(exc).__name__}: {exc}"])
        result.diagnostics[:0] = gathered.diagnostics
        trace["context"] = [{"tool": e.call.name, "args": dict(e.call.args), "ok": e.ok}
                            for e in gathered.entries]
        result.project = cfg.project_name
        result.trace = trace
        result.stats = {
            "store_queries": rag_ctx.queries if rag_ctx is not None else 0,
            "tool_executions": toolbox.executions,
            "duplicate_calls_suppressed": gathered.suppressed,
            "chat_calls": {role: self.transcript.count(role, task) for role in ("rag", "context", "refine")},
            "reflections": sum(1 for r in result.reports if r.reflection is not None),
        }
        return result

    def translate_many(self, pairs) -> list[TranslationResult]:
        with ThreadPoolExecutor(max_workers=self.cfg.slots) as pool:
            return list(pool.map(self.translate, pairs))

    # ------------------------------------------------------------ outputs

    def write_index(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        src_lang, tgt_lang = self.cfg.languages
        artifacts = []
        for kind, name, obj, writer in (
            ("index", f"source_index.{src_lang}.json", self.source_index, save_index),
            ("index", f"target_index.{tgt_lang}.json", self.target_index, save_index),
            ("store", "pair_store.json", self.pair_store, save_store),
            ("store", "name_store.json", self.name_store, save_store),
        ):
            writer(obj, out / name)
            artifacts.append({"kind": kind, "path": name, "sha256": file_digest(out / name)})
        manifest = {
            "format_version": 1,
            "direction": self.cfg.direction,
            "pairs": len(self.pairs),
            "artifacts": artifacts,
            "diagnostics": [*self.source_index.diagnostics, *self.target_index.diagnostics, *self.diagnostics],
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return manifest

    def write_results(self, results, out_dir) -> dict:
        out = Path(out_dir)
        (out / "results").mkdir(parents=True, exist_ok=True)
        for r in results:
            (out / "results" / result_filename(r.pair_id)).write_text(r.to_json(self.cfg.log_cap), encoding="utf-8")
        self.transcript.save(out / "transcript.ndjson")
        summary = {
            "total": len(results),
            "passed": sum(r.status == PASSED for r in results),
            "statuses": {r.pair_id: r.status for r in results},
        }
        (out / "run_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return summary
