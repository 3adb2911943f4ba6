"""Chat-completion backends with transcript recording and offline replay.

Three backends share one call path, :func:`chat`:

* ``HttpBackend`` posts an OpenAI-style ``/chat/completions`` body.
* ``ScriptedBackend`` pops queued responses by agent role (and optionally
  by translation task), for tests and checked-in demo runs.
* ``ReplayBackend`` answers from a recorded transcript without touching
  the network.

Every call, failed or not, is appended to the backend's :class:`Transcript`.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from collections import defaultdict, deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import JSONExtractionError, ScriptUnderrunError, TransportError

log = logging.getLogger(__name__)

ROLES = ("rag", "context", "refine")
DEFAULT_TEMPERATURES = {"rag": 0.0, "context": 0.0, "refine": 0.8}

ENV_ENDPOINT = "REPOTRANS_LLM_ENDPOINT"
ENV_API_KEY = "REPOTRANS_LLM_API_KEY"
ENV_MODEL = "REPOTRANS_LLM_MODEL"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad chat role {self.role!r}")
        if self.role != "assistant" and not self.content:
            raise ValueError(f"{self.role} message must not be empty")


@dataclass(frozen=True)
class ChatConfig:
    model: str = "default"
    temperature: float = 0.0
    max_tokens: int = 2048
    agent_role: str = "refine"
    task_id: str = ""

    def __post_init__(self):
        if self.agent_role not in ROLES:
            raise ValueError(f"agent_role must be one of {ROLES}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    @classmethod
    def for_role(cls, agent_role, *, model="default", max_tokens=2048, task_id="",
                 temperature=None):
        """Config carrying the role's default temperature unless overridden."""
        if temperature is None:
            temperature = DEFAULT_TEMPERATURES[agent_role]
        return cls(model=model, temperature=temperature, max_tokens=max_tokens,
                   agent_role=agent_role, task_id=task_id)


@dataclass
class TranscriptRecord:
    task_id: str
    agent_role: str
    seq: int
    messages: list
    config: dict
    response: str | None
    error: str | None
    latency: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True)


class Transcript:
    """Append-only log of chat calls; safe to share between threads."""

    def __init__(self, records=()):
        self._lock = threading.Lock()
        self._records: list[TranscriptRecord] = list(records)
        self._seq: dict[str, int] = defaultdict(int)
        for r in self._records:
            self._seq[r.task_id] = max(self._seq[r.task_id], r.seq + 1)

    def append(self, task_id, agent_role, messages, cfg, response, error, latency):
        with self._lock:
            seq = self._seq[task_id]
            self._seq[task_id] += 1
            rec = TranscriptRecord(
                task_id=task_id,
                agent_role=agent_role,
                seq=seq,
                messages=[asdict(m) for m in messages],
                config=asdict(cfg),
                response=response,
                error=error,
                latency=latency,
            )
            self._records.append(rec)
            return rec

    @property
    def records(self) -> list[TranscriptRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self):
        return len(self._records)

    def for_task(self, task_id) -> list[TranscriptRecord]:
        return [r for r in self.records if r.task_id == task_id]

    def count(self, agent_role=None, task_id=None) -> int:
        return sum(
            1 for r in self.records
            if (agent_role is None or r.agent_role == agent_role)
            and (task_id is None or r.task_id == task_id)
        )

    def save(self, path):
        # Tasks may interleave when run concurrently; order by (task, seq)
        # so the file is independent of scheduling.
        ordered = sorted(self.records, key=lambda r: (r.task_id, r.seq))
        Path(path).write_text("".join(r.to_json() + "\n" for r in ordered), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Transcript":
        records = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                records.append(TranscriptRecord(**json.loads(line)))
        return cls(records)


class ChatBackend:
    """Base class; subclasses implement :meth:`_complete`."""

    kind = "abstract"
    #: when true, agents use their deterministic heuristics instead of chatting
    fallback = False

    def __init__(self, transcript: Transcript | None = None):
        self.transcript = transcript if transcript is not None else Transcript()

    def _complete(self, messages, cfg) -> tuple[str, float | None]:
        raise NotImplementedError


class HttpBackend(ChatBackend):
    kind = "http"

    def __init__(self, endpoint=None, api_key=None, model=None, *, retries=3,
                 backoff=0.5, timeout=120.0, client=None, transcript=None):
        super().__init__(transcript)
        self.endpoint = endpoint or os.environ.get(ENV_ENDPOINT)
        if not self.endpoint:
            raise TransportError(f"no endpoint configured (set {ENV_ENDPOINT})")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL)
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._client = client

    def _client_or_new(self):
        import httpx

        if self._client is None:
            self._client = httpx.Client(timeout=self.timeout)
        return self._client

    def _complete(self, messages, cfg):
        import httpx

        body = {
            "model": self.model or cfg.model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        client = self._client_or_new()
        last = None
        for attempt in range(self.retries):
            try:
                resp = client.post(self.endpoint, json=body, headers=headers)
                if 200 <= resp.status_code < 300:
                    return resp.json()["choices"][0]["message"]["content"], None
                last = f"HTTP {resp.status_code}: {resp.text[:200]}"
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last = f"{type(exc).__name__}: {exc}"
            if attempt + 1 < self.retries:
                time.sleep(self.backoff * (2 ** attempt) * (0.5 + random.random()))
        raise TransportError(f"chat request failed after {self.retries} attempts: {last}")


class ScriptedBackend(ChatBackend):
    """Replies from a queue per agent role.

    Entries may carry a ``pair_id``; such entries are only served to calls
    whose ``ChatConfig.task_id`` matches, which keeps concurrently running
    translation tasks deterministic.
    """

    kind = "scripted"

    def __init__(self, entries, transcript=None):
        super().__init__(transcript)
        self._lock = threading.Lock()
        self._queues: dict[tuple, deque] = defaultdict(deque)
        for e in entries:
            role = e["agent_role"]
            if role not in ROLES:
                raise ValueError(f"script entry has unknown agent_role {role!r}")
            self._queues[(e.get("pair_id"), role)].append(e["response"])

    @classmethod
    def from_file(cls, path, transcript=None):
        return cls(json.loads(Path(path).read_text(encoding="utf-8")), transcript)

    def remaining(self, agent_role=None) -> int:
        return sum(len(q) for (_, r), q in self._queues.items()
                   if agent_role is None or r == agent_role)

    def _complete(self, messages, cfg):
        with self._lock:
            q = self._queues.get((cfg.task_id or None, cfg.agent_role))
            if not q:
                q = self._queues.get((None, cfg.agent_role))
            if not q:
                raise ScriptUnderrunError(
                    f"script exhausted for role {cfg.agent_role!r} (task {cfg.task_id!r})")
            return q.popleft(), 0.0


class ReplayBackend(ChatBackend):
    """Serves responses from a recorded transcript; never touches the network."""

    kind = "replay"

    def __init__(self, recorded: Transcript, transcript=None):
        super().__init__(transcript)
        self._lock = threading.Lock()
        self._queues: dict[tuple, deque] = defaultdict(deque)
        for r in sorted(recorded.records, key=lambda r: (r.task_id, r.seq)):
            self._queues[(r.task_id, r.agent_role)].append(r)

    @classmethod
    def from_file(cls, path, transcript=None):
        return cls(Transcript.load(path), transcript)

    def _complete(self, messages, cfg):
        with self._lock:
            q = self._queues.get((cfg.task_id, cfg.agent_role))
            if not q:
                raise ScriptUnderrunError(
                    f"recorded transcript has no further {cfg.agent_role!r} call for task {cfg.task_id!r}")
            rec = q.popleft()
        if rec.error is not None:
            raise TransportError(rec.error)
        return rec.response, rec.latency


class OfflineBackend(ChatBackend):
    """No model at all: agents fall back to their deterministic heuristics."""

    kind = "offline"
    fallback = True

    def _complete(self, messages, cfg):
        raise TransportError("offline backend cannot answer chat requests")


def chat(backend: ChatBackend, messages, cfg: ChatConfig) -> str:
    """Send ``messages`` and return the reply text, recording the call."""
    if not messages:
        raise ValueError("messages must be non-empty")
    start = time.perf_counter()
    try:
        text, latency = backend._complete(messages, cfg)
    except TransportError as exc:
        backend.transcript.append(cfg.task_id, cfg.agent_role, messages, cfg, None,
                                  str(exc), time.perf_counter() - start)
        raise
    if latency is None:
        latency = time.perf_counter() - start
    backend.transcript.append(cfg.task_id, cfg.agent_role, messages, cfg, text, None, latency)
    return text


def _strip_fences(text: str) -> str:
    lines = text.strip().splitlines()
    if lines and lines[0].lstrip().startswith("```"):
        lines = lines[1:]
        if lines and lines[-1].strip().startswith("```"):
            lines = lines[:-1]
        return "\n".join(lines)
    return text


def _balanced_object_at(text: str, start: int) -> int:
    """Index one past the ``}`` closing the object opened at ``start``, or -1."""
    depth, in_str, escape = 0, False, False
    for i in range(start, len(text)):
        ch = text[i]
        if in_str:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i + 1
    return -1


def extract_json_object(text: str) -> str:
    """Return the first balanced, parseable top-level JSON object in ``text``."""
    body = _strip_fences(text)
    for candidate_text in (body, text):
        pos = candidate_text.find("{")
        while pos != -1:
            end = _balanced_object_at(candidate_text, pos)
            if end != -1:
                chunk = candidate_text[pos:end]
                try:
                    json.loads(chunk)
                    return chunk
                except ValueError:
                    pass
            pos = candidate_text.find("{", pos + 1)
    raise JSONExtractionError("no JSON object found in reply")


def make_backend(kind, *, script=None, replay=None, transcript=None, **http_kwargs) -> ChatBackend:
    if kind == "scripted":
        if script is None:
            raise ValueError("scripted backend needs a script file")
        return ScriptedBackend.from_file(script, transcript)
    if kind == "replay":
        if replay is None:
            raise ValueError("replay backend needs a transcript file")
        return ReplayBackend.from_file(replay, transcript)
    if kind == "http":
        return HttpBackend(transcript=transcript, **http_kwargs)
    if kind == "offline":
        return OfflineBackend(transcript)
    raise ValueError(f"unknown backend {kind!r}")
