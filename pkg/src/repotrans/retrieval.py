"""Pair store, name store and hybrid (dense + BM25 + RRF) retrieval.

Scores handed to callers are always in [0, 1]; ties are broken by
ascending id so every ranking is reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError

log = logging.getLogger(__name__)

STORE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RetrievalConfig:
    top_k: int = 5
    rrf_constant: float = 60.0
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    embedding_dim: int = 256

    def __post_init__(self):
        for name in ("top_k", "rrf_constant", "bm25_k1", "bm25_b", "embedding_dim"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"retrieval {name} must be positive")


@dataclass(frozen=True)
class RetrievalHit:
    id: str
    score: float
    route: str
    rank: int
    ref: str = ""

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError("score must be finite")
        if self.rank < 1:
            raise ValueError("rank is 1-based")
        if not self.ref:
            object.__setattr__(self, "ref", self.id)


# ---------------------------------------------------------------- tokens

_WORD = re.compile(r"[A-Za-z0-9_]+")
_SUBWORD = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|\d+")


def tokenize_code(text: str) -> list[str]:
    """Split identifiers on camelCase / snake_case boundaries and lowercase them."""
    out = []
    for word in _WORD.findall(text):
        for part in word.split("_"):
            out.extend(p.lower() for p in _SUBWORD.findall(part))
    return out


# ---------------------------------------------------------------- embeddings


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    dim: int

    def __post_init__(self):
        if self.values.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} values, got shape {self.values.shape}")

    def __eq__(self, other):
        return (isinstance(other, EmbeddingVector) and self.dim == other.dim
                and np.array_equal(self.values, other.values))

    __hash__ = None


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def embed(text: str, dim: int = 256) -> EmbeddingVector:
    """Hashed bag-of-subtokens term-frequency vector, L2-normalised."""
    if dim <= 0:
        raise ConfigurationError("embedding dim must be positive")
    vec = np.zeros(dim, dtype=np.float64)
    tokens = tokenize_code(text)
    if not tokens and text.strip():
        tokens = [text.strip()]
    for tok in tokens:
        vec[_bucket(tok, dim)] += 1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return EmbeddingVector(vec, dim)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    na, nb = np.linalg.norm(a.values), np.linalg.norm(b.values)
    if na == 0 or nb == 0:
        return 0.0
    return float(a.values @ b.values / (na * nb))


class HashingEmbedder:
    name = "hashing"

    def __init__(self, dim=256):
        self.dim = dim

    def __call__(self, text: str) -> EmbeddingVector:
        return embed(text, self.dim)


class RemoteEmbedder:
    """Embeddings from an OpenAI-style ``/embeddings`` endpoint."""

    name = "remote"

    def __init__(self, endpoint, model, dim, api_key="", timeout=60.0):
        self.endpoint, self.model, self.dim = endpoint, model, dim
        self.api_key, self.timeout = api_key, timeout

    def __call__(self, text: str) -> EmbeddingVector:
        import httpx

        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        resp = httpx.post(self.endpoint, json={"model": self.model, "input": text},
                          headers=headers, timeout=self.timeout)
        resp.raise_for_status()
        values = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        norm = np.linalg.norm(values)
        return EmbeddingVector(values / norm if norm else values, len(values))


# ---------------------------------------------------------------- stores


@dataclass(frozen=True, eq=False)
class PairEntry:
    pair_id: str
    source_body: str
    target_body: str
    target_ref: str
    embedding: EmbeddingVector | None
    tokens: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class PairStore:
    entries: tuple[PairEntry, ...]
    dim: int
    config: RetrievalConfig = field(default_factory=RetrievalConfig)
    embedder: str = "hashing"

    def __post_init__(self):
        ids = [e.pair_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("pair ids must be unique")
        for e in self.entries:
            if e.embedding is not None and e.embedding.dim != self.dim:
                raise ValueError("embedding dims must be uniform")
        matrix = None
        if self.entries and all(e.embedding is not None for e in self.entries):
            matrix = np.vstack([e.embedding.values for e in self.entries])
        object.__setattr__(self, "_matrix", matrix)

    @property
    def dense_available(self) -> bool:
        return self._matrix is not None or not self.entries

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class NameEntry:
    ref: str
    name: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class NameStore:
    entries: tuple[NameEntry, ...]

    def __len__(self):
        return len(self.entries)


def build_pair_store(pairs, cfg: RetrievalConfig | None = None, embedder=None) -> PairStore:
    """Index the source bodies of translation pairs for dense and sparse search."""
    cfg = cfg or RetrievalConfig()
    embedder = embedder or HashingEmbedder(cfg.embedding_dim)
    entries = []
    dense_ok = True
    for p in pairs:
        src = p.source_fn.full_text
        vec = None
        if dense_ok:
            try:
                vec = embedder(src)
            except Exception as exc:  # remote backends fail in many ways
                log.warning("embedding backend failed (%s); pair store is sparse-only", exc)
                dense_ok = False
        entries.append(PairEntry(
            pair_id=p.pair_id,
            source_body=src,
            target_body=p.target_ground_truth.full_text,
            target_ref=p.target_ground_truth.ref,
            embedding=vec,
            tokens=tuple(tokenize_code(src)),
        ))
    if not dense_ok:
        entries = [PairEntry(e.pair_id, e.source_body, e.target_body, e.target_ref, None, e.tokens)
                   for e in entries]
    dim = getattr(embedder, "dim", cfg.embedding_dim)
    return PairStore(tuple(entries), dim, cfg, getattr(embedder, "name", "custom"))


def build_name_store(target_index) -> NameStore:
    entries = []
    for m in sorted(target_index.all_methods(), key=lambda m: m.ref):
        entries.append(NameEntry(m.ref, m.name, tuple(tokenize_code(m.name))))
    return NameStore(tuple(entries))


def save_store(store, path):
    """Write a versioned JSON file; output is byte-stable for equal stores."""
    if isinstance(store, PairStore):
        doc = {
            "format_version": STORE_FORMAT_VERSION,
            "kind": "pair_store",
            "config": asdict(store.config),
            "dim": store.dim,
            "embedder": store.embedder,
            "entries": [
                {
                    "pair_id": e.pair_id,
                    "source_body": e.source_body,
                    "target_body": e.target_body,
                    "target_ref": e.target_ref,
                    "embedding": None if e.embedding is None else e.embedding.values.tolist(),
                    "tokens": list(e.tokens),
                }
                for e in store.entries
            ],
        }
    elif isinstance(store, NameStore):
        doc = {
            "format_version": STORE_FORMAT_VERSION,
            "kind": "name_store",
            "entries": [asdict(e) for e in store.entries],
        }
    else:
        raise TypeError(f"cannot persist {type(store).__name__}")
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


def load_store(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != STORE_FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported store format version {version!r}")
    if doc["kind"] == "pair_store":
        dim = doc["dim"]
        entries = tuple(
            PairEntry(
                e["pair_id"], e["source_body"], e["target_body"], e["target_ref"],
                None if e["embedding"] is None
                else EmbeddingVector(np.asarray(e["embedding"], dtype=np.float64), dim),
                tuple(e["tokens"]),
            )
            for e in doc["entries"]
        )
        return PairStore(entries, dim, RetrievalConfig(**doc["config"]), doc["embedder"])
    if doc["kind"] == "name_store":
        return NameStore(tuple(NameEntry(e["ref"], e["name"], tuple(e["tokens"]))
                               for e in doc["entries"]))
    raise ConfigurationError(f"{path}: unknown store kind {doc['kind']!r}")


# ---------------------------------------------------------------- ranking


def _ranked(scored: Iterable[tuple[str, float]], route, top_k, refs=None) -> list[RetrievalHit]:
    ordered = sorted(scored, key=lambda s: (-s[1], s[0]))[:top_k]
    refs = refs or {}
    return [RetrievalHit(i, s, route, r, refs.get(i, i)) for r, (i, s) in enumerate(ordered, 1)]


def bm25_scores(docs: Sequence[tuple[str, Sequence[str]]], query_tokens, k1=1.2, b=0.75) -> dict[str, float]:
    """Raw Okapi BM25 score of every document (idf with the +1 smoothing)."""
    n = len(docs)
    if n == 0:
        return {}
    counts = [(doc_id, Counter(tokens), len(tokens)) for doc_id, tokens in docs]
    avgdl = sum(dl for _, _, dl in counts) / n
    df = Counter()
    for _, tf, _ in counts:
        df.update(tf.keys())
    idf = {t: math.log(1.0 + (n - df[t] + 0.5) / (df[t] + 0.5)) for t in set(query_tokens)}
    scores = {}
    for doc_id, tf, dl in counts:
        s = 0.0
        if avgdl > 0:
            for q in query_tokens:
                f = tf.get(q, 0)
                if f:
                    s += idf[q] * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * dl / avgdl))
        scores[doc_id] = s
    return scores


def bm25_rank(entries, query_tokens, cfg: RetrievalConfig, route="sparse") -> list[RetrievalHit]:
    """BM25 ranking normalised by the best score; zero-score documents are dropped.

    ``entries`` is a sequence of ``(id, tokens)``.
    """
    raw = bm25_scores(entries, list(query_tokens), cfg.bm25_k1, cfg.bm25_b)
    best = max(raw.values(), default=0.0)
    if best <= 0:
        return []
    return _ranked(((i, s / best) for i, s in raw.items() if s > 0), route, cfg.top_k)


def dense_rank(pair_store: PairStore, query_vec: EmbeddingVector, cfg: RetrievalConfig,
               exclude=()) -> list[RetrievalHit]:
    if not pair_store.entries:
        return []
    if query_vec.dim != pair_store.dim:
        raise ConfigurationError(f"query dim {query_vec.dim} != store dim {pair_store.dim}")
    if pair_store._matrix is None:
        return []
    sims = pair_store._matrix @ query_vec.values
    qn = np.linalg.norm(query_vec.values)
    norms = np.linalg.norm(pair_store._matrix, axis=1) * qn
    scored = []
    refs = {}
    for e, dot, nrm in zip(pair_store.entries, sims, norms):
        if e.pair_id in exclude or nrm == 0:
            continue
        s = min(1.0, max(0.0, float(dot / nrm)))
        if s > 0:
            scored.append((e.pair_id, s))
            refs[e.pair_id] = e.target_ref
    return _ranked(scored, "dense", cfg.top_k, refs)


@dataclass(frozen=True)
class FusedRanking:
    items: tuple[tuple[str, float], ...]

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.items]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.items]

    def __len__(self):
        return len(self.items)


def rrf_fuse(rankings: Sequence[Sequence[str]], rrf_constant: float = 60.0) -> FusedRanking:
    """Reciprocal Rank Fusion: score(d) = sum of 1 / (k + rank(d)) over rankings."""
    fused: dict[str, float] = {}
    for ranking in rankings:
        if len(set(ranking)) != len(ranking):
            raise ValueError("each ranking must be duplicate-free")
        for rank, doc in enumerate(ranking, 1):
            fused[doc] = fused.get(doc, 0.0) + 1.0 / (rrf_constant + rank)
    return FusedRanking(tuple(sorted(fused.items(), key=lambda kv: (-kv[1], kv[0]))))


def retrieve_pairs(pair_store: PairStore, source_body: str, cfg: RetrievalConfig,
                   exclude=(), embedder=None) -> list[RetrievalHit]:
    """Dense and BM25 routes ranked independently, then fused with RRF."""
    if not pair_store.entries:
        return []
    exclude = set(exclude)
    refs = {e.pair_id: e.target_ref for e in pair_store.entries}
    rankings = []
    if pair_store.dense_available:
        embedder = embedder or HashingEmbedder(pair_store.dim)
        try:
            qvec = embedder(source_body)
        except Exception as exc:
            log.warning("embedding backend failed (%s); falling back to sparse-only", exc)
        else:
            rankings.append([h.id for h in dense_rank(pair_store, qvec, cfg, exclude)])
    docs = [(e.pair_id, e.tokens) for e in pair_store.entries if e.pair_id not in exclude]
    rankings.append([h.id for h in bm25_rank(docs, tokenize_code(source_body), cfg)])
    fused = rrf_fuse(rankings, cfg.rrf_constant)
    # Scale so a document ranked first by every route scores exactly 1.0.
    ceiling = len(rankings) / (cfg.rrf_constant + 1.0)
    return [
        RetrievalHit(i, min(1.0, s / ceiling), "fused", r, refs[i])
        for r, (i, s) in enumerate(fused.items[:cfg.top_k], 1)
    ]


def retrieve_names(name_store: NameStore, target_name: str, cfg: RetrievalConfig,
                   exclude=()) -> list[RetrievalHit]:
    """BM25 over subtokenised names; an exact name match scores 1.0 and sorts first."""
    exclude = set(exclude)
    entries = [e for e in name_store.entries if e.ref not in exclude]
    raw = bm25_scores([(e.ref, e.tokens) for e in entries], tokenize_code(target_name),
                      cfg.bm25_k1, cfg.bm25_b)
    best = max(raw.values(), default=0.0)
    scored = []
    for e in entries:
        exact = e.name == target_name
        s = 1.0 if exact else (raw[e.ref] / best if best > 0 else 0.0)
        if s > 0:
            scored.append((not exact, -s, e.ref, s))
    scored.sort()
    return [RetrievalHit(ref, s, "name", r, ref)
            for r, (_, _, ref, s) in enumerate(scored[:cfg.top_k], 1)]


def merge_routes(pair_hits, name_hits) -> list[RetrievalHit]:
    """Union of both routes keyed by method ref, keeping each ref's best score."""
    best: dict[str, RetrievalHit] = {}
    for hit in [*pair_hits, *name_hits]:
        cur = best.get(hit.ref)
        if cur is None or hit.score > cur.score:
            best[hit.ref] = hit
    ordered = sorted(best.values(), key=lambda h: (-h.score, h.id))
    return [RetrievalHit(h.id, h.score, h.route, r, h.ref) for r, h in enumerate(ordered, 1)]
