#!/usr/bin/env python3
# Index the two toy repositories, then look at what the two retrieval
# routes return for one function.
from pathlib import Path

from repotrans.repo_index import build_index, extract_pairs
from repotrans.retrieval import (RetrievalConfig, build_name_store, build_pair_store, merge_routes,
                                 retrieve_names, retrieve_pairs, rrf_fuse)

CORPUS = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "corpus"

source = build_index(CORPUS / "source_cs", "csharp")
target = build_index(CORPUS / "target_java", "java")
print(f"source: {len(source.files)} files, {len(list(source.all_methods()))} methods")
print(f"target: {len(target.files)} files, {len(list(target.all_methods()))} methods")

pairs = extract_pairs(source, target, CORPUS / "mapping.tsv")
print(f"{len(pairs)} translation pairs")
for p in pairs:
    print(f"  {p.source_fn.ref:<45} -> {p.target_ground_truth.ref}")

# Fusion by hand first: B is second in one ranking and first in the other.
fused = rrf_fuse([["A", "B", "C"], ["B", "C", "A"]], 60)
print("\nRRF of [A,B,C] and [B,C,A]:")
for doc, score in fused.items:
    print(f"  {doc}  {score:.7f}")

cfg = RetrievalConfig(top_k=4)
pair_store = build_pair_store(pairs, cfg)
name_store = build_name_store(target)

pair = next(p for p in pairs if p.pair_id.endswith("totalCount"))
print(f"\nTranslating {pair.source_fn.ref}:")
print(pair.source_fn.full_text)

# The pair under translation must never retrieve itself.
by_body = retrieve_pairs(pair_store, pair.source_fn.full_text, cfg, exclude={pair.pair_id})
by_name = retrieve_names(name_store, pair.target_ground_truth.name, cfg, exclude={pair.target_ground_truth.ref})
print("\nsimilar translated pairs (dense + BM25, fused):")
for h in by_body:
    print(f"  {h.score:.3f}  {h.ref}")
print("target methods with similar names:")
for h in by_name:
    print(f"  {h.score:.3f}  {h.ref}")
print("merged candidates for the filter:")
for h in merge_routes(by_body, by_name):
    print(f"  {h.route:<5} {h.score:.3f}  {h.ref}")
