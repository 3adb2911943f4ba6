"""Command line: ``repotrans index|translate|eval``.

Exit codes: 0 success, 1 some translations did not pass, 2 configuration or
infrastructure error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import RepoTransError
from .evalkit import exact_match, format_table, summarize
from .pipeline import BACKENDS, Pipeline, RunConfig

log = logging.getLogger("repotrans")

EXIT_OK, EXIT_FAILURES, EXIT_CONFIG = 0, 1, 2


def _load_config(args) -> RunConfig:
    overrides = dict(
        backend=args.backend, script=args.script, replay=args.replay, out_dir=args.out,
        no_rag=args.no_rag, no_context=args.no_context, no_refine=args.no_refine,
        max_refine_iter=args.max_refine_iter, max_context_iter=args.max_context_iter,
        full_suite=args.full_suite, slots=args.slots,
    )
    return RunConfig.from_file(args.config, overrides)


def cmd_index(args) -> int:
    cfg = _load_config(args)
    pipe = Pipeline(cfg)
    manifest = pipe.write_index(Path(cfg.out_dir) / "index")
    for d in manifest["diagnostics"]:
        print(f"warning: {d}", file=sys.stderr)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_translate(args) -> int:
    cfg = _load_config(args)
    if not args.all and not args.pair:
        raise RepoTransError("translate needs --pair ID (repeatable) or --all")
    pipe = Pipeline(cfg)
    for d in pipe.diagnostics:
        print(f"warning: {d}", file=sys.stderr)
    pairs = pipe.select(None if args.all else args.pair)
    results = pipe.translate_many(pairs)
    summary = pipe.write_results(results, cfg.out_dir)
    for r in results:
        print(f"{r.status:<14} {r.iterations_used} iter  {r.pair_id}")
    print(f"{summary['passed']}/{summary['total']} passed; results in {cfg.out_dir}")
    return EXIT_OK if summary["passed"] == summary["total"] else EXIT_FAILURES


def load_results(results_dir) -> list[dict]:
    root = Path(results_dir)
    if (root / "results").is_dir():
        root = root / "results"
    if not root.is_dir():
        raise RepoTransError(f"results directory {results_dir} does not exist")
    docs = [json.loads(p.read_text(encoding="utf-8")) for p in sorted(root.glob("*.json"))]
    if not docs:
        raise RepoTransError(f"no result files in {root}")
    return docs


def cmd_eval(args) -> int:
    docs = load_results(args.results)
    groups: dict[str, list] = {}
    for d in docs:
        groups.setdefault(d.get("project") or "default", []).append(d)
    summary = summarize(groups)
    out = summary.to_dict()
    if args.leak_check:
        lang = args.language
        matches = [d["pair_id"] for d in docs
                   if d.get("final_code") and exact_match(d["final_code"], d["ground_truth"], lang)]
        out["leak_check"] = {"exact_matches": len(matches), "total": len(docs),
                             "rate": len(matches) / len(docs), "pairs": matches}
    print(json.dumps(out, indent=2, sort_keys=True))
    print(format_table(summary))
    if args.leak_check:
        lc = out["leak_check"]
        print(f"exact match with ground truth: {lc['exact_matches']}/{lc['total']} ({100 * lc['rate']:.1f}%)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="repotrans", description="Repository-aware function translation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp):
        sp.add_argument("--config", required=True, help="run configuration (JSON)")
        sp.add_argument("--backend", choices=BACKENDS)
        sp.add_argument("--script", type=Path, help="script file for the scripted backend")
        sp.add_argument("--replay", type=Path, help="recorded transcript for the replay backend")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--no-rag", action="store_true", default=None)
        sp.add_argument("--no-context", action="store_true", default=None)
        sp.add_argument("--no-refine", action="store_true", default=None)
        sp.add_argument("--max-refine-iter", type=int)
        sp.add_argument("--max-context-iter", type=int)
        sp.add_argument("--full-suite", action="store_true", default=None,
                        help="run the whole test suite instead of the focal tests")
        sp.add_argument("--slots", type=int, help="concurrent translation tasks")

    sp = sub.add_parser("index", help="build indexes and retrieval stores")
    run_flags(sp)
    sp.set_defaults(func=cmd_index)

    sp = sub.add_parser("translate", help="translate pairs")
    run_flags(sp)
    group = sp.add_mutually_exclusive_group()
    group.add_argument("--pair", action="append", help="pair id (target method ref); repeatable")
    group.add_argument("--all", action="store_true")
    sp.set_defaults(func=cmd_translate)

    sp = sub.add_parser("eval", help="summarize result files")
    sp.add_argument("results", type=Path, help="output directory of a translate run")
    sp.add_argument("--leak-check", action="store_true", help="exact-match final code against ground truth")
    sp.add_argument("--language", default="java", choices=("java", "csharp"))
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RepoTransError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
