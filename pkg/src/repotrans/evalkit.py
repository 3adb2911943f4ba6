"""Compile/pass rates and the exact-match leakage check."""

from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

log = logging.getLogger(__name__)

COMPILED_STATUSES = ("passed", "compiled_only")


@dataclass(frozen=True)
class ProjectStats:
    n: int
    compiled: int
    passed: int
    compile_rate: float
    pass_rate: float


@dataclass(frozen=True)
class EvalSummary:
    per_project: Mapping[str, ProjectStats]
    macro_compile_rate: float
    macro_pass_rate: float
    micro_compile_rate: float
    micro_pass_rate: float
    diagnostics: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "per_project": {k: asdict(v) for k, v in self.per_project.items()},
            "macro_compile_rate": self.macro_compile_rate,
            "macro_pass_rate": self.macro_pass_rate,
            "micro_compile_rate": self.micro_compile_rate,
            "micro_pass_rate": self.micro_pass_rate,
            "diagnostics": list(self.diagnostics),
        }


def _status(result) -> str:
    if isinstance(result, Mapping):
        return result["status"]
    return result.status


def summarize(groups: Mapping[str, Sequence]) -> EvalSummary:
    """Per-project rates plus macro (mean of project rates) and micro (pooled) rates.

    ``groups`` maps project name to its translation results; anything with a
    ``status`` attribute or key works.
    """
    if not groups:
        raise ValueError("no result groups to summarize")
    per_project, diagnostics = {}, []
    for project in sorted(groups):
        results = list(groups[project])
        if not results:
            diagnostics.append(f"project {project!r} has no results; excluded")
            continue
        statuses = [_status(r) for r in results]
        n = len(statuses)
        compiled = sum(s in COMPILED_STATUSES for s in statuses)
        passed = sum(s == "passed" for s in statuses)
        per_project[project] = ProjectStats(n, compiled, passed, compiled / n, passed / n)
    for d in diagnostics:
        log.warning(d)
    if not per_project:
        return EvalSummary({}, 0.0, 0.0, 0.0, 0.0, tuple(diagnostics))
    stats = list(per_project.values())
    total = sum(s.n for s in stats)
    return EvalSummary(
        per_project=per_project,
        macro_compile_rate=sum(s.compile_rate for s in stats) / len(stats),
        macro_pass_rate=sum(s.pass_rate for s in stats) / len(stats),
        micro_compile_rate=sum(s.compiled for s in stats) / total,
        micro_pass_rate=sum(s.passed for s in stats) / total,
        diagnostics=tuple(diagnostics),
    )


def format_table(summary: EvalSummary) -> str:
    rows = [f"{'project':<20} {'n':>5} {'compiled':>9} {'passed':>7} {'compile%':>9} {'pass%':>7}"]
    for name, s in summary.per_project.items():
        rows.append(f"{name:<20} {s.n:>5} {s.compiled:>9} {s.passed:>7} "
                    f"{100 * s.compile_rate:>8.2f}% {100 * s.pass_rate:>6.2f}%")
    rows.append(f"{'macro average':<20} {'':>5} {'':>9} {'':>7} "
                f"{100 * summary.macro_compile_rate:>8.2f}% {100 * summary.macro_pass_rate:>6.2f}%")
    rows.append(f"{'micro (pooled)':<20} {'':>5} {'':>9} {'':>7} "
                f"{100 * summary.micro_compile_rate:>8.2f}% {100 * summary.micro_pass_rate:>6.2f}%")
    return "\n".join(rows)


# ---------------------------------------------------------------- exact match

_WS = re.compile(r"\s+")


def _segments(code: str, language_tag: str):
    """Yield ("code", text) / ("lit", text) pieces with comments dropped."""
    i, n = 0, len(code)
    buf = []
    while i < n:
        ch = code[i]
        nxt = code[i + 1] if i + 1 < n else ""
        if ch == "/" and nxt == "/":
            j = code.find("\n", i)
            i = n if j == -1 else j
            buf.append(" ")
        elif ch == "/" and nxt == "*":
            j = code.find("*/", i + 2)
            i = n if j == -1 else j + 2
            buf.append(" ")
        elif ch in "\"'":
            if buf:
                yield "code", "".join(buf)
                buf = []
            start = i
            verbatim = language_tag == "csharp" and ch == '"' and i > 0 and code[i - 1] == "@"
            if language_tag == "java" and code.startswith('"""', i):
                j = code.find('"""', i + 3)
                i = n if j == -1 else j + 3
            else:
                i += 1
                while i < n:
                    c = code[i]
                    if verbatim:
                        if c == '"':
                            if i + 1 < n and code[i + 1] == '"':
                                i += 2
                                continue
                            i += 1
                            break
                    elif c == "\\":
                        i += 2
                        continue
                    elif c == ch or c == "\n":
                        i += 1
                        break
                    i += 1
            yield "lit", code[start:i]
        else:
            buf.append(ch)
            i += 1
    if buf:
        yield "code", "".join(buf)


def normalize_for_match(code: str, language_tag: str = "java") -> str:
    """Drop comments, collapse whitespace runs to one space, trim.

    String and character literals are left untouched.
    """
    out = []
    for kind, text in _segments(code, language_tag):
        out.append(text if kind == "lit" else _WS.sub(" ", text))
    return "".join(out).strip()


def exact_match(candidate: str, ground_truth: str, language_tag: str = "java") -> bool:
    return normalize_for_match(candidate, language_tag) == normalize_for_match(ground_truth, language_tag)


def exact_match_rate(pairs, language_tag: str = "java") -> float:
    """Fraction of ``(candidate, ground_truth)`` pairs that match exactly."""
    pairs = list(pairs)
    if not pairs:
        return 0.0
    return sum(exact_match(c, g, language_tag) for c, g in pairs) / len(pairs)
