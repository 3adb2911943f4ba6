"""Compile and test a candidate translation inside a throwaway repository copy."""

from __future__ import annotations

import hashlib
import logging
import os
import re
import shutil
import signal
import stat
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .errors import ConfigurationError, InfrastructureError

log = logging.getLogger(__name__)


class ErrorCategory(str, Enum):
    ALL_PASS = "AllPass"
    COMPILATION = "Compilation"
    FUNCTIONAL = "Functional"
    RUNTIME = "Runtime"
    NON_TERMINATING = "NonTerminating"


@dataclass(frozen=True)
class ExecutionReport:
    category: ErrorCategory
    log: str
    messages: tuple[str, ...] = ()
    location: tuple[str, int] | None = None
    wall_time: float = 0.0
    phase: str = "test"

    def __post_init__(self):
        if self.category is ErrorCategory.COMPILATION and not self.messages:
            raise ValueError("a compilation report needs at least one message")
        if self.category is ErrorCategory.ALL_PASS and self.messages:
            raise ValueError("a passing report carries no messages")

    @property
    def passed(self) -> bool:
        return self.category is ErrorCategory.ALL_PASS and self.phase == "test"

    @property
    def compiled(self) -> bool:
        return self.phase == "test"

    def to_dict(self, log_cap=None) -> dict:
        text = self.log if log_cap is None else truncate_log(self.log, log_cap)
        return {
            "category": self.category.value,
            "phase": self.phase,
            "messages": list(self.messages),
            "location": list(self.location) if self.location else None,
            "log": text,
        }


@dataclass(frozen=True)
class ToolchainConfig:
    language: str
    build: tuple[str, ...]
    test: tuple[str, ...]
    build_timeout: float = 300.0
    test_timeout: float = 120.0
    log_cap: int = 32768
    compile_patterns: tuple[str, ...] = ()
    assertion_patterns: tuple[str, ...] = ()
    exception_patterns: tuple[str, ...] = ()
    location_pattern: str = ""
    no_tests_pattern: str = ""
    full_suite_selector: str = ""
    config_dir: str = "."

    @classmethod
    def from_dict(cls, d, config_dir=".") -> "ToolchainConfig":
        base = DEFAULT_TOOLCHAINS.get(d.get("language", ""))
        values = {} if base is None else {k: getattr(base, k) for k in base.__dataclass_fields__}
        for k, v in d.items():
            if k not in cls.__dataclass_fields__:
                raise ConfigurationError(f"unknown toolchain key {k!r}")
            values[k] = tuple(v) if isinstance(v, list) else v
        values["config_dir"] = str(config_dir)
        missing = [k for k in ("language", "build", "test") if k not in values]
        if missing:
            raise ConfigurationError(f"toolchain config lacks {missing}")
        return cls(**values)


_JAVA_PATTERNS = dict(
    compile_patterns=(r"\berror\b", r"^\s*symbol\s*:", r"^\s*location\s*:"),
    assertion_patterns=(r"AssertionError", r"AssertionFailedError", r"ComparisonFailure",
                        r"expected:\s*<"),
    exception_patterns=(r"Exception in thread", r"^[\w.$]+(Exception|Error)\b",
                        r"^\s+at [\w.$<>]+\(", r"^Caused by:"),
    location_pattern=r"(?P<file>[\w./\\$-]+\.java):(?P<line>\d+)",
    no_tests_pattern=r"No tests matched|No tests found",
)

_CSHARP_PATTERNS = dict(
    compile_patterns=(r"error CS\d+", r"\berror\b"),
    assertion_patterns=(r"Assert\.\w+\(\) Failure", r"Assert\.\w+ failed", r"Expected:",
                        r"AssertionException"),
    exception_patterns=(r"Unhandled exception", r"System\.[\w.]*Exception", r"^\s+at [\w.`<>]+\("),
    location_pattern=r"(?P<file>[\w./\\-]+\.cs)\((?P<line>\d+),\d+\)",
    no_tests_pattern=r"No test matches the given testcase filter|No test is available",
)

DEFAULT_TOOLCHAINS = {
    "java": ToolchainConfig(
        language="java",
        build=("sh", "-c", "mkdir -p build/classes && javac -nowarn -d build/classes $(find src -name '*.java' | sort)"),
        test=("java", "-cp", "build/classes", "org.toy.testing.Runner", "{selector}"),
        **_JAVA_PATTERNS,
    ),
    "csharp": ToolchainConfig(
        language="csharp",
        build=("dotnet", "build", "--nologo"),
        test=("dotnet", "test", "--nologo", "--no-build", "--filter", "{selector}"),
        **_CSHARP_PATTERNS,
    ),
}

_GENERIC = ToolchainConfig(
    language="any", build=(), test=(),
    compile_patterns=_JAVA_PATTERNS["compile_patterns"] + _CSHARP_PATTERNS["compile_patterns"],
    assertion_patterns=_JAVA_PATTERNS["assertion_patterns"] + _CSHARP_PATTERNS["assertion_patterns"],
    exception_patterns=_JAVA_PATTERNS["exception_patterns"] + _CSHARP_PATTERNS["exception_patterns"],
    location_pattern=_JAVA_PATTERNS["location_pattern"] + "|" + _CSHARP_PATTERNS["location_pattern"].replace(
        "?P<file>", "?P<file2>").replace("?P<line>", "?P<line2>"),
)


def _any(patterns, text) -> bool:
    return any(re.search(p, text, re.MULTILINE) for p in patterns)


def classify(exit_status, output_text, timed_out, phase, toolchain: ToolchainConfig | None = None) -> ErrorCategory:
    """Map a process outcome onto exactly one error category."""
    tc = toolchain or _GENERIC
    if timed_out:
        return ErrorCategory.NON_TERMINATING
    if exit_status == 0:
        return ErrorCategory.ALL_PASS
    if phase == "build":
        return ErrorCategory.COMPILATION
    if _any(tc.assertion_patterns, output_text):
        return ErrorCategory.FUNCTIONAL
    if _any(tc.exception_patterns, output_text):
        return ErrorCategory.RUNTIME
    return ErrorCategory.FUNCTIONAL


def extract_location(log_text, toolchain: ToolchainConfig | None = None):
    """First ``file:line`` reference in the log, or ``None``."""
    tc = toolchain or _GENERIC
    if not tc.location_pattern:
        return None
    m = re.search(tc.location_pattern, log_text)
    if not m:
        return None
    groups = m.groupdict()
    f = groups.get("file") or groups.get("file2")
    line = groups.get("line") or groups.get("line2")
    return (f, int(line))


def extract_messages(log_text, category: ErrorCategory, toolchain: ToolchainConfig | None = None,
                     limit=20) -> tuple[str, ...]:
    if category is ErrorCategory.ALL_PASS:
        return ()
    tc = toolchain or _GENERIC
    if category is ErrorCategory.COMPILATION:
        patterns = tc.compile_patterns
    elif category is ErrorCategory.NON_TERMINATING:
        return ("execution did not terminate before the timeout",)
    else:
        patterns = tc.assertion_patterns + tc.exception_patterns
    lines = [ln.rstrip() for ln in log_text.splitlines() if ln.strip()]
    picked = [ln for ln in lines if _any(patterns, ln)]
    if not picked:
        picked = lines[-5:] or [f"{category.value} failure with empty output"]
    return tuple(picked[:limit])


def truncate_log(text: str, cap: int = 32768) -> str:
    """Keep the first 75% and last 25% of ``cap`` bytes."""
    raw = text.encode("utf-8")
    if len(raw) <= cap:
        return text
    head = raw[: int(cap * 0.75)].decode("utf-8", errors="ignore")
    tail = raw[len(raw) - (cap - int(cap * 0.75)):].decode("utf-8", errors="ignore")
    return f"{head}\n...[truncated {len(raw) - cap} bytes]...\n{tail}"


# ---------------------------------------------------------------- workspace


def repo_digest(root) -> str:
    """SHA-256 over every file's relative path and bytes."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(path.relative_to(root).as_posix().encode("utf-8"))
        h.update(b"\0")
        h.update(path.read_bytes())
        h.update(b"\0")
    return h.hexdigest()


@dataclass
class Workspace:
    root: Path
    origin: Path
    origin_digest: str
    injected: tuple | None = None

    def teardown(self):
        # root sits inside its own mkdtemp directory
        shutil.rmtree(self.root.parent, ignore_errors=True)


def prepare_workspace(target_repo, base_dir=None) -> Workspace:
    origin = Path(target_repo)
    if not origin.is_dir():
        raise InfrastructureError(f"target repository {origin} does not exist")
    try:
        tmp = Path(tempfile.mkdtemp(prefix="repotrans-ws-", dir=base_dir))
        root = tmp / origin.name
        shutil.copytree(origin, root, symlinks=True)
    except OSError as exc:
        raise InfrastructureError(f"could not copy {origin}: {exc}") from exc
    return Workspace(root=root, origin=origin, origin_digest=repo_digest(origin))


def inject_translation(ws: Workspace, target_method, code: str) -> None:
    """Replace the method's line span in the workspace copy with ``code``."""
    path = ws.root / target_method.file_path
    if not path.is_file():
        raise InfrastructureError(f"{target_method.file_path} missing from workspace")
    if not path.stat().st_mode & stat.S_IWUSR:
        raise InfrastructureError(f"{target_method.file_path} is read-only")
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines(keepends=True)
    start, end = target_method.span
    if not (1 <= start <= end <= len(lines)):
        raise InfrastructureError(f"span {target_method.span} outside {target_method.file_path}")
    region = "".join(lines[start - 1:end])
    if target_method.signature_text not in region or target_method.body_text not in region:
        raise InfrastructureError(f"span drift: {target_method.ref} no longer at lines {start}-{end}")
    newline = "\n"
    if lines[end - 1].endswith("\r\n"):
        newline = "\r\n"
    replacement = code.rstrip("\r\n") + newline
    path.write_text("".join(lines[:start - 1]) + replacement + "".join(lines[end:]), encoding="utf-8")
    ws.injected = (target_method.file_path, (start, end), code)


def read_injected_region(ws: Workspace) -> str:
    file_path, (start, _), code = ws.injected
    lines = (ws.root / file_path).read_text(encoding="utf-8").splitlines(keepends=True)
    n = len(code.rstrip("\r\n").splitlines())
    return "".join(lines[start - 1:start - 1 + n]).rstrip("\r\n")


# ---------------------------------------------------------------- processes


def _expand(argv, **values):
    out = []
    for arg in argv:
        for key, val in values.items():
            arg = arg.replace("{" + key + "}", str(val))
        out.append(arg)
    return out


def run_process(argv, cwd, timeout_s):
    """Run ``argv`` with merged stdout/stderr.  Returns (exit, output, timed_out, wall)."""
    start = time.perf_counter()
    try:
        proc = subprocess.Popen(argv, cwd=cwd, stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
                                stdin=subprocess.DEVNULL, start_new_session=True)
    except FileNotFoundError as exc:
        raise InfrastructureError(f"command not found: {argv[0]}") from exc
    except PermissionError as exc:
        raise InfrastructureError(f"command not executable: {argv[0]}") from exc
    try:
        out, _ = proc.communicate(timeout=timeout_s)
        timed_out = False
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        out, _ = proc.communicate()
        timed_out = True
    wall = time.perf_counter() - start
    return proc.returncode, out.decode("utf-8", errors="replace"), timed_out, wall


def _report(ws, toolchain, phase, exit_status, output, timed_out, wall):
    output = output.replace(str(ws.root), ".")
    category = classify(exit_status, output, timed_out, phase, toolchain)
    messages = extract_messages(output, category, toolchain)
    location = extract_location(output, toolchain) if category is not ErrorCategory.ALL_PASS else None
    return ExecutionReport(category, truncate_log(output, toolchain.log_cap), messages,
                           location, wall, phase)


def _placeholders(ws, toolchain, selector=""):
    return dict(selector=selector, root=ws.root, python=sys.executable,
                config_dir=toolchain.config_dir)


def compile(ws: Workspace, toolchain: ToolchainConfig, timeout_s=None) -> ExecutionReport:
    """Build the workspace.  ``AllPass`` here means "compiled"."""
    if not toolchain.build:
        raise ConfigurationError(f"no build command configured for {toolchain.language}")
    argv = _expand(toolchain.build, **_placeholders(ws, toolchain))
    timeout_s = toolchain.build_timeout if timeout_s is None else timeout_s
    return _report(ws, toolchain, "build", *run_process(argv, ws.root, timeout_s))


def run_tests(ws: Workspace, test_selector, toolchain: ToolchainConfig, timeout_s=None) -> ExecutionReport:
    if not toolchain.test:
        raise ConfigurationError(f"no test command configured for {toolchain.language}")
    argv = _expand(toolchain.test, **_placeholders(ws, toolchain, test_selector))
    timeout_s = toolchain.test_timeout if timeout_s is None else timeout_s
    exit_status, output, timed_out, wall = run_process(argv, ws.root, timeout_s)
    if toolchain.no_tests_pattern and re.search(toolchain.no_tests_pattern, output):
        raise InfrastructureError(f"test selector {test_selector!r} matched no tests")
    return _report(ws, toolchain, "test", exit_status, output, timed_out, wall)


class ExecutionHarness:
    """Evaluates candidates against one target repository.

    At most ``slots`` evaluations run at once; each owns its own workspace.
    """

    def __init__(self, target_repo, toolchain: ToolchainConfig, slots=2, full_suite=False,
                 workspace_dir=None):
        if full_suite and not toolchain.full_suite_selector:
            raise ConfigurationError("full-suite runs need toolchain.full_suite_selector")
        self.target_repo = Path(target_repo)
        self.toolchain = toolchain
        self.full_suite = full_suite
        self.workspace_dir = workspace_dir
        self._slots = threading.BoundedSemaphore(slots)
        self.executions = 0
        self._lock = threading.Lock()

    def evaluate(self, target_method, code, test_selector) -> ExecutionReport:
        selector = self.toolchain.full_suite_selector if self.full_suite else test_selector
        with self._slots:
            with self._lock:
                self.executions += 1
            ws = prepare_workspace(self.target_repo, self.workspace_dir)
            try:
                inject_translation(ws, target_method, code)
                built = compile(ws, self.toolchain)
                if built.category is not ErrorCategory.ALL_PASS:
                    return built
                return run_tests(ws, selector, self.toolchain)
            finally:
                ws.teardown()
