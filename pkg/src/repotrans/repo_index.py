"""Syntactic index of a Java or C# repository.

The index is built once per repository with tree-sitter and is read-only
afterwards.  It records classes (with their fields and method signatures),
every method with its verbatim signature, body and line span, and the
import/using directives of every file.  All five context tools and the
pair extractor are answered from it.
"""

from __future__ import annotations

import fnmatch
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from tree_sitter import Language, Parser

from .errors import ConfigurationError, EmptyIndexError, MappingParseError

log = logging.getLogger(__name__)

JAVA = "java"
CSHARP = "csharp"
LANGUAGES = (JAVA, CSHARP)

DEFAULT_EXCLUDES = (
    "build/*", "*/build/*",
    "bin/*", "*/bin/*",
    "obj/*", "*/obj/*",
    "out/*", "*/out/*",
    "target/*", "*/target/*",
    ".git/*", "*/.git/*",
)


@dataclass(frozen=True)
class _Grammar:
    extension: str
    class_nodes: Mapping[str, str]
    method_nodes: frozenset
    field_nodes: frozenset
    property_nodes: frozenset
    enum_member_nodes: frozenset
    namespace_nodes: frozenset
    import_nodes: frozenset
    package_nodes: frozenset


_GRAMMARS = {
    JAVA: _Grammar(
        extension=".java",
        class_nodes=MappingProxyType({
            "class_declaration": "class",
            "record_declaration": "class",
            "interface_declaration": "interface",
            "annotation_type_declaration": "interface",
            "enum_declaration": "enum",
        }),
        method_nodes=frozenset({"method_declaration", "constructor_declaration",
                                "compact_constructor_declaration"}),
        field_nodes=frozenset({"field_declaration", "constant_declaration"}),
        property_nodes=frozenset(),
        enum_member_nodes=frozenset({"enum_constant"}),
        namespace_nodes=frozenset(),
        import_nodes=frozenset({"import_declaration"}),
        package_nodes=frozenset({"package_declaration"}),
    ),
    CSHARP: _Grammar(
        extension=".cs",
        class_nodes=MappingProxyType({
            "class_declaration": "class",
            "struct_declaration": "class",
            "record_declaration": "class",
            "record_struct_declaration": "class",
            "interface_declaration": "interface",
            "enum_declaration": "enum",
        }),
        method_nodes=frozenset({"method_declaration", "constructor_declaration"}),
        field_nodes=frozenset({"field_declaration"}),
        property_nodes=frozenset({"property_declaration"}),
        enum_member_nodes=frozenset({"enum_member_declaration"}),
        namespace_nodes=frozenset({"namespace_declaration"}),
        import_nodes=frozenset({"using_directive"}),
        package_nodes=frozenset({"file_scoped_namespace_declaration"}),
    ),
}


@lru_cache(maxsize=None)
def _language(language_tag: str) -> Language:
    if language_tag == JAVA:
        import tree_sitter_java as grammar
    else:
        import tree_sitter_c_sharp as grammar
    return Language(grammar.language())


def parser_for(language_tag: str) -> Parser:
    if language_tag not in LANGUAGES:
        raise ConfigurationError(f"unsupported language {language_tag!r}; expected one of {LANGUAGES}")
    return Parser(_language(language_tag))


def extension_for(language_tag: str) -> str:
    return _GRAMMARS[language_tag].extension


# ---------------------------------------------------------------- records


@dataclass(frozen=True)
class FieldRecord:
    name: str
    declared_type: str
    modifiers: tuple[str, ...] = ()

    def render(self) -> str:
        return " ".join([*self.modifiers, self.declared_type, self.name])


@dataclass(frozen=True)
class MethodRecord:
    owning_class: str
    name: str
    signature_text: str
    parameters: tuple[tuple[str, str], ...]
    return_type: str
    body_text: str
    file_path: str
    span: tuple[int, int]

    @property
    def ref(self) -> str:
        """Unique reference: qualified class, name and parameter types."""
        types = ",".join(t for _, t in self.parameters)
        return f"{self.owning_class}.{self.name}({types})"

    @property
    def full_text(self) -> str:
        if not self.body_text:
            return self.signature_text
        return f"{self.signature_text} {self.body_text}"


@dataclass(frozen=True)
class ClassRecord:
    simple_name: str
    qualified_name: str
    container: str
    fields: tuple[FieldRecord, ...]
    method_signatures: tuple[str, ...]
    file_path: str
    kind: str


@dataclass(frozen=True)
class ImportRecord:
    file_path: str
    imported_name: str


@dataclass(frozen=True)
class RepoIndex:
    language_tag: str
    root: Path
    classes: Mapping[str, tuple[ClassRecord, ...]]
    methods: Mapping[tuple[str, str], tuple[MethodRecord, ...]]
    imports: Mapping[str, tuple[ImportRecord, ...]]
    files: tuple[str, ...] = ()
    diagnostics: tuple[str, ...] = ()

    def __eq__(self, other):
        if not isinstance(other, RepoIndex):
            return NotImplemented
        return (
            self.language_tag == other.language_tag
            and self.root == other.root
            and dict(self.classes) == dict(other.classes)
            and dict(self.methods) == dict(other.methods)
            and dict(self.imports) == dict(other.imports)
            and self.files == other.files
            and self.diagnostics == other.diagnostics
        )

    __hash__ = None

    def all_classes(self):
        for records in self.classes.values():
            yield from records

    def all_methods(self):
        for records in self.methods.values():
            yield from records


@dataclass(frozen=True)
class TranslationPair:
    pair_id: str
    source_fn: MethodRecord
    target_signature: str
    target_ground_truth: MethodRecord
    test_selector: str


# ---------------------------------------------------------------- extraction


def _text(src: bytes, node) -> str:
    return src[node.start_byte:node.end_byte].decode("utf-8")


def _split_top_level(text: str, sep: str = ",") -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "<([{":
            depth += 1
        elif ch in ">)]}":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        parts.append("".join(cur))
    return parts


_PARAM_MODIFIERS = {"final", "params", "ref", "out", "in", "this", "scoped", "readonly"}
_ANNOTATION = re.compile(r"^\s*(@[\w.]+(\([^)]*\))?|\[[^\]]*\])\s*")


def _parse_parameters(param_text: str) -> tuple[tuple[str, str], ...]:
    inner = param_text.strip()
    if inner.startswith("(") and inner.endswith(")"):
        inner = inner[1:-1]
    params = []
    for raw in _split_top_level(inner):
        part = raw.split("=", 1)[0].strip()
        while True:
            m = _ANNOTATION.match(part)
            if not m or not m.group(0):
                break
            part = part[m.end():]
        words = part.split()
        while words and words[0] in _PARAM_MODIFIERS:
            words = words[1:]
        if not words:
            continue
        if len(words) == 1:
            params.append(("", words[0]))
            continue
        name = words[-1]
        ptype = " ".join(words[:-1])
        # Java C-style array suffix on the name: int a[]
        while name.endswith("[]"):
            name = name[:-2]
            ptype += "[]"
        params.append((name, ptype))
    return tuple(params)


def _modifier_words(src: bytes, node, language_tag: str) -> list[str]:
    words = []
    for child in node.children:
        if language_tag == JAVA and child.type == "modifiers":
            for m in child.children:
                if "annotation" not in m.type:
                    words.append(_text(src, m))
        elif language_tag == CSHARP and child.type == "modifier":
            words.append(_text(src, child))
    return words


class _FileExtractor:
    def __init__(self, language_tag, rel_path, src):
        self.lang = language_tag
        self.g = _GRAMMARS[language_tag]
        self.rel_path = rel_path
        self.src = src
        self.classes: list[ClassRecord] = []
        self.methods: list[MethodRecord] = []
        self.imports: list[ImportRecord] = []

    def run(self, root):
        self._walk(root, container="", outer=())

    def _walk(self, node, container, outer):
        for child in node.children:
            t = child.type
            if t in self.g.import_nodes:
                self._import(child)
            elif t in self.g.package_nodes:
                container = self._package_name(child)
            elif t in self.g.namespace_nodes:
                name = _text(self.src, child.child_by_field_name("name"))
                nested = f"{container}.{name}" if container else name
                body = child.child_by_field_name("body")
                if body is not None:
                    self._walk(body, nested, outer)
            elif t in self.g.class_nodes:
                self._class(child, container, outer)

    def _package_name(self, node):
        name = node.child_by_field_name("name")
        if name is not None:
            return _text(self.src, name)
        for child in node.children:
            if child.type in ("scoped_identifier", "identifier", "qualified_name"):
                return _text(self.src, child)
        return ""

    def _import(self, node):
        text = _text(self.src, node).strip().rstrip(";").strip()
        words = text.split()
        while words and words[0] in ("import", "using", "static", "global"):
            words = words[1:]
        text = " ".join(words)
        if "=" in text:
            text = text.split("=", 1)[1]
        text = re.sub(r"\s+", "", text)
        if text:
            self.imports.append(ImportRecord(self.rel_path, text))

    def _class(self, node, container, outer):
        simple = _text(self.src, node.child_by_field_name("name"))
        path = (*outer, simple)
        prefix = f"{container}." if container else ""
        qualified = prefix + ".".join(path)
        fields: list[FieldRecord] = []
        signatures: list[str] = []
        nested = []
        body = node.child_by_field_name("body")
        members = list(body.children) if body is not None else []
        # Java enums keep their members inside enum_body_declarations.
        expanded = []
        for m in members:
            if m.type == "enum_body_declarations":
                expanded.extend(m.children)
            else:
                expanded.append(m)
        for m in expanded:
            t = m.type
            if t in self.g.method_nodes:
                rec = self._method(m, qualified)
                self.methods.append(rec)
                signatures.append(rec.signature_text)
            elif t in self.g.field_nodes:
                fields.extend(self._fields(m))
            elif t in self.g.property_nodes:
                fields.append(FieldRecord(
                    _text(self.src, m.child_by_field_name("name")),
                    _text(self.src, m.child_by_field_name("type")),
                    tuple(_modifier_words(self.src, m, self.lang)),
                ))
            elif t in self.g.enum_member_nodes:
                name = m.child_by_field_name("name")
                if name is None:
                    name = next(c for c in m.children if c.type == "identifier")
                fields.append(FieldRecord(_text(self.src, name), simple, ()))
            elif t in self.g.class_nodes:
                nested.append(m)
        self.classes.append(ClassRecord(
            simple_name=simple,
            qualified_name=qualified,
            container=container,
            fields=tuple(fields),
            method_signatures=tuple(signatures),
            file_path=self.rel_path,
            kind=self.g.class_nodes[node.type],
        ))
        for m in nested:
            self._class(m, container, path)

    def _fields(self, node):
        mods = tuple(_modifier_words(self.src, node, self.lang))
        decl_holder = node
        if self.lang == CSHARP:
            decl_holder = next((c for c in node.children if c.type == "variable_declaration"), node)
        type_node = decl_holder.child_by_field_name("type")
        ftype = _text(self.src, type_node) if type_node is not None else "?"
        out = []
        for c in decl_holder.children:
            if c.type == "variable_declarator":
                name = c.child_by_field_name("name")
                if name is None:
                    name = next(x for x in c.children if x.type == "identifier")
                dims = "".join(_text(self.src, x) for x in c.children if x.type == "dimensions")
                out.append(FieldRecord(_text(self.src, name), ftype + dims, mods))
        return out

    def _method(self, node, owner):
        src = self.src
        name = _text(src, node.child_by_field_name("name"))
        params_node = node.child_by_field_name("parameters")
        params = _parse_parameters(_text(src, params_node)) if params_node is not None else ()
        ret = node.child_by_field_name("type") or node.child_by_field_name("returns")
        return_type = _text(src, ret) if ret is not None else ""
        body = node.child_by_field_name("body")
        if body is None and self.lang == CSHARP:
            body = next((c for c in node.children if c.type == "arrow_expression_clause"), None)
        if body is not None:
            signature = src[node.start_byte:body.start_byte].decode("utf-8").rstrip()
            body_text = src[body.start_byte:node.end_byte].decode("utf-8")
        else:
            signature = _text(src, node).rstrip().rstrip(";").rstrip()
            body_text = ""
        return MethodRecord(
            owning_class=owner,
            name=name,
            signature_text=signature,
            parameters=params,
            return_type=return_type,
            body_text=body_text,
            file_path=self.rel_path,
            span=(node.start_point[0] + 1, node.end_point[0] + 1),
        )


def _excluded(rel: str, patterns) -> bool:
    return any(fnmatch.fnmatch(rel, p) for p in patterns)


def build_index(repo_root, language_tag: str, excludes=DEFAULT_EXCLUDES) -> RepoIndex:
    """Parse every source file of ``language_tag`` under ``repo_root``."""
    root = Path(repo_root)
    if language_tag not in LANGUAGES:
        raise ConfigurationError(f"unsupported language {language_tag!r}; expected one of {LANGUAGES}")
    if not root.is_dir():
        raise ConfigurationError(f"repository root {root} does not exist")
    parser = parser_for(language_tag)
    ext = _GRAMMARS[language_tag].extension

    classes: dict[str, list[ClassRecord]] = {}
    methods: dict[tuple[str, str], list[MethodRecord]] = {}
    imports: dict[str, tuple[ImportRecord, ...]] = {}
    files, diagnostics = [], []

    for path in sorted(root.rglob(f"*{ext}")):
        rel = path.relative_to(root).as_posix()
        if not path.is_file() or _excluded(rel, excludes):
            continue
        try:
            src = path.read_bytes()
            src.decode("utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            diagnostics.append(f"{rel}: unreadable ({exc})")
            continue
        tree = parser.parse(src)
        if tree.root_node.has_error:
            diagnostics.append(f"{rel}: syntax error, file skipped")
            log.warning("skipping %s: syntax error", rel)
            continue
        ex = _FileExtractor(language_tag, rel, src)
        ex.run(tree.root_node)
        files.append(rel)
        imports[rel] = tuple(ex.imports)
        for c in ex.classes:
            classes.setdefault(c.simple_name, []).append(c)
        for m in ex.methods:
            methods.setdefault((m.owning_class, m.name), []).append(m)

    if not files:
        raise EmptyIndexError(f"no parseable {ext} files under {root}")

    return RepoIndex(
        language_tag=language_tag,
        root=root,
        classes=MappingProxyType({k: tuple(v) for k, v in classes.items()}),
        methods=MappingProxyType({k: tuple(v) for k, v in methods.items()}),
        imports=MappingProxyType(imports),
        files=tuple(files),
        diagnostics=tuple(diagnostics),
    )


# ---------------------------------------------------------------- queries


def lookup_class(index: RepoIndex, class_name: str) -> list[ClassRecord]:
    """Resolve a class by qualified name, then simple name, then case-insensitively."""
    exact = [c for c in index.all_classes() if c.qualified_name == class_name]
    if exact:
        return exact
    if class_name in index.classes:
        return list(index.classes[class_name])
    folded = class_name.casefold()
    out = []
    for key in sorted(index.classes):
        if key.casefold() == folded:
            out.extend(index.classes[key])
    return out


def lookup_method(index: RepoIndex, class_name: str, method_name: str) -> list[MethodRecord]:
    out = []
    for cls in lookup_class(index, class_name):
        out.extend(index.methods.get((cls.qualified_name, method_name), ()))
    return out


def imports_of(index: RepoIndex, file_path) -> list[ImportRecord]:
    key = Path(file_path).as_posix() if not isinstance(file_path, str) else file_path
    return list(index.imports.get(key, ()))


def owning_class_of(index: RepoIndex, method: MethodRecord) -> ClassRecord | None:
    for cls in lookup_class(index, method.owning_class):
        if cls.qualified_name == method.owning_class:
            return cls
    return None


# ---------------------------------------------------------------- pairs

_METHOD_REF = re.compile(r"^(?P<cls>[\w.$]+)\.(?P<name>\w+)(?P<params>\(.*\))?$")


def _norm_type(t: str) -> str:
    return re.sub(r"\s+", "", t)


def resolve_method_ref(index: RepoIndex, ref: str) -> tuple[MethodRecord | None, str]:
    """Resolve ``pkg.Class.method`` or ``pkg.Class.method(T1,T2)``.

    Returns the record, or ``None`` plus a reason.
    """
    m = _METHOD_REF.match(ref.strip())
    if not m:
        return None, f"malformed method reference {ref!r}"
    candidates = lookup_method(index, m.group("cls"), m.group("name"))
    if m.group("params") is not None:
        wanted = [_norm_type(t) for t in _split_top_level(m.group("params")[1:-1])]
        candidates = [c for c in candidates if [_norm_type(t) for _, t in c.parameters] == wanted]
    if not candidates:
        return None, f"method {ref!r} not found"
    if len(candidates) > 1:
        return None, f"method {ref!r} is ambiguous ({len(candidates)} overloads); add parameter types"
    return candidates[0], ""


def parse_mapping(mapping_file) -> list[tuple[int, str, str, str]]:
    path = Path(mapping_file)
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3 or not all(p.strip() for p in parts):
            raise MappingParseError(path, lineno, "expected 3 tab-separated fields: source, target, test selector")
        rows.append((lineno, parts[0].strip(), parts[1].strip(), parts[2].strip()))
    return rows


def extract_pairs(source_index: RepoIndex, target_index: RepoIndex, mapping_file,
                  diagnostics: list | None = None) -> list[TranslationPair]:
    """Resolve every mapping triple into a :class:`TranslationPair`.

    Unresolvable triples are skipped; the reason is appended to ``diagnostics``.
    """
    if diagnostics is None:
        diagnostics = []
    pairs, seen = [], set()
    for lineno, src_ref, tgt_ref, selector in parse_mapping(mapping_file):
        src, why = resolve_method_ref(source_index, src_ref)
        if src is None:
            diagnostics.append(f"line {lineno}: source {why}")
            continue
        tgt, why = resolve_method_ref(target_index, tgt_ref)
        if tgt is None:
            diagnostics.append(f"line {lineno}: target {why}")
            continue
        if tgt_ref in seen:
            diagnostics.append(f"line {lineno}: duplicate pair id {tgt_ref!r}")
            continue
        seen.add(tgt_ref)
        pairs.append(TranslationPair(
            pair_id=tgt_ref,
            source_fn=src,
            target_signature=tgt.signature_text,
            target_ground_truth=tgt,
            test_selector=selector,
        ))
    for d in diagnostics:
        log.warning("pair extraction: %s", d)
    return pairs


# ---------------------------------------------------------------- persistence

INDEX_FORMAT_VERSION = 1


def save_index(index: RepoIndex, path):
    """Write the index as byte-stable JSON."""
    doc = {
        "format_version": INDEX_FORMAT_VERSION,
        "language_tag": index.language_tag,
        "root": str(index.root),
        "files": list(index.files),
        "diagnostics": list(index.diagnostics),
        "classes": [asdict(c) for c in index.all_classes()],
        "methods": [asdict(m) for m in index.all_methods()],
        "imports": {f: [i.imported_name for i in recs] for f, recs in sorted(index.imports.items())},
    }
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


def load_index(path) -> RepoIndex:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != INDEX_FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported index format version {doc.get('format_version')!r}")
    classes: dict[str, list[ClassRecord]] = {}
    for c in doc["classes"]:
        rec = ClassRecord(
            c["simple_name"], c["qualified_name"], c["container"],
            tuple(FieldRecord(f["name"], f["declared_type"], tuple(f["modifiers"])) for f in c["fields"]),
            tuple(c["method_signatures"]), c["file_path"], c["kind"],
        )
        classes.setdefault(rec.simple_name, []).append(rec)
    methods: dict[tuple[str, str], list[MethodRecord]] = {}
    for m in doc["methods"]:
        rec = MethodRecord(m["owning_class"], m["name"], m["signature_text"],
                           tuple(tuple(p) for p in m["parameters"]), m["return_type"], m["body_text"],
                           m["file_path"], tuple(m["span"]))
        methods.setdefault((rec.owning_class, rec.name), []).append(rec)
    return RepoIndex(
        language_tag=doc["language_tag"],
        root=Path(doc["root"]),
        classes=MappingProxyType({k: tuple(v) for k, v in classes.items()}),
        methods=MappingProxyType({k: tuple(v) for k, v in methods.items()}),
        imports=MappingProxyType({f: tuple(ImportRecord(f, n) for n in names)
                                  for f, names in doc["imports"].items()}),
        files=tuple(doc["files"]),
        diagnostics=tuple(doc["diagnostics"]),
    )
