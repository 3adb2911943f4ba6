from pathlib import Path

import pytest

from repotrans.errors import ConfigurationError, EmptyIndexError, MappingParseError
from repotrans.repo_index import (build_index, extract_pairs, imports_of, load_index, lookup_class,
                                  lookup_method, parse_mapping, resolve_method_ref, save_index)

from conftest import MAPPING, SOURCE, TARGET

HELPER = "src/main/java/org/toy/cells/CellHelper.java"


def test_cellhelper_class_golden(target_index):
    # read off CellHelper.java by hand: 2 fields, 3 methods
    [cls] = lookup_class(target_index, "CellHelper")
    assert cls.qualified_name == "org.toy.cells.CellHelper"
    assert cls.container == "org.toy.cells"
    assert cls.kind == "class"
    assert [(f.name, f.declared_type, f.modifiers) for f in cls.fields] == [
        ("counts", "Map<String, Integer>", ("private", "final")),
        ("total", "int", ("private",)),
    ]
    assert cls.method_signatures == (
        "public void recordCell(String key)",
        "public int collectCount(String key)",
        "public int totalCount(CellPropertyType type)",
    )
    methods = [m for m in target_index.all_methods() if m.file_path == HELPER]
    assert len(methods) == 3


def test_empty_directory_is_an_error(tmp_path):
    with pytest.raises(EmptyIndexError):
        build_index(tmp_path, "java")


def test_missing_root_and_bad_language(tmp_path):
    with pytest.raises(ConfigurationError):
        build_index(tmp_path / "nope", "java")
    with pytest.raises(ConfigurationError):
        build_index(TARGET, "cobol")


def test_same_simple_name_in_two_packages(target_index):
    assert sorted(c.qualified_name for c in target_index.classes["Range"]) == [
        "org.toy.cells.Range", "org.toy.cells.util.Range"]


def test_lookup_class_tiers(target_index):
    assert [c.qualified_name for c in lookup_class(target_index, "CellHelper")] == ["org.toy.cells.CellHelper"]
    assert lookup_class(target_index, "NoSuchClass") == []
    assert lookup_class(target_index, "cellhelper") == lookup_class(target_index, "CellHelper")
    # qualified tier wins over the ambiguous simple-name tier
    assert [c.qualified_name for c in lookup_class(target_index, "org.toy.cells.util.Range")] == [
        "org.toy.cells.util.Range"]


def test_lookup_method(target_index):
    [m] = lookup_method(target_index, "CellHelper", "collectCount")
    assert m.body_text == "{\n        // number of times the key was recorded\n        return counts.getOrDefault(key, 0);\n    }"
    assert m.parameters == (("key", "String"),)
    assert m.return_type == "int"
    assert lookup_method(target_index, "CellHelper", "calculateCount") == []
    overloads = lookup_method(target_index, "MathUtil", "add")
    assert [len(o.parameters) for o in overloads] == [2, 3]


def test_imports(target_index):
    assert [i.imported_name for i in imports_of(target_index, HELPER)] == [
        "java.util.HashMap", "java.util.Map", "org.toy.cells.util.CellPropertyType"]
    assert imports_of(target_index, "src/main/java/org/toy/cells/CellAddress.java") == []
    assert imports_of(target_index, "nope.java") == []


def test_csharp_index(source_index):
    [cls] = lookup_class(source_index, "CellAddress")
    assert cls.qualified_name == "Toy.Cells.CellAddress"
    [m] = lookup_method(source_index, "Toy.Cells.CellAddress", "FormatAddress")
    assert m.signature_text == "public string FormatAddress()"
    assert [i.imported_name for i in imports_of(source_index, "src/Toy.Cells/CellHelper.cs")] == [
        "System", "System.Collections.Generic", "Toy.Cells.Util"]


def test_span_fidelity(target_index, source_index):
    for index in (target_index, source_index):
        for m in index.all_methods():
            lines = (index.root / m.file_path).read_text().splitlines()
            region = "\n".join(lines[m.span[0] - 1:m.span[1]])
            assert m.span[0] <= m.span[1]
            pos = region.find(m.signature_text)
            assert pos >= 0 and region.find(m.body_text, pos + len(m.signature_text)) >= 0


def test_closure_and_determinism(target_index):
    for m in target_index.all_methods():
        assert any(c.qualified_name == m.owning_class for c in lookup_class(target_index, m.owning_class))
    assert build_index(TARGET, "java") == target_index


def test_index_round_trip(tmp_path, target_index):
    save_index(target_index, tmp_path / "i.json")
    assert load_index(tmp_path / "i.json") == target_index


def test_syntax_error_file_is_skipped(tmp_path):
    (tmp_path / "Good.java").write_text("class Good { int f() { return 1; } }\n")
    (tmp_path / "Bad.java").write_text("class Bad { int f( { }\n")
    idx = build_index(tmp_path, "java")
    assert idx.files == ("Good.java",)
    assert any("Bad.java" in d for d in idx.diagnostics)


def test_excluded_build_dirs(tmp_path):
    (tmp_path / "A.java").write_text("class A {}\n")
    (tmp_path / "build").mkdir()
    (tmp_path / "build" / "B.java").write_text("class B {}\n")
    assert build_index(tmp_path, "java").files == ("A.java",)


def test_extract_pairs_fixture(pairs):
    assert len(pairs) == 10
    assert len({p.pair_id for p in pairs}) == 10
    p = pairs[0]
    assert p.pair_id == "org.toy.cells.CellHelper.recordCell"
    assert p.source_fn.name == "RecordCell"
    assert p.target_signature == "public void recordCell(String key)"
    assert p.test_selector == "org.toy.cells.CellHelperTest#testRecordCell"


def test_extract_pairs_skips_unresolvable(tmp_path, source_index, target_index):
    m = tmp_path / "m.tsv"
    m.write_text("# c\nToy.Cells.Range.Width\torg.toy.cells.Range.height\tx#y\n"
                 "Toy.Cells.Range.Width\torg.toy.cells.Range.width\torg.toy.cells.RangeTest#testWidth\n")
    diags = []
    out = extract_pairs(source_index, target_index, m, diags)
    assert [p.pair_id for p in out] == ["org.toy.cells.Range.width"]
    assert len(diags) == 1 and "line 2" in diags[0]
    m.write_text("")
    assert extract_pairs(source_index, target_index, m) == []


def test_malformed_mapping_reports_line(tmp_path):
    m = tmp_path / "m.tsv"
    m.write_text("a\tb\tc\nonly-two\tfields\n")
    with pytest.raises(MappingParseError) as e:
        parse_mapping(m)
    assert e.value.lineno == 2


def test_resolve_method_ref_ambiguity(target_index):
    rec, why = resolve_method_ref(target_index, "org.toy.cells.util.MathUtil.add")
    assert rec is None and "ambiguous" in why
    rec, _ = resolve_method_ref(target_index, "org.toy.cells.util.MathUtil.add(int, int, int)")
    assert rec.ref == "org.toy.cells.util.MathUtil.add(int,int,int)"
