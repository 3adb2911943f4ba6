import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import FIXTURES
from repotrans.evalkit import (exact_match, exact_match_rate, format_table, normalize_for_match,
                               summarize)

# Per-project function counts behind a published C#->Java benchmark table.  Sizes and
# compiled counts are reconstructed as round(rate * n); they sum to the 627
# functions / 363 compiled / 299 passed reported alongside it.
PUBLISHED = {
    # project: (n, compiled, passed, compile %, pass %)
    "lucene": (113, 56, 41, 49.56, 36.29),
    "poi": (229, 164, 134, 71.62, 58.52),
    "jgit": (134, 57, 48, 42.54, 35.82),
    "itext": (67, 41, 41, 61.19, 61.19),
    "quartz": (42, 31, 24, 73.81, 57.14),
    "rocketmq-clients": (42, 14, 11, 33.33, 26.19),
}


def synth(n, compiled, passed):
    return ([{"status": "passed"}] * passed + [{"status": "compiled_only"}] * (compiled - passed)
            + [{"status": "failed"}] * (n - compiled))


def published_groups():
    return {p: synth(n, c, s) for p, (n, c, s, _, _) in PUBLISHED.items()}


def test_reconstructed_counts_match_reported_totals():
    assert sum(v[0] for v in PUBLISHED.values()) == 627
    assert sum(v[1] for v in PUBLISHED.values()) == 363
    assert sum(v[2] for v in PUBLISHED.values()) == 299


def test_per_project_rates_match_table():
    s = summarize(published_groups())
    for p, (_, _, _, cr, pr) in PUBLISHED.items():
        # lucene's 41/113 is 36.283%, which the table prints as 36.29%
        assert 100 * s.per_project[p].compile_rate == pytest.approx(cr, abs=0.01)
        assert 100 * s.per_project[p].pass_rate == pytest.approx(pr, abs=0.01)


def test_published_macro_and_micro():
    s = summarize(published_groups())
    assert 100 * s.macro_compile_rate == pytest.approx(55.34, abs=0.01)
    assert 100 * s.macro_pass_rate == pytest.approx(45.84, abs=0.05)  # published rounding
    assert 100 * s.micro_compile_rate == pytest.approx(57.89, abs=0.01)
    assert s.micro_compile_rate == 363 / 627


def test_trivial_and_degenerate_groups():
    s = summarize({"a": synth(4, 0, 0)})
    assert (s.macro_compile_rate, s.macro_pass_rate, s.micro_compile_rate) == (0, 0, 0)
    s = summarize({"a": synth(2, 1, 1), "empty": []})
    assert "empty" not in s.per_project and s.diagnostics
    with pytest.raises(ValueError):
        summarize({})


@given(st.lists(st.tuples(st.integers(1, 30), st.integers(0, 30), st.integers(0, 30)), min_size=1, max_size=6))
def test_summary_invariants(specs):
    groups = {}
    for k, (n, a, b) in enumerate(specs):
        compiled = min(a, n)
        groups[f"p{k}"] = synth(n, compiled, min(b, compiled))
    s = summarize(groups)
    for st_ in s.per_project.values():
        assert st_.passed <= st_.compiled <= st_.n and st_.pass_rate <= st_.compile_rate
    assert s.macro_pass_rate <= s.macro_compile_rate + 1e-12
    assert s.micro_pass_rate <= s.micro_compile_rate
    if len({len(g) for g in groups.values()}) == 1:
        assert s.macro_compile_rate == pytest.approx(s.micro_compile_rate)


def test_eval_fixture_hand_counted():
    docs = [json.loads(p.read_text()) for p in sorted((FIXTURES / "eval_results").glob("*.json"))]
    groups = {}
    for d in docs:
        groups.setdefault(d["project"], []).append(d)
    s = summarize(groups)
    # alpha: 6 results, 3 passed + 1 compiled_only; beta: 4 results, 1 passed + 2 compiled_only
    assert s.macro_compile_rate == pytest.approx((4 / 6 + 3 / 4) / 2)
    assert s.macro_pass_rate == pytest.approx((3 / 6 + 1 / 4) / 2)
    assert (s.micro_compile_rate, s.micro_pass_rate) == (0.7, 0.4)
    assert exact_match_rate((d["final_code"], d["ground_truth"]) for d in docs) == 0.2
    assert "macro average" in format_table(s)


JAVA = "public int width() {\n    return end - start + 1;\n}"


def test_normalize_examples():
    variant = "public int width()   {\n\n    // inclusive\n    return end - start /* both ends */ + 1;\n}\n"
    assert normalize_for_match(JAVA) == normalize_for_match(variant) == "public int width() { return end - start + 1; }"
    assert not exact_match(JAVA, JAVA.replace("start", "begin"))
    assert not exact_match(JAVA, JAVA.replace("+ 1", "- 1"))  # one-token change
    assert normalize_for_match('s = "a  // b";') == 's = "a  // b";'
    assert normalize_for_match("s = @\"x \"\"//\"\" y\";", "csharp") == "s = @\"x \"\"//\"\" y\";"
    assert exact_match_rate([]) == 0.0


code_text = st.lists(st.sampled_from(list("ab{}();=+-*/\"'\\ \n\t@") + ["//", "/*", "*/"]),
                     max_size=40).map("".join)


@given(code_text, st.sampled_from(["java", "csharp"]))
def test_normalize_idempotent(text, lang):
    once = normalize_for_match(text, lang)
    assert normalize_for_match(once, lang) == once


@given(st.lists(st.sampled_from(["int", "x", "=", "1", ";", "{", "}", "return"]), min_size=1, max_size=12),
       st.lists(st.sampled_from([" ", "\n", "\t", "  ", " /* c */ ", " // c\n"]), min_size=12, max_size=12))
def test_whitespace_and_comment_variants_match(tokens, seps):
    plain = " ".join(tokens)
    noisy = "".join(t + s for t, s in zip(tokens, seps))
    assert exact_match(plain, noisy)
