import json

import pytest

from conftest import CORPUS, STUB_CONFIG
from repotrans.errors import ConfigurationError, InfrastructureError
from repotrans.llm_gateway import OfflineBackend
from repotrans.pipeline import Pipeline, RunConfig, result_filename

BASE = {"source_repo": "source_cs", "target_repo": "target_java", "mapping_file": "mapping.tsv",
        "backend": "offline"}


def test_from_dict_resolves_relative_paths():
    cfg = RunConfig.from_dict(BASE, CORPUS)
    assert cfg.source_repo == CORPUS / "source_cs" and cfg.languages == ("csharp", "java")
    assert cfg.project_name == "target_java"


@pytest.mark.parametrize("bad", [
    {"direction": "java->python"}, {"backend": "magic"}, {"backend": "scripted"}, {"backend": "replay"},
    {"max_refine_iter": 0}, {"slots": 0}, {"surprise": 1},
])
def test_config_validation(bad):
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({**BASE, **bad}, CORPUS)


def test_overrides_ignore_none():
    cfg = RunConfig.from_file(STUB_CONFIG, {"no_rag": None, "max_refine_iter": 2})
    assert cfg.no_rag is False and cfg.max_refine_iter == 2 and cfg.backend == "scripted"
    assert cfg.script == CORPUS / "script.json"


def test_result_filenames_distinguish_overloads():
    a = result_filename("org.toy.cells.util.MathUtil.add(int,int)")
    b = result_filename("org.toy.cells.util.MathUtil.add(int,int,int)")
    assert a != b and a.endswith(".json") and "/" not in a and "(" not in a


class BrokenHarness:
    def evaluate(self, *args):
        raise InfrastructureError("sandbox unavailable")


def test_offline_pipeline_runs_heuristics(tmp_path):
    cfg = RunConfig.from_dict({**BASE, "out_dir": str(tmp_path)}, CORPUS)
    pipe = Pipeline(cfg, harness=BrokenHarness())
    res = pipe.translate(pipe.select(["org.toy.cells.CellHelper.totalCount"])[0])
    # offline: heuristic says use RAG, filter keeps all, context aborts, refine cannot chat
    assert res.status == "failed" and res.trace["rag"]["use_rag"]
    assert res.stats["store_queries"] == 2 and res.trace["rag"]["retained"]
    assert any("TransportError" in d for d in res.diagnostics)
    summary = pipe.write_results([res], tmp_path)
    assert summary == {"total": 1, "passed": 0, "statuses": {res.pair_id: "failed"}}
    assert json.loads(next((tmp_path / "results").glob("*.json")).read_text())["status"] == "failed"


def test_infrastructure_error_fails_one_pair(tmp_path):
    cfg = RunConfig.from_file(STUB_CONFIG, {"out_dir": tmp_path})
    pipe = Pipeline(cfg, harness=BrokenHarness())
    results = pipe.translate_many(pipe.select(["org.toy.cells.Range.width", "org.toy.cells.CellAddress.isValid"]))
    assert [r.status for r in results] == ["failed", "failed"]
    assert all(any("sandbox unavailable" in d for d in r.diagnostics) for r in results)
    with pytest.raises(ConfigurationError):
        pipe.select(["nope"])
