from __future__ import annotations

import json
from pathlib import Path

import pytest
from filelock import FileLock

from collage_agent.errors import CorruptRun, FatalError, IoError, PreconditionError, TransportError
from collage_agent.pipeline import (
    LOCK_FILE,
    Pipeline,
    PipelineConfig,
    Providers,
    RunTrace,
    persist_state,
)
from collage_agent.plan_model import GridLayout, serialize
from collage_agent.providers import MockImageGenerator
from collage_agent.providers.mock import ScriptedChat


def config(run_dir: Path, **kw) -> PipelineConfig:
    kw.setdefault("normalize_timestamps", True)
    return PipelineConfig(run_dir=run_dir, **kw)


def scripted(*script: str) -> Providers:
    return Providers.mock(script=script)


def kinds(trace: RunTrace) -> list[str]:
    return [f"{e.kind}@{e.iteration}" for e in trace.events]


def truncate_after(run_dir: Path, kind: str, iteration: int) -> None:
    path = run_dir / "trace.json"
    data = json.loads(path.read_text())
    events = data["events"]
    cut = next(i for i, e in enumerate(events) if e["kind"] == kind and e["iteration"] == iteration)
    data["events"] = events[: cut + 1]
    path.write_text(json.dumps(data))


def test_revision_then_pass(tmp_path, product):
    providers = scripted("gate1_fail", "pass")
    result = Pipeline(providers).run(product, config(tmp_path))
    assert result.trace.count("revision") == 1
    assert result.trace.count("generate") == 2
    assert result.stop_reason == "gates_passed"
    assert result.final_iteration == 1
    assert kinds(result.trace) == [
        "stage1@0", "stage2@0", "stage3@0", "generate@0", "gate1@0",
        "revision@1", "stage1@1", "stage2@1", "stage3@1", "generate@1",
        "gate1@1", "gate2@1", "stop@1",
    ]


def test_immediate_pass(tmp_path, product):
    providers = scripted("pass")
    result = Pipeline(providers).run(product, config(tmp_path))
    assert result.trace.count("generate") == 1
    assert result.stop_reason == "gates_passed"
    assert result.collage_path == tmp_path / "collage_iter0.png"
    assert len(providers.images.calls) == 1


def test_refinement_every_iteration(tmp_path, product):
    k = 3
    result = Pipeline(scripted(*["gate2_fail"] * k)).run(product, config(tmp_path, max_iterations=k,
                                                                          return_policy="last"))
    assert result.trace.count("refinement") == k
    assert result.stop_reason == "budget_exhausted"
    frameworks = {(tmp_path / f"framework_iter{n}.json").read_bytes() for n in range(k + 1)}
    assert len(frameworks) == 1
    plans = [(tmp_path / f"plan_iter{n}.json").read_bytes() for n in range(k + 1)]
    assert len(set(plans)) == k + 1
    assert result.final_iteration == k


def test_best_policy_prefers_gate1_pass(tmp_path, product):
    script = ("gate2_fail", "gate1_fail", "gate1_fail", "gate1_fail")
    result = Pipeline(scripted(*script)).run(product, config(tmp_path, return_policy="best"))
    assert result.stop_reason == "budget_exhausted"
    assert result.final_iteration == 0
    assert result.collage_path.name == "collage_iter0.png"
    assert (tmp_path / "critique_iter3.json").exists()


def test_last_policy_returns_latest(tmp_path, product):
    script = ("gate2_fail", "gate1_fail", "gate1_fail")
    result = Pipeline(scripted(*script)).run(product, config(tmp_path, return_policy="last"))
    assert result.final_iteration == 3
    assert not (tmp_path / "critique_iter3.json").exists()


def test_two_iteration_directory_listing(tmp_path, product):
    Pipeline(scripted("gate1_fail", "pass")).run(product, config(tmp_path))
    names = sorted(p.name for p in tmp_path.iterdir())
    artifacts = [n for n in names if n.endswith(".json") and "_iter" in n]
    assert len(artifacts) == 10
    for n in range(2):
        for stem in ("framework", "plan", "prompts", "generation", "critique"):
            assert f"{stem}_iter{n}.json" in artifacts
            json.loads((tmp_path / f"{stem}_iter{n}.json").read_text())
    assert [n for n in names if n.startswith("collage_")] == ["collage_iter0.png", "collage_iter1.png"]
    assert "trace.json" in names
    assert LOCK_FILE not in names


def test_persist_state_idempotent(tmp_path, product):
    result = Pipeline(scripted("pass")).run(product, config(tmp_path))
    before = {p.name: (p.read_bytes(), p.stat().st_mtime_ns) for p in tmp_path.iterdir()}
    persist_state(result.state, tmp_path, result.trace)
    after = {p.name: (p.read_bytes(), p.stat().st_mtime_ns) for p in tmp_path.iterdir()}
    assert before == after


def test_persist_state_io_error(tmp_path, product):
    result = Pipeline(scripted("pass")).run(product, config(tmp_path / "run"))
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    with pytest.raises(IoError):
        persist_state(result.state, blocker / "sub")


def test_run_dir_uncreatable(tmp_path, product):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoError):
        Pipeline(scripted("pass")).run(product, config(blocker / "run"))


def test_resume_after_gate1_failure(tmp_path, product):
    Pipeline(scripted("gate1_fail", "pass")).run(product, config(tmp_path))
    iter0 = (tmp_path / "collage_iter0.png").read_bytes()
    truncate_after(tmp_path, "gate1", 0)
    fresh = scripted("pass")
    result = Pipeline(fresh).resume(tmp_path, config(tmp_path))
    assert len(fresh.images.calls) == 1
    assert result.trace.count("revision") == 1
    assert result.stop_reason == "gates_passed"
    assert (tmp_path / "collage_iter0.png").read_bytes() == iter0


def test_resume_missing_collage(tmp_path, product):
    Pipeline(scripted("pass")).run(product, config(tmp_path))
    (tmp_path / "collage_iter0.png").unlink()
    with pytest.raises(CorruptRun):
        Pipeline(scripted("pass")).resume(tmp_path, config(tmp_path))


def test_resume_tampered_artifact(tmp_path, product):
    Pipeline(scripted("pass")).run(product, config(tmp_path))
    path = tmp_path / "plan_iter0.json"
    path.write_text(path.read_text() + " ")
    with pytest.raises(CorruptRun):
        Pipeline(scripted("pass")).resume(tmp_path, config(tmp_path))


def test_resume_without_trace(tmp_path):
    with pytest.raises(CorruptRun):
        Pipeline(scripted("pass")).resume(tmp_path, config(tmp_path))
    (tmp_path / "trace.json").write_text("{not json")
    with pytest.raises(CorruptRun):
        Pipeline(scripted("pass")).resume(tmp_path, config(tmp_path))


def test_resume_completed_run_is_free(tmp_path, product):
    first = Pipeline(scripted("gate1_fail", "pass")).run(product, config(tmp_path))
    fresh = scripted()
    again = Pipeline(fresh).resume(tmp_path, config(tmp_path))
    assert fresh.chat.calls == [] and fresh.images.calls == []
    assert again.collage_path == first.collage_path
    assert kinds(again.trace) == kinds(first.trace)


def test_rerun_into_used_dir(tmp_path, product):
    Pipeline(scripted("pass")).run(product, config(tmp_path))
    with pytest.raises(PreconditionError):
        Pipeline(scripted("pass")).run(product, config(tmp_path))


def test_lock_contention(tmp_path, product):
    held = FileLock(str(tmp_path / LOCK_FILE))
    with held:
        with pytest.raises(IoError):
            Pipeline(scripted("pass")).run(product, config(tmp_path))
    Pipeline(scripted("pass")).run(product, config(tmp_path))


def test_reference_mode_needs_reference(tmp_path, product):
    with pytest.raises(PreconditionError):
        Pipeline(scripted("pass")).run(product, config(tmp_path, mode="reference"))


def test_config_checks(tmp_path):
    with pytest.raises(PreconditionError):
        config(tmp_path, max_iterations=0).check()
    with pytest.raises(PreconditionError):
        config(tmp_path, return_policy="first").check()


class FlakyImages(MockImageGenerator):
    def __init__(self, fail_on: int):
        super().__init__()
        self.fail_on = fail_on
        self.attempts = 0

    def _generate(self, request):
        self.attempts += 1
        if self.attempts == self.fail_on:
            raise TransportError("image service down")
        return super()._generate(request)


def test_fatal_error_then_resume(tmp_path, product):
    providers = Providers(ScriptedChat(["gate1_fail", "pass"]), FlakyImages(fail_on=2))
    with pytest.raises(FatalError):
        Pipeline(providers).run(product, config(tmp_path))
    trace = RunTrace.load(tmp_path / "trace.json")
    assert trace.stop_reason == "fatal_error"
    assert trace.check() == []

    fresh = scripted("pass")
    result = Pipeline(fresh).resume(tmp_path, config(tmp_path))
    assert result.stop_reason == "gates_passed"
    assert len(fresh.images.calls) == 1
    assert result.trace.count("stop") == 1


def test_trace_events_ordered(tmp_path, product):
    result = Pipeline(scripted("gate2_fail", "pass")).run(product, config(tmp_path))
    trace = RunTrace.load(tmp_path / "trace.json")
    assert trace.check() == []
    assert [e.timestamp for e in trace.events] == [float(i) for i in range(len(trace.events))]
    stop = trace.events[-1].detail
    assert stop["call_totals"]["image"] == 2
    assert result.trace.count("refinement") == 1


def test_trace_check_flags_problems():
    assert "trace does not end with stop" in RunTrace().check()


def test_state_matches_disk(tmp_path, product):
    result = Pipeline(scripted("pass")).run(product, config(tmp_path, layout=GridLayout.of(1, 3)))
    assert (tmp_path / "plan_iter0.json").read_text() == serialize(result.state.plan)
    assert len(result.state.prompt_set.prompts) == 3
