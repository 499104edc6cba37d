"""Acceptance suite: one test per criterion, each printed in the summary."""

from __future__ import annotations

import csv
import itertools
import json
import math
import random
import time
from pathlib import Path

import pytest
from PIL import Image

import oracles
from conftest import make_grid
from collage_agent import cli
from collage_agent.critique import CritiqueAgent
from collage_agent.errors import DegenerateEmbedding, DimensionError, MalformedPlan
from collage_agent.metrics import (
    RelationMatrix,
    batch_evaluate,
    cka,
    join_grid,
    load_manifest,
    relation_matrix,
    score_reference_transfer,
    score_visual_quality,
    split_grid,
)
from collage_agent.metrics.rubric import RUBRIC_AXES
from collage_agent.pipeline import Pipeline, PipelineConfig, Providers, RunTrace
from collage_agent.plan_model import (
    FRAMEWORK_FIELDS,
    GateConfig,
    GridLayout,
    ProductInput,
    gate_passes,
    parse_plan_json,
)
from collage_agent.providers import (
    CannedChat,
    ContentScoringMockChat,
    EmbeddingProvider,
    MockChat,
    MockEmbedder,
    ScriptedChat,
    image_digest,
)


class TableEmbedder(EmbeddingProvider):
    """Returns a preassigned vector per image content."""

    def __init__(self, table: dict[str, list[float]], dimension: int):
        super().__init__(dimension)
        self.table = table

    def _embed(self, image):
        return self.table[image_digest(image)]


def random_unit(rng: random.Random, d: int) -> list[float]:
    return oracles.normalize([rng.gauss(0, 1) for _ in range(d)])


def tiny_images(n: int) -> list[Image.Image]:
    return [Image.new("RGB", (2, 2), (i, 255 - i, (7 * i) % 256)) for i in range(n)]


def embed_set(vectors):
    images = tiny_images(len(vectors))
    table = {image_digest(img): v for img, v in zip(images, vectors)}
    return images, TableEmbedder(table, len(vectors[0]))


def rm(rows) -> RelationMatrix:
    return RelationMatrix(tuple(tuple(r) for r in rows))


# -- 1 -------------------------------------------------------------------------


@pytest.mark.criterion(1, "CKA math suite matches the brute-force oracle")
def test_cka_math_suite():
    start = time.perf_counter()
    rng = random.Random(7)
    randoms = [rm(oracles.relation([random_unit(rng, 6) for _ in range(4)])) for _ in range(25)]

    for r in randoms:
        assert abs(cka(r, r) - 1.0) <= 1e-9
    for a, b in zip(randoms, randoms[1:]):
        assert abs(cka(a, b) - cka(b, a)) <= 1e-9
        for alpha in (1e-3, 0.5, 3.0, 1e3):
            assert abs(cka(a.scaled(alpha), b) - cka(a, b)) <= 1e-9
        for perm in itertools.permutations(range(4)):
            assert abs(cka(a.permuted(perm), b.permuted(perm)) - cka(a, b)) <= 1e-9

    e = {"x": [1.0, 0.0], "y": [0.0, 1.0]}
    r_a = rm(oracles.relation([e["x"], e["x"], e["y"], e["y"]]))  # pairs {1,2}{3,4}
    r_b = rm(oracles.relation([e["x"], e["y"], e["x"], e["y"]]))  # pairs {1,3}{2,4}
    assert abs(cka(r_a, r_b)) <= 1e-9

    s = math.sqrt(2) / 2
    r_c = rm(oracles.relation([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [s, s]]))
    assert abs(cka(r_a, r_c) - oracles.cka(r_a.to_list(), r_c.to_list())) <= 1e-9

    checked = 0
    for a, b in zip(randoms, reversed(randoms)):
        assert abs(cka(a, b) - oracles.cka(a.to_list(), b.to_list())) <= 1e-9
        checked += 1
    assert checked >= 20
    assert time.perf_counter() - start < 1.0


# -- 2 -------------------------------------------------------------------------


@pytest.mark.criterion(2, "relation matrix equals the dot-product oracle")
def test_relation_matrix_suite():
    start = time.perf_counter()
    rng = random.Random(11)
    for case in range(200):
        n = (3, 4, 9)[case % 3]
        vectors = [random_unit(rng, 5) for _ in range(n)]
        images, embedder = embed_set(vectors)
        r = relation_matrix(images, embedder)
        expected = oracles.relation(vectors)
        for i in range(n):
            assert abs(r.values[i][i] - 1.0) <= 1e-9
            for j in range(n):
                assert abs(r.values[i][j] - expected[i][j]) <= 1e-12
                assert r.values[i][j] == r.values[j][i]
        assert r.violations() == []

    images, embedder = embed_set([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    with pytest.raises(DegenerateEmbedding):
        relation_matrix(images, embedder)
    assert time.perf_counter() - start < 1.0


# -- 3 -------------------------------------------------------------------------


def _expected(script: tuple[str, ...], k: int):
    revisions = refinements = 0
    for outcome in script[:k]:
        if outcome == "pass":
            return revisions, refinements, "gates_passed"
        if outcome == "gate1_fail":
            revisions += 1
        else:
            refinements += 1
    return revisions, refinements, "budget_exhausted"


@pytest.mark.criterion(3, "gated loop state machine over all 27 critic scripts at K=3")
def test_state_machine_exhaustive(tmp_path, product):
    start = time.perf_counter()
    k = 3
    for i, script in enumerate(itertools.product(("gate1_fail", "gate2_fail", "pass"), repeat=k)):
        providers = Providers.mock(script=script)
        run_dir = tmp_path / f"run{i}"
        cfg = PipelineConfig(run_dir=run_dir, max_iterations=k, return_policy="last", normalize_timestamps=True)
        result = Pipeline(providers).run(product, cfg)
        trace = result.trace
        revisions, refinements, reason = _expected(script, k)

        assert len(providers.images.calls) == 1 + trace.count("revision") + trace.count("refinement")
        assert (trace.count("revision"), trace.count("refinement")) == (revisions, refinements)
        assert result.stop_reason == reason
        assert trace.check() == []
        assert max(e.iteration for e in trace.events) <= k
        assert trace.count("gate1") <= k

        for event in trace.events:
            n = event.iteration
            before = (run_dir / f"framework_iter{n - 1}.json").read_bytes() if n else b""
            after = (run_dir / f"framework_iter{n}.json").read_bytes() if n else b""
            if event.kind == "refinement":
                assert after == before
            elif event.kind == "revision":
                field = event.detail["suggestion"]["where"]
                assert field in FRAMEWORK_FIELDS
                old = parse_plan_json(before.decode(), "framework")
                new = parse_plan_json(after.decode(), "framework")
                assert getattr(old, field) != getattr(new, field)
    assert time.perf_counter() - start < 10.0


# -- 4 -------------------------------------------------------------------------


def _snapshot(run_dir: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(run_dir.iterdir()) if p.is_file()}


@pytest.mark.criterion(4, "end-to-end mock run: artifacts, determinism, zero-cost resume")
def test_end_to_end_mock_run(tmp_path, product):
    start = time.perf_counter()
    cfg = PipelineConfig(run_dir=tmp_path / "a", max_iterations=3, normalize_timestamps=True)
    result = Pipeline(Providers.mock()).run(product, cfg)
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0

    run_dir = tmp_path / "a"
    last = result.final_iteration
    for n in range(last + 1):
        for stem in ("framework", "plan", "prompts", "critique"):
            assert (run_dir / f"{stem}_iter{n}.json").is_file()
        assert Image.open(run_dir / f"collage_iter{n}.png").size == (1024, 1024)
    assert RunTrace.load(run_dir / "trace.json").check() == []

    Pipeline(Providers.mock()).run(product, PipelineConfig(run_dir=tmp_path / "b", max_iterations=3,
                                                          normalize_timestamps=True))
    assert _snapshot(run_dir) == _snapshot(tmp_path / "b")

    original = _snapshot(run_dir)
    trace = json.loads((run_dir / "trace.json").read_text())
    assert trace["events"][-1]["kind"] == "stop"
    trace["events"].pop()
    (run_dir / "trace.json").write_text(json.dumps(trace))
    fresh = Providers.mock()
    resumed = Pipeline(fresh).resume(run_dir, cfg)
    assert len(fresh.images.calls) == 0
    assert len(fresh.chat.calls) == 0
    assert resumed.stop_reason == result.stop_reason
    assert resumed.collage_path == result.collage_path
    assert _snapshot(run_dir) == original


# -- 5 -------------------------------------------------------------------------


@pytest.mark.criterion(5, "reference mode: transfer plan written once, roles cover the grid")
def test_reference_mode_transfer_written_once(tmp_path, product, monkeypatch):
    import collage_agent.pipeline as pipeline_mod

    writes = []
    real = pipeline_mod.atomic_write_text

    def spy(path, text):
        writes.append(Path(path).name)
        if Path(path).name == "transfer.json":
            snapshots.append(text)
        return real(path, text)

    snapshots: list[str] = []
    monkeypatch.setattr(pipeline_mod, "atomic_write_text", spy)
    ref = make_grid(GridLayout.of(2, 2), seed=3, panel=128)
    target = ProductInput(product.packshot, product.name, None, ref)
    cfg = PipelineConfig(run_dir=tmp_path / "ref", mode="reference", normalize_timestamps=True)
    result = Pipeline(Providers.mock()).run(target, cfg)

    assert writes.count("transfer.json") == 1
    assert result.trace.count("reference") == 1
    assert result.trace.events[0].kind == "reference"
    on_disk = (tmp_path / "ref" / "transfer.json").read_text()
    assert on_disk == snapshots[0]
    assert result.trace.count("generate") >= 2  # the default mock revises once
    transfer = parse_plan_json(on_disk, "transfer", layout=cfg.layout)
    assert transfer == result.state.transfer
    assert list(transfer.panel_roles) == list(cfg.layout.panel_order)
    assert list(transfer.panel_roles.values()) == [
        "context", "product essence", "usage/action", "benefit/mood wrap-up",
    ]


# -- 6 -------------------------------------------------------------------------


@pytest.mark.criterion(6, "gate arithmetic, gate-2 laziness, threshold monotonicity")
def test_gate_arithmetic(product, layout):
    scores = {"identity": 5, "usage": 3, "context": 4, "consumer": 5}
    assert not gate_passes(scores, 4, "min")
    assert gate_passes(scores, 3, "min")

    from collage_agent.ideation import IdeationAgent

    chat = ScriptedChat(["gate1_fail"])
    ideation = IdeationAgent(chat)
    framework = ideation.plan_what(product)
    plan = ideation.plan_how(product, framework, layout)
    collage = make_grid(layout, seed=1)
    report = CritiqueAgent(chat).critique(collage, product, framework, plan, GateConfig())
    assert not report.gate1_pass and report.photo is None
    assert chat.gate_calls["GATE2"] == 0
    assert chat.gate_calls["GATE1"] == 1

    rng = random.Random(5)
    dims = ("identity", "usage", "context", "consumer")
    for _ in range(1000):
        s = {d: rng.randint(0, 5) for d in dims}
        tau, lower = sorted((rng.randint(0, 5), rng.randint(0, 5)), reverse=True)
        rule = rng.choice(("min", "mean"))
        if gate_passes(s, tau, rule):
            assert gate_passes(s, lower, rule)
            bumped = dict(s)
            d = rng.choice(dims)
            bumped[d] = min(5, bumped[d] + 1)
            assert gate_passes(bumped, tau, rule)


# -- 7 -------------------------------------------------------------------------


def _rubric(**overrides):
    doc = json.loads(MockChat().fixture_text("visual_quality.json"))
    for dotted, value in overrides.items():
        axis, sub = dotted.split("__")
        if value is None:
            del doc[axis][sub]
        else:
            doc[axis][sub]["score"] = value
    return json.dumps(doc)


def _transfer(**overrides):
    doc = json.loads(MockChat().fixture_text("reference_transfer.json"))
    doc["per_position"] = {p: "strong" for p in GridLayout.of(2, 2).panel_order}
    doc.update(overrides)
    return json.dumps(doc)


@pytest.mark.criterion(7, "rubric harnesses reject bad scores, keys and verdicts via repair")
def test_rubric_schema_conformance(layout):
    collage = make_grid(layout, seed=2)
    good = _rubric()
    full = score_visual_quality(collage, MockChat(), layout)
    assert {a: set(s) for a, s in full.axes.items()} == {a: set(s) for a, s in RUBRIC_AXES.items()}

    for bad in (_rubric(aesthetics__color_harmony=7.5), _rubric(aesthetics__color_harmony=0),
                _rubric(aesthetics__color_harmony=11), _rubric(aesthetics__grid_balance=None)):
        chat = CannedChat([bad, good])
        turns: list = []
        scores = score_visual_quality(collage, chat, layout, turns=turns)
        assert len(turns) == 1
        assert scores.axes["aesthetics"]["grid_balance"][0] == 7
        with pytest.raises(MalformedPlan):
            score_visual_quality(collage, CannedChat([bad] * 3), layout)

    chat = CannedChat([_rubric(aesthetics__grid_balance=None), good])
    score_visual_quality(collage, chat, layout)
    assert "aesthetics.grid_balance" in chat.requests[1].text

    reference = make_grid(layout, seed=3)
    report = score_reference_transfer(reference, collage, MockChat(), layout)
    assert report.verdict == "pass" and set(report.per_position.values()) == {"strong"}
    with pytest.raises(MalformedPlan):
        score_reference_transfer(reference, collage, CannedChat([_transfer(verdict="maybe")] * 3), layout)
    partial = _transfer(per_position={"top_left": "strong", "top_right": "weak", "bottom_left": "partial"})
    with pytest.raises(MalformedPlan):
        score_reference_transfer(reference, collage, CannedChat([partial] * 3), layout)
    chat = CannedChat([partial, _transfer()])
    assert score_reference_transfer(reference, collage, chat, layout).verdict == "pass"
    assert "per_position missing bottom_right" in chat.requests[1].text


# -- 8 -------------------------------------------------------------------------


@pytest.mark.criterion(8, "split_grid is a lossless partition")
def test_split_grid_lossless():
    rng = random.Random(13)
    for (rows, cols), (w, h) in {(2, 2): (64, 48), (3, 3): (90, 60), (1, 3): (96, 32)}.items():
        layout = GridLayout.of(rows, cols)
        noise = bytes(rng.randrange(256) for _ in range(w * h * 3))
        img = Image.frombytes("RGB", (w, h), noise)
        panels = split_grid(img, layout)
        assert len(panels) == rows * cols
        assert {p.size for p in panels} == {(w // cols, h // rows)}
        assert join_grid(panels, layout).tobytes() == img.tobytes()
    for (rows, cols), size in {(2, 2): (1023, 1024), (3, 3): (90, 61), (1, 3): (95, 32)}.items():
        with pytest.raises(DimensionError):
            split_grid(Image.new("RGB", size), GridLayout.of(rows, cols))


# -- 9 -------------------------------------------------------------------------

EXPECTED_COLUMNS = [
    "group", "item",
    "aesthetics.composition_hierarchy", "aesthetics.lighting_rendering", "aesthetics.color_harmony",
    "aesthetics.grid_balance",
    "richness.function_coverage", "richness.information_density", "richness.product_relevance",
    "coherence.product_identity_consistency", "coherence.product_centric_narrative",
    "coherence.style_tone_consistency", "coherence.world_campaign_cohesion",
    "transfer.grid_plan", "transfer.narrative_logic", "transfer.product_fit", "transfer.verdict",
    "cka", "error",
]


def _write_manifest(tmp_path: Path, broken: bool) -> Path:
    layout = GridLayout.of(2, 2)
    items = []
    for i in range(3):
        make_grid(layout, seed=100 + i).save(tmp_path / f"c{i}.png")
        items.append({"item": f"c{i}", "mode": "creation", "collage": f"c{i}.png", "group": "creation"})
    for i in range(2):
        make_grid(layout, seed=200 + i).save(tmp_path / f"r{i}.png")
        make_grid(layout, seed=300 + i).save(tmp_path / f"r{i}_ref.png")
        items.append({"item": f"r{i}", "mode": "reference", "collage": f"r{i}.png",
                      "reference": f"r{i}_ref.png", "group": "reference"})
    if broken:
        items.append({"item": "broken", "mode": "creation", "collage": "does_not_exist.png", "group": "creation"})
    path = tmp_path / ("broken.json" if broken else "manifest.json")
    path.write_text(json.dumps(items))
    return path


@pytest.mark.criterion(9, "batch evaluation table: columns, exact group means, partial failure")
def test_batch_evaluation(tmp_path, capsys):
    manifest = _write_manifest(tmp_path, broken=False)
    out = tmp_path / "out"
    result = batch_evaluate(load_manifest(manifest), ContentScoringMockChat(), MockEmbedder(), out)
    assert result.failures == 0

    with open(out / "results.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == EXPECTED_COLUMNS
        rows = list(reader)
    items = [r for r in rows if r["item"] != "(mean)"]
    means = {r["group"]: r for r in rows if r["item"] == "(mean)"}
    assert len(items) == 5 and set(means) == {"creation", "reference"}
    numeric = [c for c in EXPECTED_COLUMNS if c not in ("group", "item", "transfer.verdict", "error")]
    for group, mean_row in means.items():
        members = [r for r in items if r["group"] == group]
        for col in numeric:
            values = [float(r[col]) for r in members if r[col] != ""]
            if not values:
                assert mean_row[col] == ""
                continue
            assert float(mean_row[col]) == sum(values) / len(values)
    for r in items:
        if r["group"] == "reference":
            assert 0.0 <= float(r["cka"]) <= 1.0
        else:
            assert r["cka"] == ""

    broken = _write_manifest(tmp_path, broken=True)
    code = cli.main(["evaluate", "--mock", "--manifest", str(broken), "--out", str(tmp_path / "out2")])
    assert code == 3
    with open(tmp_path / "out2" / "results.csv", newline="") as fh:
        rows2 = [r for r in csv.DictReader(fh) if r["item"] != "(mean)"]
    errors = {r["item"]: r["error"] for r in rows2}
    assert errors.pop("broken")
    assert set(errors) == {"c0", "c1", "c2", "r0", "r1"} and not any(errors.values())
    good = {r["item"]: r for r in items}
    for r in rows2:
        if r["item"] in good:
            assert {c: r[c] for c in EXPECTED_COLUMNS} == {c: good[r["item"]][c] for c in EXPECTED_COLUMNS}
