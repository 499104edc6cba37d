from __future__ import annotations

import csv
import json
import math
import shutil
from importlib import resources

import pytest
from PIL import Image

import oracles
from conftest import make_grid
from collage_agent.errors import DegenerateEmbedding, DegenerateStructure, MalformedPlan, PreconditionError, SchemaError
from collage_agent.metrics import (
    RelationMatrix,
    batch_evaluate,
    cka,
    grid_cka,
    load_external_scores,
    load_manifest,
    relation_matrix,
    score_reference_transfer,
    score_visual_quality,
    split_grid,
)
from collage_agent.metrics.rubric import (
    parse_rubric,
    reference_transfer_request,
    rubric_columns,
    visual_quality_request,
)
from collage_agent.plan_model import GridLayout
from collage_agent.providers import CannedChat, ContentScoringMockChat, MockChat, MockEmbedder

from test_acceptance import embed_set, rm


def test_split_examples():
    layout = GridLayout.of(2, 2)
    img = make_grid(layout, seed=1, panel=512)
    assert img.size == (1024, 1024)
    panels = split_grid(img, layout)
    assert [p.size for p in panels] == [(512, 512)] * 4
    assert panels[1].getpixel((0, 0)) == img.getpixel((512, 0))
    assert panels[2].getpixel((0, 0)) == img.getpixel((0, 512))
    strip = split_grid(Image.new("RGB", (1536, 512)), GridLayout.of(1, 3))
    assert [p.size for p in strip] == [(512, 512)] * 3


def test_relation_examples():
    images, embedder = embed_set([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    r = relation_matrix(images, embedder)
    assert r.to_list() == [[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]]
    same = [Image.new("RGB", (4, 4), (9, 9, 9))] * 4
    flat = [x for row in relation_matrix(same, MockEmbedder()).to_list() for x in row]
    assert flat == pytest.approx([1.0] * 16, abs=1e-12)
    with pytest.raises(PreconditionError):
        relation_matrix(same[:1], MockEmbedder())


def test_relation_rejects_zero_vector():
    images, embedder = embed_set([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(DegenerateEmbedding):
        relation_matrix(images, embedder)


def test_relation_matrix_invariants():
    assert RelationMatrix(((1.0, 0.5), (0.5, 1.0))).violations() == []
    assert RelationMatrix(((1.0, 0.5), (0.4, 1.0))).violations()
    assert RelationMatrix(((0.9, 0.0), (0.0, 1.0))).violations()


def test_cka_examples():
    ones = rm([[1.0] * 4] * 4)
    with pytest.raises(DegenerateStructure):
        cka(ones, ones)
    a = rm(oracles.relation([[1, 0], [1, 0], [0, 1], [0, 1]]))
    with pytest.raises(PreconditionError):
        cka(a, rm([[1.0, 0.0, 0.0]] * 3))
    s = math.sqrt(2) / 2
    c = rm(oracles.relation([[1, 0], [1, 0], [0, 1], [s, s]]))
    assert cka(a, c) == pytest.approx(oracles.cka(a.to_list(), c.to_list()), abs=1e-12)
    assert 0.0 < cka(a, c) < 1.0


def test_grid_cka_self_alignment():
    layout = GridLayout.of(2, 2)
    grid = make_grid(layout, seed=5)
    value, r_ref, r_gen = grid_cka(grid, grid, layout, MockEmbedder())
    assert value == pytest.approx(1.0, abs=1e-9)
    assert r_ref == r_gen


# -- rubric harnesses ------------------------------------------------------------


def test_visual_quality_fixture(layout):
    scores = score_visual_quality(make_grid(layout, seed=2), MockChat(), layout)
    flat = scores.flat()
    assert list(flat) == rubric_columns()
    assert len(flat) == 11
    assert all(isinstance(v, int) and 1 <= v <= 10 for v in flat.values())


def test_visual_quality_attaches_crops(layout):
    grid = make_grid(layout, seed=2)
    req = visual_quality_request(grid, layout)
    assert len(req.images) == 1 + layout.panel_count
    assert req.images[0] is grid


def test_transfer_request_attaches_whole_grids(layout):
    ref, gen = make_grid(layout, seed=1), make_grid(layout, seed=2)
    req = reference_transfer_request(ref, gen, layout)
    assert req.images == [ref, gen]
    assert "crop" in req.system_prompt.lower()


def test_rubric_rejects_unknown_subdimension():
    doc = json.loads(MockChat().fixture_text("visual_quality.json"))
    doc["aesthetics"]["sparkle"] = {"score": 5, "reason": "x"}
    with pytest.raises(SchemaError) as info:
        parse_rubric(json.dumps(doc))
    assert "sparkle" in str(info.value.report.violations)


def test_transfer_fixture(layout):
    report = score_reference_transfer(make_grid(layout, seed=1), make_grid(layout, seed=2), MockChat(), layout)
    assert report.verdict == "pass"
    assert report.per_position == {p: "strong" for p in layout.panel_order}
    assert report.flat()["transfer.verdict"] == "pass"


def test_transfer_product_absent_panel(tmp_path, layout):
    bundled = resources.files("collage_agent").joinpath("fixtures", "mock")
    for entry in bundled.iterdir():
        (tmp_path / entry.name).write_bytes(entry.read_bytes())
    shutil.copy(tmp_path / "reference_transfer_absent_panel.json", tmp_path / "reference_transfer.json")
    report = score_reference_transfer(make_grid(layout, seed=1), make_grid(layout, seed=2),
                                      MockChat(tmp_path), layout)
    assert report.grid_plan < 8
    assert "product-absent" in report.reasons["grid_plan"]
    assert report.per_position["top_left"] == "weak"
    assert report.verdict == "borderline"


def test_transfer_bad_verdict(layout):
    doc = json.loads(MockChat().fixture_text("reference_transfer.json"))
    doc["per_position"] = {p: "strong" for p in layout.panel_order}
    doc["verdict"] = "maybe"
    with pytest.raises(MalformedPlan):
        score_reference_transfer(make_grid(layout, seed=1), make_grid(layout, seed=2),
                                 CannedChat([json.dumps(doc)] * 3), layout)


# -- batch -----------------------------------------------------------------------


def _items(tmp_path, n_creation=0, n_reference=0):
    layout = GridLayout.of(2, 2)
    records = []
    for i in range(n_creation):
        make_grid(layout, seed=i).save(tmp_path / f"c{i}.png")
        records.append({"item": f"c{i}", "mode": "creation", "collage": f"c{i}.png", "group": "creation"})
    for i in range(n_reference):
        make_grid(layout, seed=50 + i).save(tmp_path / f"r{i}.png")
        make_grid(layout, seed=60 + i).save(tmp_path / f"ref{i}.png")
        records.append({"item": f"r{i}", "mode": "reference", "collage": f"r{i}.png",
                        "reference": f"ref{i}.png", "group": "reference"})
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"items": records}))
    return load_manifest(path)


def test_batch_creation_only(tmp_path):
    result = batch_evaluate(_items(tmp_path, n_creation=3), ContentScoringMockChat(), None, tmp_path / "out")
    assert len(result.rows) == 3 and len(result.means) == 1
    assert "cka" not in result.columns and "transfer.verdict" not in result.columns
    for name in ("results.json", "results.csv", "results.md"):
        assert (tmp_path / "out" / name).is_file()
    assert result.means[0]["item"] == "(mean)"


def test_batch_reference_items_have_cka(tmp_path):
    result = batch_evaluate(_items(tmp_path, n_reference=2), ContentScoringMockChat(), MockEmbedder(),
                            tmp_path / "out", parallelism=1)
    assert result.failures == 0
    for row in result.rows:
        assert 0.0 <= row["cka"] <= 1.0


def test_batch_empty(tmp_path):
    path = tmp_path / "m.json"
    path.write_text("[]")
    result = batch_evaluate(load_manifest(path), MockChat(), None, tmp_path / "out")
    assert result.rows == [] and result.means == []
    with open(tmp_path / "out" / "results.csv") as fh:
        assert len(list(csv.reader(fh))) == 1


def test_batch_external_scores(tmp_path):
    items = _items(tmp_path, n_creation=2)
    sidecar = tmp_path / "ext.csv"
    sidecar.write_text("item,external_score\nc0,5.5\nc1,6.5\n")
    scores = load_external_scores(sidecar)
    result = batch_evaluate(items, ContentScoringMockChat(), None, tmp_path / "out", external_scores=scores)
    assert result.columns[-2:] == ["external_score", "error"]
    assert result.means[0]["external_score"] == 6.0
    as_json = tmp_path / "ext.json"
    as_json.write_text(json.dumps({"c0": 1}))
    assert load_external_scores(as_json) == {"c0": 1.0}


def test_batch_deterministic(tmp_path):
    items = _items(tmp_path, n_creation=2, n_reference=1)
    batch_evaluate(items, ContentScoringMockChat(), MockEmbedder(), tmp_path / "a", parallelism=3)
    batch_evaluate(items, ContentScoringMockChat(), MockEmbedder(), tmp_path / "b", parallelism=1)
    for name in ("results.json", "results.csv", "results.md"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_manifest_validation(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps([{"mode": "reference", "collage": "x.png"}]))
    with pytest.raises(PreconditionError):
        load_manifest(path)
    path.write_text(json.dumps([{"mode": "weird", "collage": "x.png"}]))
    with pytest.raises(PreconditionError):
        load_manifest(path)
    path.write_text("{oops")
    with pytest.raises(PreconditionError):
        load_manifest(path)
