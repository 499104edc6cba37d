"""Deterministic offline providers.

Every mock is a pure function of its request content, so pipeline runs
with mocks are reproducible byte for byte. The chat mock dispatches on the
``[[MARKER]]`` of the system prompt and answers from the golden transcripts
in ``fixtures/mock``; revision and refinement turns echo the prior plan with
only the targeted fields changed.
"""

from __future__ import annotations

import copy
import hashlib
import json
import random
from importlib import resources
from pathlib import Path
from typing import Iterable

from PIL import Image, ImageStat

from ..plan_model import DIM_TO_FIELD, FRAMEWORK_FIELDS, SHOT_SCALES
from ..templates import marker, read_section
from .base import ChatProvider, ChatRequest, EmbeddingProvider, ImageGenRequest, ImageProvider

PANEL_PREFIX = "PANEL "


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False)


def _load_json(text: str | None, default=None):
    if text is None:
        return default
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return default


def _substitute(obj, token: str, value: str):
    if isinstance(obj, str):
        return obj.replace(token, value)
    if isinstance(obj, dict):
        return {k: _substitute(v, token, value) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_substitute(v, token, value) for v in obj]
    return obj


def _positions(layout_text: str | None) -> list[str]:
    layout = _load_json(layout_text, {}) or {}
    return list(layout.get("panel_order") or ["top_left", "top_right", "bottom_left", "bottom_right"])


def _spread(template: dict, positions: list[str]) -> dict:
    """Map fixture panels (keyed by 2x2 positions) onto any position list."""
    source = list(template.values())
    out = {}
    for i, pos in enumerate(positions):
        panel = copy.deepcopy(source[i % len(source)])
        if "shot_scale" in panel:
            panel["shot_scale"] = SHOT_SCALES[i % len(SHOT_SCALES)] if len(positions) != 4 else panel["shot_scale"]
        out[pos] = panel
    return out


class MockChat(ChatProvider):
    name = "mock-chat"

    def __init__(self, fixtures_dir: str | Path | None = None):
        super().__init__()
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir is not None else None

    # -- fixtures ---------------------------------------------------------
    def fixture_text(self, name: str) -> str:
        if self.fixtures_dir is not None:
            return (self.fixtures_dir / name).read_text(encoding="utf-8")
        return resources.files("collage_agent").joinpath("fixtures", "mock", name).read_text(encoding="utf-8")

    def fixture(self, name: str):
        return json.loads(self.fixture_text(name))

    # -- dispatch ---------------------------------------------------------
    def _complete(self, request: ChatRequest) -> str:
        return self.respond(marker(request.system_prompt) or "", request.system_prompt, request.text)

    def respond(self, tag: str, system: str, text: str) -> str:
        handler = getattr(self, f"_on_{tag.lower()}", None)
        if handler is None:
            return "I can only answer scripted pipeline requests."
        return handler(system, text)

    def _on_stage1(self, system: str, text: str) -> str:
        prior = _load_json(read_section(text, "PRIOR_FRAMEWORK"))
        revision = _load_json(read_section(text, "REVISION"))
        if prior and revision:
            out = dict(prior)
            note = f" Revised: {revision.get('how', '').strip()}."
            target = revision.get("where", "")
            if target in FRAMEWORK_FIELDS and target != "narrative_framework":
                out[target] = str(out.get(target, "")) + note
            out["narrative_framework"] = str(out.get("narrative_framework", "")) + note
            return _dump(out)
        name = (read_section(text, "PRODUCT_NAME") or "the product").strip()
        return _dump(_substitute(self.fixture("stage1.json"), "$product_name", name))

    def _on_stage2(self, system: str, text: str) -> str:
        prior = _load_json(read_section(text, "PRIOR_PLAN"))
        refinement = _load_json(read_section(text, "REFINEMENT"))
        if prior and refinement:
            out = {"panels": prior.get("panels", {}), "global_visual_style": dict(prior.get("global_visual_style", {}))}
            note = f" Refined: {refinement.get('how', '').strip()}."
            where = refinement.get("where", "global")
            if where in out["panels"]:
                panel = dict(out["panels"][where])
                panel["spatial_composition"] = str(panel.get("spatial_composition", "")) + note
                out["panels"] = {**out["panels"], where: panel}
            else:
                style = out["global_visual_style"]
                style["lighting"] = str(style.get("lighting", "")) + note
            return _dump(out)
        positions = _positions(read_section(text, "LAYOUT"))
        base = self.fixture("stage2_2x2.json")
        panels = _spread(base["panels"], positions)
        transfer = _load_json(read_section(text, "TRANSFER"))
        if transfer:
            for pos, directive in (transfer.get("panel_directives") or {}).items():
                if pos in panels:
                    for key in ("shot_scale", "hero_presence", "hero_number"):
                        if key in directive:
                            panels[pos][key] = directive[key]
            if transfer.get("global_visual_style"):
                base["global_visual_style"]["lighting"] = transfer["global_visual_style"].get(
                    "lighting", base["global_visual_style"]["lighting"])
        return _dump({"panels": panels, "global_visual_style": base["global_visual_style"]})

    def _on_stage3(self, system: str, text: str) -> str:
        plan = _load_json(read_section(text, "PLAN"), {}) or {}
        name = (read_section(text, "PRODUCT_NAME") or "the product").strip()
        prompts = {}
        for pos, p in (plan.get("panels") or {}).items():
            prompts[pos] = (
                f"{p.get('shot_scale', 'medium')} shot of {name}: {p.get('subject_emphasis', '')} "
                f"{p.get('spatial_composition', '')} {p.get('interaction', '')}"
            ).strip()
        return _dump(prompts)

    def _on_repair(self, system: str, text: str) -> str:
        task = read_section(text, "TASK") or ""
        task_input = read_section(text, "TASK_INPUT") or ""
        inner = marker(task)
        if inner and inner != "REPAIR":
            return self.respond(inner, task, task_input)
        return read_section(text, "PREVIOUS_ANSWER") or ""

    def _on_reference_extract(self, system: str, text: str) -> str:
        positions = _positions(read_section(text, "LAYOUT"))
        base = self.fixture("reference_extract_2x2.json")
        if positions != list(base["panel_roles"]):
            roles = list(base["panel_roles"].values())
            base["panel_roles"] = {p: roles[i % len(roles)] for i, p in enumerate(positions)}
            base["panel_directives"] = _spread(base["panel_directives"], positions)
        return _dump(base)

    def _on_reference_adapt(self, system: str, text: str) -> str:
        name = (read_section(text, "PRODUCT_NAME") or "the product").strip()
        return self.fixture_text("reference_adapt.txt").replace("$product_name", name).strip()

    def narrative_transcript(self, framework: dict) -> dict:
        revised = "Revised:" in str(framework.get("product_usage", ""))
        return self.fixture("gate1.json" if revised else "gate1_initial.json")

    def _on_gate1(self, system: str, text: str) -> str:
        framework = _load_json(read_section(text, "FRAMEWORK"), {}) or {}
        return _dump(self.narrative_transcript(framework))

    def _on_gate2(self, system: str, text: str) -> str:
        return _dump(self.fixture("gate2.json"))

    def _on_suggest(self, system: str, text: str) -> str:
        gate = (read_section(text, "GATE") or "narrative").strip()
        failing = _load_json(read_section(text, "FAILING"), {}) or {}
        table = self.fixture("suggest.json")[gate]
        dims = [d for d in table if d in failing] or list(table)
        worst = min(dims, key=lambda d: (failing.get(d, 99), dims.index(d)))
        entry = table[worst]
        where = DIM_TO_FIELD.get(worst, "product_usage") if gate == "narrative" else "global"
        return _dump({"gate": gate, "what": entry["what"], "where": where, "how": entry["how"]})

    def _on_visual_quality(self, system: str, text: str) -> str:
        return _dump(self.fixture("visual_quality.json"))

    def _on_reference_transfer(self, system: str, text: str) -> str:
        report = self.fixture("reference_transfer.json")
        if not report.get("per_position"):
            report["per_position"] = {p: "strong" for p in _positions(read_section(text, "LAYOUT"))}
        return _dump(report)


class ContentScoringMockChat(MockChat):
    """Mock whose rubric scores vary with the attached images' pixels.

    Used by batch evaluation so aggregate rows differ between items while
    staying a pure function of the request.
    """

    def _complete(self, request: ChatRequest) -> str:
        tag = marker(request.system_prompt) or ""
        text = self.respond(tag, request.system_prompt, request.text)
        if tag not in ("VISUAL_QUALITY", "REFERENCE_TRANSFER") or not request.images:
            return text
        seed = hashlib.sha256(b"".join(img.tobytes() for img in request.images)).digest()
        data = json.loads(text)
        i = 0
        for value in data.values():
            entries = value.values() if isinstance(value, dict) and "score" not in value else [value]
            for entry in entries:
                if isinstance(entry, dict) and isinstance(entry.get("score"), int):
                    entry["score"] = max(1, min(10, entry["score"] + seed[i % len(seed)] % 3 - 1))
                    i += 1
        return _dump(data)


class ScriptedChat(MockChat):
    """MockChat whose critic follows a script of per-iteration outcomes.

    Each Gate 1 call consumes the next outcome: ``"gate1_fail"``,
    ``"gate2_fail"`` or ``"pass"``; an exhausted script keeps passing.
    """

    NARRATIVE = {
        "pass": {"identity": 5, "usage": 4, "context": 4, "consumer": 5},
        "gate1_fail": {"identity": 5, "usage": 3, "context": 4, "consumer": 5},
    }
    PHOTO = {
        "pass": {"realism": 4, "coherence": 5, "aesthetic": 4},
        "gate2_fail": {"realism": 3, "coherence": 5, "aesthetic": 5},
    }

    def __init__(self, script: Iterable[str], fixtures_dir=None):
        super().__init__(fixtures_dir)
        self.script = list(script)
        self.cursor = 0
        self.current = "pass"
        self.gate_calls = {"GATE1": 0, "GATE2": 0}

    def _on_gate1(self, system: str, text: str) -> str:
        self.gate_calls["GATE1"] += 1
        self.current = self.script[self.cursor] if self.cursor < len(self.script) else "pass"
        self.cursor += 1
        scores = self.NARRATIVE["gate1_fail" if self.current == "gate1_fail" else "pass"]
        return _dump({d: {"score": s, "reason": "scripted"} for d, s in scores.items()})

    def _on_gate2(self, system: str, text: str) -> str:
        self.gate_calls["GATE2"] += 1
        scores = self.PHOTO["gate2_fail" if self.current == "gate2_fail" else "pass"]
        return _dump({d: {"score": s, "reason": "scripted"} for d, s in scores.items()})


class CannedChat(ChatProvider):
    """Replays fixed responses in order; for tests of the repair path."""

    name = "canned-chat"

    def __init__(self, responses: Iterable[str]):
        super().__init__()
        self.responses = list(responses)
        self.requests: list[ChatRequest] = []

    def _complete(self, request: ChatRequest) -> str:
        self.requests.append(request)
        if not self.responses:
            raise AssertionError("CannedChat ran out of responses")
        return self.responses.pop(0)


def panel_color(block: str) -> tuple[int, int, int]:
    d = hashlib.sha256(block.encode("utf-8")).digest()
    return d[0], d[1], d[2]


class MockImageGenerator(ImageProvider):
    """Renders each ``PANEL <pos>: ...`` block as a flat cell whose color is
    the first three bytes of the block's SHA-256."""

    name = "mock-image"

    def __init__(self, native_size: tuple[int, int] | None = None):
        super().__init__()
        self.native_size = native_size

    def _generate(self, request: ImageGenRequest):
        w, h = self.native_size or (request.target_width, request.target_height)
        img = Image.new("RGB", (w, h), (128, 128, 128))
        panels = [b for b in request.prompt_blocks if b.startswith(PANEL_PREFIX)]
        cell_w, cell_h = w // request.cols, h // request.rows
        for i, block in enumerate(panels[: request.rows * request.cols]):
            r, c = divmod(i, request.cols)
            box = (c * cell_w, r * cell_h, (c + 1) * cell_w, (r + 1) * cell_h)
            img.paste(panel_color(block), box)
        return img, {"model": "mock"}


class MockEmbedder(EmbeddingProvider):
    """Fixed pseudo-random projection of per-channel mean and spread."""

    name = "mock-embed"
    SEED = 20240601

    def __init__(self, dimension: int = 8):
        super().__init__(dimension)
        rng = random.Random(self.SEED)
        self.projection = [[rng.gauss(0.0, 1.0) for _ in range(6)] for _ in range(dimension)]

    @staticmethod
    def statistics(image: Image.Image) -> list[float]:
        stat = ImageStat.Stat(image.convert("RGB"))
        return [m / 255.0 - 0.5 for m in stat.mean] + [s / 255.0 for s in stat.stddev]

    def _embed(self, image):
        s = self.statistics(image)
        return [sum(w * x for w, x in zip(row, s)) for row in self.projection]
