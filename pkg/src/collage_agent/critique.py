"""Critique agent: two sequential gates and a (what, where, how) suggestion."""

from __future__ import annotations

import json

from PIL import Image

from .errors import PreconditionError, SchemaError
from .ideation import require_valid
from .plan_model import (
    DIM_TO_FIELD,
    CritiqueReport,
    GateConfig,
    GridLayout,
    NarrativeScores,
    PhotographicPlan,
    PhotoScores,
    ProductInput,
    ProductNarrativeFramework,
    Suggestion,
    ValidationReport,
    gate_passes,
    parse_plan_json,
    serialize,
)
from .providers.base import ChatProvider, ChatRequest
from .structured import REPAIR_BUDGET, request_structured
from .templates import DEFAULT_LIBRARY, PromptLibrary

__all__ = ["CritiqueAgent", "GateConfig", "allowed_locations", "evaluate_gates"]


def allowed_locations(gate: str, layout: GridLayout) -> list[str]:
    """Closed vocabulary for Suggestion.where_ per gate."""
    if gate == "narrative":
        return list(DIM_TO_FIELD.values())
    return [*layout.panel_order, "global"]


def evaluate_gates(narrative: NarrativeScores, photo: PhotoScores | None,
                   cfg: GateConfig) -> tuple[bool, bool | None]:
    """Pure gate decision from stored scores."""
    g1 = gate_passes(narrative.values(), cfg.tau_narr, cfg.gate_rule)
    g2 = None
    if g1 and photo is not None:
        g2 = gate_passes(photo.values(), cfg.tau_photo, cfg.gate_rule)
    return g1, g2


def _check_image(img) -> None:
    if not isinstance(img, Image.Image) or min(img.size) < 1:
        raise PreconditionError("collage does not decode")


class CritiqueAgent:
    def __init__(self, chat: ChatProvider, *, library: PromptLibrary = DEFAULT_LIBRARY,
                 repair_budget: int = REPAIR_BUDGET, temperature: float = 0.0):
        self.chat = chat
        self.library = library
        self.repair_budget = repair_budget
        self.temperature = temperature
        self.repair_log: list[dict] = []

    def _ask(self, request: ChatRequest, kind: str, parse):
        return request_structured(
            self.chat, request, kind, parse,
            budget=self.repair_budget, library=self.library, turns=self.repair_log,
        )

    def score_narrative(self, collage: Image.Image, product: ProductInput,
                        framework: ProductNarrativeFramework) -> NarrativeScores:
        """Gate 1 scores, conceptual correctness only."""
        _check_image(collage)
        request = ChatRequest(
            system_prompt=self.library.render("gate1", "system"),
            user_parts=[
                self.library.render("gate1", "user", product_name=product.name.strip(),
                                    framework=serialize(framework).strip()),
                collage,
                product.packshot,
            ],
            response_format_hint="structured_json",
            temperature=self.temperature,
        )
        return self._ask(request, "narrative_scores", lambda raw: parse_plan_json(raw, "narrative_scores"))

    def score_photography(self, collage: Image.Image, product: ProductInput,
                          plan: PhotographicPlan) -> PhotoScores:
        _check_image(collage)
        request = ChatRequest(
            system_prompt=self.library.render("gate2", "system"),
            user_parts=[
                self.library.render("gate2", "user", product_name=product.name.strip(),
                                    plan=serialize(plan).strip()),
                collage,
                product.packshot,
            ],
            response_format_hint="structured_json",
            temperature=self.temperature,
        )
        return self._ask(request, "photo_scores", lambda raw: parse_plan_json(raw, "photo_scores"))

    def suggest(self, gate: str, failing: dict[str, int], context: str, collage: Image.Image,
                layout: GridLayout) -> Suggestion:
        allowed = allowed_locations(gate, layout)
        request = ChatRequest(
            system_prompt=self.library.render("suggest", "system", gate=gate),
            user_parts=[
                self.library.render("suggest", "user", gate=gate, failing=json.dumps(failing),
                                    allowed=json.dumps(allowed), context=context),
                collage,
            ],
            response_format_hint="structured_json",
            temperature=self.temperature,
        )

        def parse(raw: str) -> Suggestion:
            s = parse_plan_json(raw, "suggestion")
            problems = []
            if s.gate != gate:
                problems.append(f"gate must be {gate}")
            if s.where_ not in allowed:
                problems.append(f"where {s.where_!r} not in {allowed}")
            if problems:
                raise SchemaError(ValidationReport(problems))
            return s

        return self._ask(request, "suggestion", parse)

    def critique(self, collage: Image.Image, product: ProductInput, framework: ProductNarrativeFramework,
                 plan: PhotographicPlan, cfg: GateConfig) -> CritiqueReport:
        """Gate 1, then Gate 2 only if Gate 1 passed, then a suggestion on failure."""
        require_valid(cfg, "gate config")
        require_valid(framework, "framework")
        require_valid(plan, "plan")
        narrative = self.score_narrative(collage, product, framework)
        g1, _ = evaluate_gates(narrative, None, cfg)
        if not g1:
            failing = {d: v for d, v in narrative.values().items() if v < cfg.tau_narr} or narrative.values()
            suggestion = self.suggest("narrative", failing, serialize(framework).strip(), collage, plan.layout)
            return CritiqueReport(narrative=narrative, gate1_pass=False, suggestion=suggestion, gates=cfg)
        photo = self.score_photography(collage, product, plan)
        _, g2 = evaluate_gates(narrative, photo, cfg)
        suggestion = None
        if not g2:
            failing = {d: v for d, v in photo.values().items() if v < cfg.tau_photo} or photo.values()
            suggestion = self.suggest("photography", failing, serialize(plan).strip(), collage, plan.layout)
        return CritiqueReport(narrative=narrative, gate1_pass=True, photo=photo, gate2_pass=g2,
                              suggestion=suggestion, gates=cfg)
