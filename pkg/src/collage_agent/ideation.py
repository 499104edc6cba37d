"""Ideation agent: decide what to shoot, then how to shoot it."""

from __future__ import annotations

from dataclasses import replace

from .errors import PreconditionError, SchemaError
from .plan_model import (
    FRAMEWORK_FIELDS,
    GridLayout,
    PhotographicPlan,
    ProductInput,
    ProductNarrativeFramework,
    Suggestion,
    TransferDirections,
    ValidationReport,
    parse_plan_json,
    serialize,
    validate,
)
from .providers.base import ChatProvider, ChatRequest
from .structured import REPAIR_BUDGET, repair_parse, request_structured
from .templates import DEFAULT_LIBRARY, PromptLibrary, section

__all__ = ["IdeationAgent", "repair_parse", "require_valid"]


def require_valid(obj, what: str) -> None:
    report = validate(obj)
    if not report.ok:
        raise PreconditionError(f"invalid {what}: {'; '.join(report.violations)}")


def check_scale_diversity(plan: PhotographicPlan) -> None:
    """At least two distinct shot scales once a grid has three or more panels."""
    if plan.layout.panel_count >= 3:
        scales = {p.shot_scale for p in plan.panels.values()}
        if len(scales) < 2:
            raise SchemaError(ValidationReport([f"shot scales not varied: all panels are {scales.pop()}"]))


class IdeationAgent:
    def __init__(
        self,
        chat: ChatProvider,
        *,
        library: PromptLibrary = DEFAULT_LIBRARY,
        repair_budget: int = REPAIR_BUDGET,
        temperature: float = 0.7,
        repair_temperature: float = 0.0,
    ):
        self.chat = chat
        self.library = library
        self.repair_budget = repair_budget
        self.temperature = temperature
        self.repair_temperature = repair_temperature
        self.repair_log: list[dict] = []

    def _ask(self, request: ChatRequest, kind: str, parse):
        return request_structured(
            self.chat, request, kind, parse,
            budget=self.repair_budget, library=self.library,
            repair_temperature=self.repair_temperature, turns=self.repair_log,
        )

    def plan_what(
        self,
        product: ProductInput,
        transfer: TransferDirections | None = None,
        revision: Suggestion | None = None,
        *,
        prior: ProductNarrativeFramework | None = None,
        layout: GridLayout | None = None,
    ) -> ProductNarrativeFramework:
        """Stage 1: build the product narrative framework.

        With ``revision``, only the field it names (plus the summarizing
        narrative_framework) may change; every other field is copied from
        ``prior`` regardless of what the model returns.
        """
        require_valid(product, "product input")
        if revision is not None:
            if revision.gate != "narrative":
                raise PreconditionError("plan_what only accepts narrative-gate revisions")
            if prior is None:
                raise PreconditionError("a revision needs the prior framework")
        layout = layout or GridLayout.of(2, 2)
        lib = self.library
        extra = []
        if transfer is not None:
            extra.append(lib.render("stage1", "transfer", transfer=serialize(transfer).strip()))
        if revision is not None:
            extra.append(lib.render("stage1", "revision", prior=serialize(prior).strip(),
                                    revision=serialize(revision).strip()))
        request = ChatRequest(
            system_prompt=lib.render("stage1", "system", layout_label=layout.label),
            user_parts=[
                lib.render("stage1", "user", product_name=product.name.strip(),
                           user_intent=product.user_intent or "", extra="\n\n".join(extra)),
                product.packshot,
            ],
            response_format_hint="structured_json",
            temperature=self.temperature,
        )
        framework = self._ask(request, "framework", lambda raw: parse_plan_json(raw, "framework"))
        if revision is not None:
            frozen = {
                name: getattr(prior, name)
                for name in FRAMEWORK_FIELDS
                if name not in (revision.where_, "narrative_framework")
            }
            framework = replace(framework, **frozen)
        return framework

    def plan_how(
        self,
        product: ProductInput,
        framework: ProductNarrativeFramework,
        layout: GridLayout,
        transfer: TransferDirections | None = None,
        refinement: Suggestion | None = None,
        *,
        prior: PhotographicPlan | None = None,
    ) -> PhotographicPlan:
        """Stage 2: per-panel photographic decisions plus the global style."""
        require_valid(product, "product input")
        require_valid(framework, "framework")
        require_valid(layout, "layout")
        if refinement is not None:
            if refinement.gate != "photography":
                raise PreconditionError("plan_how only accepts photography-gate refinements")
            if prior is None:
                raise PreconditionError("a refinement needs the prior plan")
        lib = self.library
        extra = []
        if transfer is not None:
            extra.append(lib.render("stage2", "transfer", transfer=serialize(transfer).strip()))
        if refinement is not None:
            extra.append(lib.render("stage2", "refinement", prior=serialize(prior).strip(),
                                    refinement=serialize(refinement).strip()))
        request = ChatRequest(
            system_prompt=lib.render("stage2", "system", layout_label=layout.label),
            user_parts=[
                lib.render("stage2", "user", layout=serialize(layout).strip(),
                           product_name=product.name.strip(), framework=serialize(framework).strip(),
                           extra="\n\n".join(extra)),
                product.packshot,
            ],
            response_format_hint="structured_json",
            temperature=self.temperature,
        )

        def parse(raw: str) -> PhotographicPlan:
            plan = parse_plan_json(raw, "plan", layout=layout)
            check_scale_diversity(plan)
            return plan

        return self._ask(request, "plan", parse)
