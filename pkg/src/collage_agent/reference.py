"""Reference agent: distill a reference grid into product-agnostic directions."""

from __future__ import annotations

from dataclasses import replace

from PIL import Image

from .errors import PreconditionError
from .ideation import require_valid
from .plan_model import GridLayout, ProductInput, TransferDirections, parse_plan_json, serialize
from .providers.base import ChatProvider, ChatRequest
from .structured import REPAIR_BUDGET, request_structured
from .templates import DEFAULT_LIBRARY, PromptLibrary


class ReferenceAgent:
    """Two chat turns: abstraction on the reference alone, then
    re-instantiation notes for the target that see only its name and
    intent. The target packshot is never attached."""

    def __init__(self, chat: ChatProvider, *, library: PromptLibrary = DEFAULT_LIBRARY,
                 repair_budget: int = REPAIR_BUDGET, temperature: float = 0.7):
        self.chat = chat
        self.library = library
        self.repair_budget = repair_budget
        self.temperature = temperature
        self.repair_log: list[dict] = []

    def extract_transfer_plan(self, reference: Image.Image, layout: GridLayout,
                              target: ProductInput) -> TransferDirections:
        if not isinstance(reference, Image.Image) or min(reference.size) < 1:
            raise PreconditionError("reference image does not decode")
        require_valid(layout, "layout")
        require_valid(target, "target product")
        lib = self.library
        request = ChatRequest(
            system_prompt=lib.render("reference_extract", "system", layout_label=layout.label),
            user_parts=[lib.render("reference_extract", "user", layout=serialize(layout).strip()), reference],
            response_format_hint="structured_json",
            temperature=self.temperature,
        )
        captured: dict[str, str] = {}

        def parse(raw: str) -> TransferDirections:
            plan = parse_plan_json(raw, "transfer", layout=layout)
            captured["raw"] = raw
            return plan

        directions = request_structured(
            self.chat, request, "transfer", parse,
            budget=self.repair_budget, library=lib, turns=self.repair_log,
        )
        adapt = ChatRequest(
            system_prompt=lib.render("reference_extract", "adapt_system"),
            user_parts=[lib.render(
                "reference_extract", "adapt_user",
                product_name=target.name.strip(), user_intent=target.user_intent or "",
                transfer=serialize(directions).strip(),
            )],
            temperature=self.temperature,
        )
        notes = self.chat.chat_complete(adapt).strip()
        return replace(directions, analysis_text=captured["raw"].strip(), adaptation_notes=notes)
