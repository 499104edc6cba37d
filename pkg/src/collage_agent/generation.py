"""Generation agent: compile panel prompts and synthesize the collage in one call."""

from __future__ import annotations

from pathlib import Path

from .errors import PreconditionError, SchemaError
from .ideation import require_valid
from .persist import atomic_write_bytes, atomic_write_json, atomic_write_text
from .plan_model import (
    GridLayout,
    PhotographicPlan,
    ProductInput,
    ProductNarrativeFramework,
    PromptSet,
    decode_json_text,
    serialize,
    validate,
)
from .providers.base import ChatProvider, ChatRequest, ImageGenRequest, ImageProvider, encode_png
from .structured import REPAIR_BUDGET, request_structured
from .templates import DEFAULT_LIBRARY, PromptLibrary

PANEL_PX = 512


def canvas_size(layout: GridLayout, panel_px: int = PANEL_PX) -> tuple[int, int]:
    """Default collage size: square panels, so 2x2 -> 1024x1024, 1x3 -> 1536x512."""
    return layout.cols * panel_px, layout.rows * panel_px


def assemble_blocks(prompt_set: PromptSet) -> list[str]:
    """Generator prompt blocks: fidelity first, then aesthetic, then panels in order."""
    blocks = [prompt_set.fidelity_block, prompt_set.aesthetic_block]
    blocks += [f"PANEL {pos}: {prompt_set.prompts[pos]}" for pos in prompt_set.layout.panel_order]
    return blocks


class GenerationAgent:
    def __init__(
        self,
        chat: ChatProvider,
        images: ImageProvider,
        *,
        library: PromptLibrary = DEFAULT_LIBRARY,
        repair_budget: int = REPAIR_BUDGET,
        temperature: float = 0.7,
        panel_px: int = PANEL_PX,
        attach_reference: bool = False,
    ):
        self.chat = chat
        self.images = images
        self.library = library
        self.repair_budget = repair_budget
        self.temperature = temperature
        self.panel_px = panel_px
        self.attach_reference = attach_reference
        self.repair_log: list[dict] = []

    def build_constraint_blocks(self, product: ProductInput) -> tuple[str, str]:
        require_valid(product, "product input")
        fidelity = self.library.render("fidelity", product_name=product.name.strip())
        aesthetic = self.library.render("aesthetic")
        return fidelity, aesthetic

    def compile_prompts(self, plan: PhotographicPlan, framework: ProductNarrativeFramework,
                        product: ProductInput) -> PromptSet:
        """Stage 3: one prompt per panel, each carrying the style digest."""
        require_valid(plan, "plan")
        layout = plan.layout
        digest = plan.style.digest()
        fidelity, aesthetic = self.build_constraint_blocks(product)
        request = ChatRequest(
            system_prompt=self.library.render("stage3", "system"),
            user_parts=[self.library.render(
                "stage3", "user", layout=serialize(layout).strip(), product_name=product.name.strip(),
                framework=serialize(framework).strip(), plan=serialize(plan).strip(),
            )],
            response_format_hint="structured_json",
            temperature=self.temperature,
        )

        def parse(raw: str) -> PromptSet:
            data = decode_json_text(raw)
            if isinstance(data, dict) and isinstance(data.get("prompts"), dict):
                data = data["prompts"]
            if not isinstance(data, dict):
                data = {}
            prompts = {}
            for pos in layout.panel_order:
                text = data.get(pos)
                if isinstance(text, str) and text.strip():
                    text = text.strip()
                    prompts[pos] = text if digest in text else f"{text} {digest}"
            ps = PromptSet(layout=layout, prompts=prompts, fidelity_block=fidelity,
                           aesthetic_block=aesthetic, style_digest=digest)
            report = validate(ps)
            if not report.ok:
                raise SchemaError(report)
            return ps

        return request_structured(
            self.chat, request, "prompt_set", parse,
            budget=self.repair_budget, library=self.library, turns=self.repair_log,
        )

    def build_request(self, prompt_set: PromptSet, product: ProductInput, layout: GridLayout) -> ImageGenRequest:
        width, height = canvas_size(layout, self.panel_px)
        conditions = [product.packshot]
        if self.attach_reference and product.reference is not None:
            conditions.append(product.reference)
        return ImageGenRequest(
            prompt_blocks=assemble_blocks(prompt_set),
            condition_images=conditions,
            target_width=width,
            target_height=height,
            rows=layout.rows,
            cols=layout.cols,
        )

    def synthesize_collage(self, prompt_set: PromptSet, product: ProductInput, layout: GridLayout,
                           iteration: int, run_dir: str | Path) -> Path:
        """Generate the whole grid with a single provider call and persist it.

        Writes ``prompts_iter{n}.json``, ``generation_iter{n}.json`` and
        ``collage_iter{n}.png`` into ``run_dir``.
        """
        require_valid(prompt_set, "prompt set")
        if prompt_set.layout != layout:
            raise PreconditionError(f"prompt set is for {prompt_set.layout.label}, not {layout.label}")
        run_dir = Path(run_dir)
        request = self.build_request(prompt_set, product, layout)
        atomic_write_text(run_dir / f"prompts_iter{iteration}.json", serialize(prompt_set))
        result = self.images.generate_image(request)
        meta = {
            "iteration": iteration,
            "width": result.image.size[0],
            "height": result.image.size[1],
            "prompt_blocks": len(request.prompt_blocks),
            "condition_images": len(request.condition_images),
            **result.metadata,
        }
        atomic_write_json(run_dir / f"generation_iter{iteration}.json", meta)
        return atomic_write_bytes(run_dir / f"collage_iter{iteration}.png", encode_png(result.image))
