"""Model-judged rubrics: visual quality of a grid and reference transfer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from PIL import Image

from ..errors import SchemaError
from ..plan_model import GridLayout, ValidationReport, decode_json_text
from ..providers.base import ChatProvider, ChatRequest
from ..structured import REPAIR_BUDGET, request_structured
from ..templates import DEFAULT_LIBRARY, PromptLibrary
from .structure import split_grid

RUBRIC_AXES: dict[str, tuple[str, ...]] = {
    "aesthetics": ("composition_hierarchy", "lighting_rendering", "color_harmony", "grid_balance"),
    "richness": ("function_coverage", "information_density", "product_relevance"),
    "coherence": (
        "product_identity_consistency", "product_centric_narrative",
        "style_tone_consistency", "world_campaign_cohesion",
    ),
}
TRANSFER_AXES = ("grid_plan", "narrative_logic", "product_fit")
ALIGNMENTS = ("strong", "partial", "weak")
VERDICTS = ("pass", "borderline", "fail")
SCORE_MIN, SCORE_MAX = 1, 10


def rubric_columns() -> list[str]:
    return [f"{axis}.{sub}" for axis, subs in RUBRIC_AXES.items() for sub in subs]


@dataclass(frozen=True)
class RubricScores:
    axes: dict[str, dict[str, tuple[int, str]]]

    def flat(self) -> dict[str, int]:
        return {f"{a}.{s}": score for a, subs in self.axes.items() for s, (score, _) in subs.items()}

    def axis_mean(self, axis: str) -> float:
        scores = [score for score, _ in self.axes[axis].values()]
        return sum(scores) / len(scores)

    def to_dict(self) -> dict:
        return {a: {s: {"score": sc, "reason": r} for s, (sc, r) in subs.items()} for a, subs in self.axes.items()}


@dataclass(frozen=True)
class TransferReport:
    grid_plan: int
    narrative_logic: int
    product_fit: int
    per_position: dict[str, str]
    key_matches: list[str] = field(default_factory=list)
    key_mismatches: list[str] = field(default_factory=list)
    verdict: str = "fail"
    reasons: dict[str, str] = field(default_factory=dict)

    def flat(self) -> dict:
        return {
            "transfer.grid_plan": self.grid_plan,
            "transfer.narrative_logic": self.narrative_logic,
            "transfer.product_fit": self.product_fit,
            "transfer.verdict": self.verdict,
        }

    def to_dict(self) -> dict:
        out = {k: {"score": getattr(self, k), "reason": self.reasons.get(k, "")} for k in TRANSFER_AXES}
        out.update(per_position=dict(self.per_position), key_matches=list(self.key_matches),
                   key_mismatches=list(self.key_mismatches), verdict=self.verdict)
        return out


def _score(entry, where: str, report: ValidationReport) -> tuple[int, str]:
    if not isinstance(entry, dict):
        report.add(f"{where} must be an object with score and reason")
        return 0, ""
    score = entry.get("score")
    reason = entry.get("reason", "")
    if isinstance(score, bool) or not isinstance(score, int):
        report.add(f"{where} score {score!r} is not an integer")
    elif not SCORE_MIN <= score <= SCORE_MAX:
        report.add(f"{where} score {score} outside {SCORE_MIN}-{SCORE_MAX}")
    if not isinstance(reason, str):
        report.add(f"{where} reason must be a string")
        reason = ""
    return score, reason


def parse_rubric(text: str) -> RubricScores:
    data = decode_json_text(text)
    report = ValidationReport()
    axes: dict[str, dict[str, tuple[int, str]]] = {}
    if not isinstance(data, dict):
        report.add("rubric must be an object")
        data = {}
    for axis, subs in RUBRIC_AXES.items():
        block = data.get(axis)
        if not isinstance(block, dict):
            report.add(f"missing axis {axis}")
            continue
        for extra in sorted(set(block) - set(subs)):
            report.add(f"unknown sub-dimension {axis}.{extra}")
        axes[axis] = {}
        for sub in subs:
            if sub not in block:
                report.add(f"missing sub-dimension {axis}.{sub}")
                continue
            axes[axis][sub] = _score(block[sub], f"{axis}.{sub}", report)
    for extra in sorted(set(data) - set(RUBRIC_AXES)):
        report.add(f"unknown axis {extra}")
    if not report.ok:
        raise SchemaError(report)
    return RubricScores(axes)


def _text_list(value, where: str, report: ValidationReport) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        report.add(f"{where} must be a list of strings")
        return []
    return list(value)


def parse_transfer_report(text: str, layout: GridLayout) -> TransferReport:
    data = decode_json_text(text)
    report = ValidationReport()
    if not isinstance(data, dict):
        report.add("report must be an object")
        data = {}
    scores, reasons = {}, {}
    for axis in TRANSFER_AXES:
        if axis not in data:
            report.add(f"missing key {axis}")
            continue
        scores[axis], reasons[axis] = _score(data[axis], axis, report)
    per_position = data.get("per_position")
    if not isinstance(per_position, dict):
        report.add("per_position must map positions to strong/partial/weak")
        per_position = {}
    for pos in layout.panel_order:
        if pos not in per_position:
            report.add(f"per_position missing {pos}")
    for pos, value in per_position.items():
        if pos not in layout.panel_order:
            report.add(f"per_position has unknown position {pos}")
        elif value not in ALIGNMENTS:
            report.add(f"per_position {pos} is {value!r}, expected one of {'/'.join(ALIGNMENTS)}")
    verdict = data.get("verdict")
    if verdict not in VERDICTS:
        report.add(f"verdict {verdict!r} is not one of {'/'.join(VERDICTS)}")
    matches = _text_list(data.get("key_matches", []), "key_matches", report)
    mismatches = _text_list(data.get("key_mismatches", []), "key_mismatches", report)
    if not report.ok:
        raise SchemaError(report)
    return TransferReport(
        scores["grid_plan"], scores["narrative_logic"], scores["product_fit"],
        {p: per_position[p] for p in layout.panel_order}, matches, mismatches, verdict, reasons,
    )


def _template_values(layout: GridLayout) -> dict:
    return {
        "layout_label": layout.label,
        "positions": ", ".join(layout.panel_order),
        "layout": json.dumps(layout.to_dict()),
    }


def visual_quality_request(collage: Image.Image, layout: GridLayout,
                           library: PromptLibrary = DEFAULT_LIBRARY) -> ChatRequest:
    crops = split_grid(collage, layout)
    values = _template_values(layout)
    return ChatRequest(
        system_prompt=library.render("visual_quality", "system", **values),
        user_parts=[library.render("visual_quality", "user", **values), collage, *crops],
        response_format_hint="structured_json",
        temperature=0.0,
    )


def score_visual_quality(collage: Image.Image, chat: ChatProvider, layout: GridLayout, *,
                         library: PromptLibrary = DEFAULT_LIBRARY, repair_budget: int = REPAIR_BUDGET,
                         turns: list | None = None) -> RubricScores:
    """Score aesthetics, richness and coherence; the full grid and every crop are attached."""
    request = visual_quality_request(collage, layout, library)
    return request_structured(chat, request, "visual_quality", parse_rubric,
                              budget=repair_budget, library=library, turns=turns)


def reference_transfer_request(reference: Image.Image, generated: Image.Image, layout: GridLayout,
                               library: PromptLibrary = DEFAULT_LIBRARY) -> ChatRequest:
    values = _template_values(layout)
    return ChatRequest(
        system_prompt=library.render("reference_transfer", "system", **values),
        user_parts=[library.render("reference_transfer", "user", **values), reference, generated],
        response_format_hint="structured_json",
        temperature=0.0,
    )


def score_reference_transfer(reference: Image.Image, generated: Image.Image, chat: ChatProvider,
                             layout: GridLayout, *, library: PromptLibrary = DEFAULT_LIBRARY,
                             repair_budget: int = REPAIR_BUDGET, turns: list | None = None) -> TransferReport:
    """Judge structural transfer; both grids are attached whole, never cropped."""
    request = reference_transfer_request(reference, generated, layout, library)
    return request_structured(chat, request, "reference_transfer",
                              lambda text: parse_transfer_report(text, layout),
                              budget=repair_budget, library=library, turns=turns)
