"""Domain types exchanged between the agents, their validation, and the
canonical JSON form written to run directories.

Every type is a frozen dataclass. Construction never validates; call
:func:`validate` to get the full list of invariant violations, or
:func:`parse_plan_json` to decode and validate in one step.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Literal

from PIL import Image, UnidentifiedImageError

from .errors import CorruptInput, ParseError, PreconditionError, SchemaError

TWO_BY_TWO = ("top_left", "top_right", "bottom_left", "bottom_right")

SHOT_SCALES = ("macro", "close", "medium", "wide")
HERO_PRESENCE = ("full", "partial", "none")
GATES = ("narrative", "photography")
GATE_RULES = ("min", "mean")

FRAMEWORK_FIELDS = (
    "product_essence",
    "product_usage",
    "usage_context",
    "target_consumer_profile",
    "narrative_framework",
)
STYLE_FIELDS = ("color", "lighting", "style", "emotion_mood")
NARRATIVE_DIMS = ("identity", "usage", "context", "consumer")
PHOTO_DIMS = ("realism", "coherence", "aesthetic")

# Gate 1 dimension -> framework field it checks.
DIM_TO_FIELD = {
    "identity": "product_essence",
    "usage": "product_usage",
    "context": "usage_context",
    "consumer": "target_consumer_profile",
}

MIN_PACKSHOT_PX = 64
MIN_PROMPT_CHARS = 20


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def add(self, message: str) -> None:
        self.violations.append(message)

    def extend(self, other: "ValidationReport | list[str]", prefix: str = "") -> None:
        items = other.violations if isinstance(other, ValidationReport) else other
        self.violations.extend(f"{prefix}{v}" for v in items)


# --------------------------------------------------------------------------
# Types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GridLayout:
    rows: int
    cols: int
    panel_order: tuple[str, ...]

    @classmethod
    def of(cls, rows: int, cols: int) -> "GridLayout":
        if rows < 1 or cols < 1 or rows * cols < 2:
            raise PreconditionError(f"layout {rows}x{cols} needs at least 2 panels")
        return cls(rows, cols, default_positions(rows, cols))

    @classmethod
    def parse(cls, text: str) -> "GridLayout":
        """Parse ``"RxC"`` (``x`` or ``×``) into a layout."""
        parts = text.lower().replace("×", "x").split("x")
        if len(parts) != 2 or not all(p.strip().isdigit() for p in parts):
            raise PreconditionError(f"layout must look like RxC, got {text!r}")
        return cls.of(int(parts[0]), int(parts[1]))

    @property
    def panel_count(self) -> int:
        return self.rows * self.cols

    @property
    def label(self) -> str:
        return f"{self.rows}x{self.cols}"

    def to_dict(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "panel_order": list(self.panel_order)}


def default_positions(rows: int, cols: int) -> tuple[str, ...]:
    if (rows, cols) == (2, 2):
        return TWO_BY_TWO
    return tuple(f"r{r}c{c}" for r in range(1, rows + 1) for c in range(1, cols + 1))


@dataclass(frozen=True)
class ProductInput:
    packshot: Image.Image
    name: str
    user_intent: str | None = None
    reference: Image.Image | None = None

    @classmethod
    def from_files(cls, packshot, name, user_intent=None, reference=None) -> "ProductInput":
        return cls(
            packshot=load_image(packshot),
            name=name,
            user_intent=user_intent,
            reference=load_image(reference) if reference is not None else None,
        )


def load_image(source) -> Image.Image:
    """Decode an image from a path or raw bytes, raising CorruptInput."""
    try:
        if isinstance(source, (bytes, bytearray)):
            img = Image.open(io.BytesIO(source))
        else:
            img = Image.open(source)
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise CorruptInput(f"cannot decode image {source if not isinstance(source, bytes) else '<bytes>'}: {exc}") from exc
    return img.convert("RGB") if img.mode not in ("RGB", "RGBA", "L") else img


@dataclass(frozen=True)
class ProductNarrativeFramework:
    product_essence: str
    product_usage: str
    usage_context: str
    target_consumer_profile: str
    narrative_framework: str
    extras: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        d = {name: getattr(self, name) for name in FRAMEWORK_FIELDS}
        return _with_extras(d, self.extras)


@dataclass(frozen=True)
class PanelDecision:
    position: str
    shot_scale: str
    hero_presence: str
    hero_number: int
    subject_emphasis: str
    spatial_composition: str
    interaction: str
    extras: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        d = {
            "shot_scale": self.shot_scale,
            "hero_presence": self.hero_presence,
            "hero_number": self.hero_number,
            "subject_emphasis": self.subject_emphasis,
            "spatial_composition": self.spatial_composition,
            "interaction": self.interaction,
        }
        return _with_extras(d, self.extras)


@dataclass(frozen=True)
class GlobalVisualStyle:
    color: str
    lighting: str
    style: str
    emotion_mood: str
    extras: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return _with_extras({k: getattr(self, k) for k in STYLE_FIELDS}, self.extras)

    def digest(self) -> str:
        return (
            f"STYLE: color={self.color}; lighting={self.lighting}; "
            f"style={self.style}; mood={self.emotion_mood}"
        )


@dataclass(frozen=True)
class PhotographicPlan:
    layout: GridLayout
    panels: dict[str, PanelDecision]
    style: GlobalVisualStyle
    extras: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        d = {
            "layout": self.layout.to_dict(),
            "panels": {pos: self.panels[pos].to_dict() for pos in _ordered(self.panels, self.layout)},
            "global_visual_style": self.style.to_dict(),
        }
        return _with_extras(d, self.extras)


@dataclass(frozen=True)
class PromptSet:
    layout: GridLayout
    prompts: dict[str, str]
    fidelity_block: str = ""
    aesthetic_block: str = ""
    style_digest: str = ""
    extras: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        d = {
            "layout": self.layout.to_dict(),
            "prompts": {pos: self.prompts[pos] for pos in _ordered(self.prompts, self.layout)},
            "style_digest": self.style_digest,
            "fidelity_block": self.fidelity_block,
            "aesthetic_block": self.aesthetic_block,
        }
        return _with_extras(d, self.extras)


@dataclass(frozen=True)
class TransferDirections:
    layout: GridLayout
    abstract_narrative: str
    panel_roles: dict[str, str]
    panel_directives: dict[str, PanelDecision]
    style: GlobalVisualStyle
    analysis_text: str = ""
    adaptation_notes: str = ""
    extras: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        d = {
            "layout": self.layout.to_dict(),
            "abstract_narrative": self.abstract_narrative,
            "panel_roles": {p: self.panel_roles[p] for p in _ordered(self.panel_roles, self.layout)},
            "panel_directives": {
                p: self.panel_directives[p].to_dict()
                for p in _ordered(self.panel_directives, self.layout)
            },
            "global_visual_style": self.style.to_dict(),
            "analysis_text": self.analysis_text,
            "adaptation_notes": self.adaptation_notes,
        }
        return _with_extras(d, self.extras)


@dataclass(frozen=True)
class NarrativeScores:
    identity: int
    usage: int
    context: int
    consumer: int
    reasons: dict[str, str] = field(default_factory=dict)
    extras: dict = field(default_factory=dict, compare=False)

    dims = NARRATIVE_DIMS

    def values(self) -> dict[str, int]:
        return {d: getattr(self, d) for d in self.dims}

    def to_dict(self) -> dict:
        d = {k: {"score": v, "reason": self.reasons.get(k, "")} for k, v in self.values().items()}
        return _with_extras(d, self.extras)


@dataclass(frozen=True)
class PhotoScores:
    realism: int
    coherence: int
    aesthetic: int
    reasons: dict[str, str] = field(default_factory=dict)
    extras: dict = field(default_factory=dict, compare=False)

    dims = PHOTO_DIMS

    def values(self) -> dict[str, int]:
        return {d: getattr(self, d) for d in self.dims}

    def to_dict(self) -> dict:
        d = {k: {"score": v, "reason": self.reasons.get(k, "")} for k, v in self.values().items()}
        return _with_extras(d, self.extras)


@dataclass(frozen=True)
class Suggestion:
    gate: Literal["narrative", "photography"]
    what: str
    where_: str
    how: str
    extras: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        d = {"gate": self.gate, "what": self.what, "where": self.where_, "how": self.how}
        return _with_extras(d, self.extras)


@dataclass(frozen=True)
class GateConfig:
    tau_narr: int = 4
    tau_photo: int = 4
    gate_rule: str = "min"

    def to_dict(self) -> dict:
        return {"tau_narr": self.tau_narr, "tau_photo": self.tau_photo, "gate_rule": self.gate_rule}


def gate_passes(scores: dict[str, int], tau: int, rule: str = "min") -> bool:
    """Gate decision: every dimension >= tau ("min"), or mean >= tau ("mean")."""
    vals = list(scores.values())
    if rule == "mean":
        return math.fsum(vals) / len(vals) >= tau
    return min(vals) >= tau


def mean_score(scores: dict[str, int]) -> float:
    vals = list(scores.values())
    return math.fsum(vals) / len(vals)


@dataclass(frozen=True)
class CritiqueReport:
    narrative: NarrativeScores
    gate1_pass: bool
    photo: PhotoScores | None = None
    gate2_pass: bool | None = None
    suggestion: Suggestion | None = None
    gates: GateConfig = field(default_factory=GateConfig)
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def passed(self) -> bool:
        return bool(self.gate1_pass and self.gate2_pass)

    @property
    def narrative_mean(self) -> float:
        return mean_score(self.narrative.values())

    @property
    def photo_mean(self) -> float | None:
        return mean_score(self.photo.values()) if self.photo is not None else None

    def to_dict(self) -> dict:
        d = {
            "gates": self.gates.to_dict(),
            "narrative": self.narrative.to_dict(),
            "narrative_mean": self.narrative_mean,
            "gate1_pass": self.gate1_pass,
            "photo": self.photo.to_dict() if self.photo is not None else None,
            "photo_mean": self.photo_mean,
            "gate2_pass": self.gate2_pass,
            "suggestion": self.suggestion.to_dict() if self.suggestion is not None else None,
        }
        return _with_extras(d, self.extras)


@dataclass
class PipelineState:
    """Mutable working state of one pipeline run (owned by that run only)."""

    iteration: int = 0
    framework: ProductNarrativeFramework | None = None
    plan: PhotographicPlan | None = None
    prompt_set: PromptSet | None = None
    collage_path: str | None = None
    critique_history: list[CritiqueReport] = field(default_factory=list)
    transfer: TransferDirections | None = None


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


def validate(obj: Any, **context) -> ValidationReport:
    """Return every invariant violation of ``obj``; never raises.

    ``context`` may carry ``max_iterations`` for :class:`PipelineState`.
    """
    report = ValidationReport()
    try:
        checker = _VALIDATORS.get(type(obj))
        if checker is None:
            report.add(f"unsupported type {type(obj).__name__}")
        else:
            checker(obj, report, **context)
    except Exception as exc:  # malformed objects (wrong field types) still yield a report
        report.add(f"invalid object: {exc!r}")
    return report


def _blank(value) -> bool:
    return not isinstance(value, str) or not value.strip()


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _check_layout(layout: GridLayout, report: ValidationReport, **_) -> None:
    if not (_is_int(layout.rows) and layout.rows >= 1):
        report.add("layout rows must be a positive integer")
    if not (_is_int(layout.cols) and layout.cols >= 1):
        report.add("layout cols must be a positive integer")
    if not report.ok:
        return
    n = layout.rows * layout.cols
    if n < 2:
        report.add("layout needs at least 2 panels")
    order = list(layout.panel_order)
    if len(order) != n:
        report.add(f"panel_order has {len(order)} labels, expected {n}")
    if len(set(order)) != len(order):
        report.add("panel_order has duplicates")
    if (layout.rows, layout.cols) == (2, 2) and tuple(order) != TWO_BY_TWO:
        report.add("2x2 panel_order must be top_left, top_right, bottom_left, bottom_right")


def _check_product_input(inp: ProductInput, report: ValidationReport, **_) -> None:
    if _blank(inp.name):
        report.add("name empty")
    if not isinstance(inp.packshot, Image.Image):
        report.add("packshot is not a decoded image")
    else:
        w, h = inp.packshot.size
        if w < MIN_PACKSHOT_PX or h < MIN_PACKSHOT_PX:
            report.add(f"packshot {w}x{h} smaller than {MIN_PACKSHOT_PX}x{MIN_PACKSHOT_PX}")
    if inp.reference is not None and not isinstance(inp.reference, Image.Image):
        report.add("reference is not a decoded image")


def _check_framework(fw: ProductNarrativeFramework, report: ValidationReport, **_) -> None:
    for name in FRAMEWORK_FIELDS:
        if _blank(getattr(fw, name)):
            report.add(f"{name} empty")


def _check_panel(p: PanelDecision, report: ValidationReport, **_) -> None:
    prefix = f"panel {p.position}: "
    if p.shot_scale not in SHOT_SCALES:
        report.add(f"{prefix}shot_scale {p.shot_scale!r} not in {list(SHOT_SCALES)}")
    if p.hero_presence not in HERO_PRESENCE:
        report.add(f"{prefix}hero_presence {p.hero_presence!r} not in {list(HERO_PRESENCE)}")
    if not _is_int(p.hero_number) or p.hero_number < 0:
        report.add(f"{prefix}hero_number must be a non-negative integer")
    elif p.hero_presence == "none" and p.hero_number != 0:
        report.add(f"{prefix}hero_presence none requires hero_number 0")
    elif p.hero_presence in ("full", "partial") and p.hero_number < 1:
        report.add(f"{prefix}hero_presence {p.hero_presence} requires hero_number >= 1")
    for name in ("subject_emphasis", "spatial_composition", "interaction"):
        if _blank(getattr(p, name)):
            report.add(f"{prefix}{name} empty")


def _check_style(s: GlobalVisualStyle, report: ValidationReport, **_) -> None:
    for name in STYLE_FIELDS:
        if _blank(getattr(s, name)):
            report.add(f"global_visual_style.{name} empty")


def _check_coverage(mapping: dict, layout: GridLayout, what: str, report: ValidationReport) -> None:
    for pos in layout.panel_order:
        if pos not in mapping:
            report.add(f"missing {what} {pos}")
    for pos in mapping:
        if pos not in layout.panel_order:
            report.add(f"{what} {pos} not in layout {layout.label}")


def _check_plan(plan: PhotographicPlan, report: ValidationReport, **_) -> None:
    _check_layout(plan.layout, report)
    _check_coverage(plan.panels, plan.layout, "panel", report)
    for pos, panel in plan.panels.items():
        if panel.position != pos:
            report.add(f"panel keyed {pos} carries position {panel.position}")
        _check_panel(panel, report)
    _check_style(plan.style, report)


def _check_prompt_set(ps: PromptSet, report: ValidationReport, **_) -> None:
    _check_layout(ps.layout, report)
    _check_coverage(ps.prompts, ps.layout, "prompt", report)
    if _blank(ps.style_digest):
        report.add("style_digest empty")
    for pos, text in ps.prompts.items():
        if not isinstance(text, str) or len(text.strip()) < MIN_PROMPT_CHARS:
            report.add(f"prompt {pos} shorter than {MIN_PROMPT_CHARS} characters")
        elif ps.style_digest and ps.style_digest not in text:
            report.add(f"prompt {pos} lacks style digest")


def _check_transfer(td: TransferDirections, report: ValidationReport, **_) -> None:
    _check_layout(td.layout, report)
    if _blank(td.abstract_narrative):
        report.add("abstract_narrative empty")
    _check_coverage(td.panel_roles, td.layout, "panel role", report)
    _check_coverage(td.panel_directives, td.layout, "panel directive", report)
    for pos, role in td.panel_roles.items():
        if _blank(role):
            report.add(f"panel role {pos} empty")
    for pos, panel in td.panel_directives.items():
        _check_panel(panel, report)
    _check_style(td.style, report)


def _check_scores(obj, report: ValidationReport, low: int = 0, high: int = 5) -> None:
    for dim in obj.dims:
        v = getattr(obj, dim)
        if not _is_int(v):
            report.add(f"{dim} score {v!r} is not an integer")
        elif not low <= v <= high:
            report.add(f"{dim} score {v} outside {low}-{high}")


def _check_narrative(obj: NarrativeScores, report: ValidationReport, **_) -> None:
    _check_scores(obj, report)


def _check_photo(obj: PhotoScores, report: ValidationReport, **_) -> None:
    _check_scores(obj, report)


def _check_suggestion(s: Suggestion, report: ValidationReport, **_) -> None:
    if s.gate not in GATES:
        report.add(f"gate {s.gate!r} not in {list(GATES)}")
    for name, value in (("what", s.what), ("where", s.where_), ("how", s.how)):
        if _blank(value):
            report.add(f"{name} empty")


def _check_gates(cfg: GateConfig, report: ValidationReport, **_) -> None:
    for name in ("tau_narr", "tau_photo"):
        v = getattr(cfg, name)
        if not _is_int(v) or not 0 <= v <= 5:
            report.add(f"{name} must be an integer in 0-5")
    if cfg.gate_rule not in GATE_RULES:
        report.add(f"gate_rule {cfg.gate_rule!r} not in {list(GATE_RULES)}")


def _check_critique(rep: CritiqueReport, report: ValidationReport, **_) -> None:
    _check_gates(rep.gates, report)
    sub = ValidationReport()
    _check_narrative(rep.narrative, sub)
    report.extend(sub, "narrative ")
    if rep.photo is not None:
        sub = ValidationReport()
        _check_photo(rep.photo, sub)
        report.extend(sub, "photo ")
    if not report.ok:
        return
    g1 = gate_passes(rep.narrative.values(), rep.gates.tau_narr, rep.gates.gate_rule)
    if rep.gate1_pass != g1:
        report.add("gate1_pass inconsistent with narrative scores")
    if (rep.photo is not None) != bool(rep.gate1_pass):
        report.add("photo scores must be present exactly when gate1 passes")
    if rep.photo is not None:
        g2 = gate_passes(rep.photo.values(), rep.gates.tau_photo, rep.gates.gate_rule)
        if rep.gate2_pass != g2:
            report.add("gate2_pass inconsistent with photo scores")
    elif rep.gate2_pass is not None:
        report.add("gate2_pass set without photo scores")
    needs = (not rep.gate1_pass) or (rep.gate1_pass and rep.gate2_pass is False)
    if needs != (rep.suggestion is not None):
        report.add("suggestion must be present exactly when a gate fails")
    if rep.suggestion is not None:
        sub = ValidationReport()
        _check_suggestion(rep.suggestion, sub)
        report.extend(sub, "suggestion ")
        expected = "narrative" if not rep.gate1_pass else "photography"
        if rep.suggestion.gate != expected:
            report.add(f"suggestion gate should be {expected}")


def _check_state(state: PipelineState, report: ValidationReport, max_iterations: int | None = None, **_) -> None:
    import os

    if not _is_int(state.iteration) or state.iteration < 0:
        report.add("iteration must be a non-negative integer")
    elif max_iterations is not None and state.iteration > max_iterations:
        report.add(f"iteration {state.iteration} exceeds budget {max_iterations}")
    if state.collage_path is not None:
        if not os.path.isfile(state.collage_path) or not os.access(state.collage_path, os.R_OK):
            report.add(f"collage_path {state.collage_path} is not a readable file")
    for name, obj in (("framework", state.framework), ("plan", state.plan),
                      ("prompt_set", state.prompt_set), ("transfer", state.transfer)):
        if obj is not None:
            report.extend(validate(obj), f"{name}: ")
    for i, rep in enumerate(state.critique_history):
        report.extend(validate(rep), f"critique {i}: ")


_VALIDATORS: dict[type, Callable] = {
    GridLayout: _check_layout,
    ProductInput: _check_product_input,
    ProductNarrativeFramework: _check_framework,
    PanelDecision: _check_panel,
    GlobalVisualStyle: _check_style,
    PhotographicPlan: _check_plan,
    PromptSet: _check_prompt_set,
    TransferDirections: _check_transfer,
    NarrativeScores: _check_narrative,
    PhotoScores: _check_photo,
    Suggestion: _check_suggestion,
    GateConfig: _check_gates,
    CritiqueReport: _check_critique,
    PipelineState: _check_state,
}


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def to_jsonable(obj: Any) -> Any:
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return obj


def serialize(obj: Any) -> str:
    """Canonical UTF-8 JSON text for any plan type."""
    return json.dumps(to_jsonable(obj), indent=2, ensure_ascii=False) + "\n"


def _with_extras(d: dict, extras: dict) -> dict:
    for k, v in extras.items():
        if k not in d:
            d[k] = v
    return d


def _ordered(mapping: dict, layout: GridLayout) -> list[str]:
    known = [p for p in layout.panel_order if p in mapping]
    return known + [p for p in mapping if p not in layout.panel_order]


class _Reader:
    """Pulls typed fields out of a decoded dict, collecting violations."""

    def __init__(self, data: Any, report: ValidationReport, where: str = ""):
        self.report = report
        self.where = where
        if not isinstance(data, dict):
            report.add(f"{where or 'document'} must be an object")
            data = {}
        self.data = data
        self.used: set[str] = set()

    def text(self, key: str, default: str | None = None) -> str:
        self.used.add(key)
        if key not in self.data:
            if default is not None:
                return default
            self.report.add(f"{self.where}missing key {key}")
            return ""
        v = self.data[key]
        if not isinstance(v, str):
            self.report.add(f"{self.where}{key} must be a string")
            return ""
        return v

    def raw(self, key: str, required: bool = True):
        self.used.add(key)
        if key not in self.data:
            if required:
                self.report.add(f"{self.where}missing key {key}")
            return None
        return self.data[key]

    def extras(self) -> dict:
        return {k: v for k, v in self.data.items() if k not in self.used}


def _read_layout(data: Any, report: ValidationReport) -> GridLayout | None:
    r = _Reader(data, report, "layout.")
    rows, cols = r.raw("rows"), r.raw("cols")
    if not (_is_int(rows) and _is_int(cols)) or rows < 1 or cols < 1:
        report.add("layout rows/cols must be positive integers")
        return None
    order = r.raw("panel_order", required=False)
    if order is None:
        order = default_positions(rows, cols)
    elif not isinstance(order, list) or not all(isinstance(p, str) for p in order):
        report.add("layout.panel_order must be a list of labels")
        return None
    return GridLayout(rows, cols, tuple(order))


def _read_framework(data: Any, report: ValidationReport, **_) -> ProductNarrativeFramework:
    if isinstance(data, dict) and isinstance(data.get("product_narrative_framework"), dict) and len(data) == 1:
        data = data["product_narrative_framework"]
    r = _Reader(data, report)
    values = {name: r.text(name) for name in FRAMEWORK_FIELDS}
    return ProductNarrativeFramework(**values, extras=r.extras())


def _read_panel(position: str, data: Any, report: ValidationReport) -> PanelDecision:
    r = _Reader(data, report, f"panel {position}: ")
    hero_number = r.raw("hero_number")
    if hero_number is not None and not _is_int(hero_number):
        report.add(f"panel {position}: hero_number must be an integer")
    return PanelDecision(
        position=position,
        shot_scale=r.text("shot_scale"),
        hero_presence=r.text("hero_presence"),
        hero_number=hero_number if _is_int(hero_number) else 0,
        subject_emphasis=r.text("subject_emphasis"),
        spatial_composition=r.text("spatial_composition"),
        interaction=r.text("interaction"),
        extras=r.extras(),
    )


def _read_style(data: Any, report: ValidationReport) -> GlobalVisualStyle:
    r = _Reader(data, report, "global_visual_style.")
    if isinstance(data, dict) and "emotion_mood" not in data and "emotion" in data:
        # section-3.1 naming alias
        r.used.add("emotion")
        data = {**data, "emotion_mood": data["emotion"]}
        r.data = data
    values = {name: r.text(name) for name in STYLE_FIELDS}
    return GlobalVisualStyle(**values, extras=r.extras())


def _resolve_layout(r: _Reader, layout: GridLayout | None, report: ValidationReport) -> GridLayout | None:
    if "layout" in r.data:
        found = _read_layout(r.raw("layout"), report)
        if found is not None and layout is not None and found != layout:
            report.add(f"document layout {found.label} differs from expected {layout.label}")
        return found
    if layout is None:
        report.add("missing key layout")
    return layout


def _panel_map(r: _Reader, key: str, layout: GridLayout, report: ValidationReport) -> dict:
    """Panels either under ``key`` or as top-level position keys."""
    if key in r.data:
        raw = r.raw(key)
        if not isinstance(raw, dict):
            report.add(f"{key} must be an object")
            return {}
        return raw
    found = {p: r.data[p] for p in layout.panel_order if p in r.data}
    r.used.update(found)
    if not found:
        report.add(f"missing key {key}")
    return found


def _read_plan(data: Any, report: ValidationReport, layout: GridLayout | None = None, **_) -> PhotographicPlan:
    r = _Reader(data, report)
    lay = _resolve_layout(r, layout, report) or GridLayout(0, 0, ())
    raw_panels = _panel_map(r, "panels", lay, report)
    panels = {pos: _read_panel(pos, v, report) for pos, v in raw_panels.items()}
    style = _read_style(r.raw("global_visual_style"), report)
    return PhotographicPlan(lay, panels, style, extras=r.extras())


def _read_prompt_set(data: Any, report: ValidationReport, layout: GridLayout | None = None, **_) -> PromptSet:
    r = _Reader(data, report)
    lay = _resolve_layout(r, layout, report) or GridLayout(0, 0, ())
    prompts = _panel_map(r, "prompts", lay, report)
    for pos, v in prompts.items():
        if not isinstance(v, str):
            report.add(f"prompt {pos} must be a string")
    prompts = {p: v if isinstance(v, str) else "" for p, v in prompts.items()}
    return PromptSet(
        layout=lay,
        prompts=prompts,
        style_digest=r.text("style_digest", default=""),
        fidelity_block=r.text("fidelity_block", default=""),
        aesthetic_block=r.text("aesthetic_block", default=""),
        extras=r.extras(),
    )


def _read_transfer(data: Any, report: ValidationReport, layout: GridLayout | None = None, **_) -> TransferDirections:
    r = _Reader(data, report)
    lay = _resolve_layout(r, layout, report) or GridLayout(0, 0, ())
    roles = r.raw("panel_roles")
    if roles is not None and not isinstance(roles, dict):
        report.add("panel_roles must be an object")
        roles = None
    directives = r.raw("panel_directives")
    if directives is not None and not isinstance(directives, dict):
        report.add("panel_directives must be an object")
        directives = None
    return TransferDirections(
        layout=lay,
        abstract_narrative=r.text("abstract_narrative"),
        panel_roles={p: v if isinstance(v, str) else "" for p, v in (roles or {}).items()},
        panel_directives={p: _read_panel(p, v, report) for p, v in (directives or {}).items()},
        style=_read_style(r.raw("global_visual_style"), report),
        analysis_text=r.text("analysis_text", default=""),
        adaptation_notes=r.text("adaptation_notes", default=""),
        extras=r.extras(),
    )


def _read_score_map(data: Any, dims: tuple[str, ...], report: ValidationReport, where: str = ""):
    r = _Reader(data, report, where)
    scores: dict[str, Any] = {}
    reasons: dict[str, str] = {}
    for dim in dims:
        entry = r.raw(dim)
        if entry is None:
            scores[dim] = None
            continue
        if isinstance(entry, dict):
            scores[dim] = entry.get("score")
            reason = entry.get("reason", "")
            reasons[dim] = reason if isinstance(reason, str) else str(reason)
            if "score" not in entry:
                report.add(f"{where}{dim} missing score")
        else:
            scores[dim] = entry
    return scores, reasons, r.extras()


def _read_narrative(data: Any, report: ValidationReport, **_) -> NarrativeScores:
    scores, reasons, extras = _read_score_map(data, NARRATIVE_DIMS, report)
    return NarrativeScores(**scores, reasons=reasons, extras=extras)


def _read_photo(data: Any, report: ValidationReport, **_) -> PhotoScores:
    scores, reasons, extras = _read_score_map(data, PHOTO_DIMS, report)
    return PhotoScores(**scores, reasons=reasons, extras=extras)


def _read_suggestion(data: Any, report: ValidationReport, **_) -> Suggestion:
    r = _Reader(data, report)
    where_key = "where" if "where" in r.data or "where_" not in r.data else "where_"
    return Suggestion(
        gate=r.text("gate"), what=r.text("what"), where_=r.text(where_key), how=r.text("how"),
        extras=r.extras(),
    )


def _read_gates(data: Any, report: ValidationReport, **_) -> GateConfig:
    r = _Reader(data, report, "gates.")
    return GateConfig(
        tau_narr=r.raw("tau_narr"), tau_photo=r.raw("tau_photo"),
        gate_rule=r.text("gate_rule", default="min"),
    )


def _read_critique(data: Any, report: ValidationReport, **_) -> CritiqueReport:
    r = _Reader(data, report)
    r.used.update({"narrative_mean", "photo_mean"})
    gates = _read_gates(r.raw("gates"), report)
    narrative = _read_narrative(r.raw("narrative"), report)
    photo_raw = r.raw("photo", required=False)
    sug_raw = r.raw("suggestion", required=False)
    g1, g2 = r.raw("gate1_pass"), r.raw("gate2_pass", required=False)
    if not isinstance(g1, bool):
        report.add("gate1_pass must be a boolean")
    if g2 is not None and not isinstance(g2, bool):
        report.add("gate2_pass must be a boolean or null")
    return CritiqueReport(
        narrative=narrative,
        gate1_pass=bool(g1),
        photo=_read_photo(photo_raw, report) if photo_raw is not None else None,
        gate2_pass=g2 if isinstance(g2, bool) else None,
        suggestion=_read_suggestion(sug_raw, report) if sug_raw is not None else None,
        gates=gates,
        extras=r.extras(),
    )


def _read_layout_kind(data: Any, report: ValidationReport, **_) -> GridLayout:
    return _read_layout(data, report) or GridLayout(0, 0, ())


_READERS: dict[str, Callable] = {
    "layout": _read_layout_kind,
    "framework": _read_framework,
    "plan": _read_plan,
    "prompt_set": _read_prompt_set,
    "transfer": _read_transfer,
    "narrative_scores": _read_narrative,
    "photo_scores": _read_photo,
    "suggestion": _read_suggestion,
    "critique": _read_critique,
}

KINDS = tuple(_READERS)


def decode_json_text(text: str) -> Any:
    """Decode JSON, tolerating a surrounding markdown fence or prose."""
    if not isinstance(text, str):
        raise ParseError("expected text")
    stripped = text.strip()
    try:
        return json.loads(stripped)
    except json.JSONDecodeError:
        pass
    if "```" in stripped:
        inner = stripped.split("```")[1]
        if inner.lstrip().lower().startswith("json"):
            inner = inner.lstrip()[4:]
        try:
            return json.loads(inner)
        except json.JSONDecodeError:
            pass
    start, end = stripped.find("{"), stripped.rfind("}")
    if 0 <= start < end:
        try:
            return json.loads(stripped[start : end + 1])
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}") from exc
    raise ParseError("no JSON object found")


def parse_plan_json(text: str, kind: str, *, layout: GridLayout | None = None):
    """Decode ``text`` as a plan object of ``kind`` and validate it.

    Raises ParseError for undecodable text and SchemaError (with the full
    report) when the document decodes but breaks invariants.
    """
    if kind not in _READERS:
        raise PreconditionError(f"unknown kind {kind!r}; expected one of {KINDS}")
    data = decode_json_text(text)
    report = ValidationReport()
    obj = _READERS[kind](data, report, layout=layout)
    if report.ok:
        report.extend(validate(obj))
    if not report.ok:
        raise SchemaError(report)
    return obj


def field_diff(a: Any, b: Any) -> list[str]:
    """Names of dataclass fields whose values differ between a and b."""
    return [f.name for f in fields(a) if f.compare and getattr(a, f.name) != getattr(b, f.name)]


__all__ = [
    "CritiqueReport", "GateConfig", "GlobalVisualStyle", "GridLayout", "NarrativeScores",
    "PanelDecision", "PhotoScores", "PhotographicPlan", "PipelineState", "ProductInput",
    "ProductNarrativeFramework", "PromptSet", "Suggestion", "TransferDirections",
    "ValidationReport", "field_diff", "gate_passes", "load_image", "parse_plan_json",
    "replace", "serialize", "validate",
]
