"""Structured-output requests with a bounded repair loop."""

from __future__ import annotations

import logging
from typing import Callable, TypeVar

from .errors import MalformedPlan, ParseError, SchemaError
from .providers.base import ChatProvider, ChatRequest
from .templates import DEFAULT_LIBRARY, PromptLibrary

log = logging.getLogger(__name__)

T = TypeVar("T")

REPAIR_BUDGET = 2


def _violations(exc: Exception) -> list[str]:
    if isinstance(exc, SchemaError):
        return list(exc.report.violations)
    return [str(exc)]


def repair_parse(
    chat: ChatProvider,
    raw: str,
    kind: str,
    parse: Callable[[str], T],
    attempts_left: int,
    *,
    original: ChatRequest | None = None,
    library: PromptLibrary = DEFAULT_LIBRARY,
    temperature: float = 0.0,
    turns: list[dict] | None = None,
) -> T:
    """Parse ``raw``; on failure ask the model to fix it, up to ``attempts_left`` turns.

    Each repair turn quotes the violations and the previous answer, plus the
    original task so the model can answer it again. ``turns`` collects one
    record per repair turn issued.
    """
    try:
        return parse(raw)
    except (ParseError, SchemaError) as exc:
        problems = _violations(exc)
    if attempts_left <= 0:
        raise MalformedPlan(f"{kind} output still invalid after repair budget: {'; '.join(problems)}", problems)
    request = ChatRequest(
        system_prompt=library.render("repair", "system"),
        user_parts=[
            library.render(
                "repair",
                "user",
                kind=kind,
                violations="\n".join(f"- {p}" for p in problems),
                previous=raw,
                task=original.system_prompt if original else "",
                task_input=original.text if original else "",
            ),
            *(original.images if original else []),
        ],
        response_format_hint="structured_json",
        temperature=temperature,
    )
    log.info("repair turn for %s: %s", kind, "; ".join(problems))
    if turns is not None:
        turns.append({"kind": kind, "violations": problems})
    fixed = chat.chat_complete(request)
    return repair_parse(
        chat, fixed, kind, parse, attempts_left - 1,
        original=original, library=library, temperature=temperature, turns=turns,
    )


def request_structured(
    chat: ChatProvider,
    request: ChatRequest,
    kind: str,
    parse: Callable[[str], T],
    *,
    budget: int = REPAIR_BUDGET,
    library: PromptLibrary = DEFAULT_LIBRARY,
    repair_temperature: float = 0.0,
    turns: list[dict] | None = None,
) -> T:
    raw = chat.chat_complete(request)
    return repair_parse(
        chat, raw, kind, parse, budget,
        original=request, library=library, temperature=repair_temperature, turns=turns,
    )
