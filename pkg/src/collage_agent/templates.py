"""Prompt templates shipped as data files under ``prompts/``.

A template file holds one or more parts introduced by ``==== name ====``
lines; files without headers are a single ``body`` part. Placeholders use
``$name`` syntax, so braces in templates and values need no escaping.
"""

from __future__ import annotations

import re
import string
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import PreconditionError

_HEADER = re.compile(r"^==== (\w+) ====$", re.MULTILINE)
_MARKER = re.compile(r"\[\[([A-Z0-9_]+)\]\]")


def parse_parts(text: str) -> dict[str, str]:
    pieces = _HEADER.split(text)
    if len(pieces) == 1:
        return {"body": text.strip()}
    return {name: body.strip("\n") for name, body in zip(pieces[1::2], pieces[2::2])}


class PromptLibrary:
    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory is not None else None

    def _read(self, name: str) -> str:
        if self.directory is not None:
            return (self.directory / f"{name}.txt").read_text(encoding="utf-8")
        return resources.files("collage_agent").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")

    def parts(self, name: str) -> dict[str, str]:
        return _parts_cached(self, name)

    def render(self, name: str, part: str = "body", **values) -> str:
        parts = self.parts(name)
        if part not in parts:
            raise PreconditionError(f"template {name} has no part {part!r}")
        values = {k: "" if v is None else str(v) for k, v in values.items()}
        try:
            return string.Template(parts[part]).substitute(values).strip()
        except KeyError as exc:
            raise PreconditionError(f"template {name}:{part} needs value {exc}") from exc

    def __hash__(self):
        return hash(self.directory)

    def __eq__(self, other):
        return isinstance(other, PromptLibrary) and other.directory == self.directory


@lru_cache(maxsize=None)
def _parts_cached(lib: PromptLibrary, name: str) -> dict[str, str]:
    return parse_parts(lib._read(name))


DEFAULT_LIBRARY = PromptLibrary()


def section(tag: str, body: str) -> str:
    return f"<<{tag}>>\n{body}\n<</{tag}>>"


def read_section(text: str, tag: str) -> str | None:
    """Body of the first ``<<tag>>`` section in ``text``, if present."""
    m = re.search(rf"<<{tag}>>\n(.*?)\n<</{tag}>>", text, re.DOTALL)
    return m.group(1) if m else None


def marker(system_prompt: str) -> str | None:
    m = _MARKER.search(system_prompt)
    return m.group(1) if m else None
