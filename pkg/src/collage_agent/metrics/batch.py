"""Batch scoring of finished collages into results.json / results.csv."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from ..errors import CollageError, IoError, PreconditionError
from ..persist import atomic_write_json, atomic_write_text
from ..plan_model import GridLayout, load_image
from ..providers.base import ChatProvider, EmbeddingProvider
from .rubric import rubric_columns, score_reference_transfer, score_visual_quality
from .structure import grid_cka

log = logging.getLogger(__name__)

TRANSFER_COLUMNS = ["transfer.grid_plan", "transfer.narrative_logic", "transfer.product_fit", "transfer.verdict"]
MEAN_ITEM = "(mean)"


@dataclass(frozen=True)
class EvalItem:
    item: str
    mode: str
    collage: Path
    group: str = "default"
    reference: Path | None = None
    packshot: Path | None = None
    layout: GridLayout = field(default_factory=lambda: GridLayout.of(2, 2))


def load_manifest(path: str | Path) -> list[EvalItem]:
    """Read a JSON manifest: a list of records, or an object with an ``items`` list.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    except ValueError as exc:
        raise PreconditionError(f"manifest {path} is not valid JSON: {exc}") from exc
    records = data.get("items") if isinstance(data, dict) else data
    if not isinstance(records, list):
        raise PreconditionError("manifest must be a list of items")
    base = path.parent

    def resolve(p):
        return None if p in (None, "") else (base / p)

    items = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or "collage" not in rec:
            raise PreconditionError(f"manifest item {i} needs at least a collage path")
        mode = rec.get("mode", "creation")
        if mode not in ("creation", "reference"):
            raise PreconditionError(f"manifest item {i} has unknown mode {mode!r}")
        if mode == "reference" and not rec.get("reference"):
            raise PreconditionError(f"manifest item {i} is reference mode without a reference path")
        items.append(EvalItem(
            item=str(rec.get("item") or rec.get("id") or Path(rec["collage"]).stem),
            mode=mode,
            collage=resolve(rec["collage"]),
            group=str(rec.get("group", "default")),
            reference=resolve(rec.get("reference")),
            packshot=resolve(rec.get("packshot")),
            layout=GridLayout.parse(rec.get("layout", "2x2")),
        ))
    return items


def load_external_scores(path: str | Path) -> dict[str, float]:
    """Sidecar of precomputed scores: JSON ``{item: score}`` or CSV with item,external_score."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read external scores {path}: {exc}") from exc
    if path.suffix.lower() == ".csv":
        return {row["item"]: float(row["external_score"]) for row in csv.DictReader(io.StringIO(text))}
    return {str(k): float(v) for k, v in json.loads(text).items()}


def columns_for(items: Sequence[EvalItem], with_external: bool) -> list[str]:
    cols = ["group", "item", *rubric_columns()]
    if any(it.mode == "reference" for it in items):
        cols += [*TRANSFER_COLUMNS, "cka"]
    if with_external:
        cols.append("external_score")
    cols.append("error")
    return cols


@dataclass
class BatchResult:
    columns: list[str]
    rows: list[dict[str, Any]]
    means: list[dict[str, Any]]

    @property
    def failures(self) -> int:
        return sum(1 for r in self.rows if r.get("error"))

    def table(self) -> list[dict[str, Any]]:
        return [*self.rows, *self.means]


def evaluate_item(item: EvalItem, chat: ChatProvider, embed: EmbeddingProvider | None) -> dict[str, Any]:
    row: dict[str, Any] = {"group": item.group, "item": item.item}
    collage = load_image(item.collage)
    row.update(score_visual_quality(collage, chat, item.layout).flat())
    if item.mode == "reference":
        reference = load_image(item.reference)
        row.update(score_reference_transfer(reference, collage, chat, item.layout).flat())
        if embed is None:
            raise PreconditionError("reference items need an embedding provider for cka")
        row["cka"] = grid_cka(reference, collage, item.layout, embed)[0]
    return row


def _safe(item: EvalItem, chat, embed) -> dict[str, Any]:
    try:
        return evaluate_item(item, chat, embed)
    except (CollageError, OSError) as exc:
        log.warning("item %s failed: %s", item.item, exc)
        return {"group": item.group, "item": item.item, "error": f"{type(exc).__name__}: {exc}"}


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def group_means(rows: Sequence[dict], columns: Sequence[str]) -> list[dict[str, Any]]:
    """One row per group averaging every numeric column over the rows that have it."""
    groups: dict[str, list[dict]] = {}
    for row in rows:
        if not row.get("error"):
            groups.setdefault(row["group"], []).append(row)
    means = []
    for group, members in groups.items():
        mean: dict[str, Any] = {"group": group, "item": MEAN_ITEM}
        for col in columns:
            values = [r[col] for r in members if _is_number(r.get(col))]
            if values:
                mean[col] = math.fsum(values) / len(values)
        means.append(mean)
    return means


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_csv(result: BatchResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(result.columns)
    for row in result.table():
        writer.writerow([_cell(row.get(c)) for c in result.columns])
    return buf.getvalue()


def to_markdown(result: BatchResult) -> str:
    def fmt(v):
        return f"{v:.3f}" if isinstance(v, float) else _cell(v)

    lines = ["| " + " | ".join(result.columns) + " |", "|" + "---|" * len(result.columns)]
    for row in result.table():
        lines.append("| " + " | ".join(fmt(row.get(c)) for c in result.columns) + " |")
    return "\n".join(lines) + "\n"


def batch_evaluate(
    manifest: Sequence[EvalItem],
    chat: ChatProvider,
    embed: EmbeddingProvider | None,
    out: str | Path,
    *,
    parallelism: int = 4,
    external_scores: dict[str, float] | None = None,
) -> BatchResult:
    """Score every item, then write results.json, results.csv and results.md under ``out``.

    A failing item becomes a row with only ``error`` filled; the rest of the
    batch still runs.
    """
    if parallelism < 1:
        raise PreconditionError("parallelism must be >= 1")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output dir {out}: {exc}") from exc
    columns = columns_for(manifest, external_scores is not None)
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        rows = list(pool.map(lambda it: _safe(it, chat, embed), manifest))
    if external_scores is not None:
        for row in rows:
            if row["item"] in external_scores:
                row["external_score"] = external_scores[row["item"]]
    result = BatchResult(columns, rows, group_means(rows, [c for c in columns if c not in ("group", "item")]))
    atomic_write_json(out / "results.json", {
        "columns": columns,
        "rows": [{c: row.get(c) for c in columns} for row in rows],
        "means": [{c: row.get(c) for c in columns if c != "error"} for row in result.means],
    })
    atomic_write_text(out / "results.csv", to_csv(result))
    atomic_write_text(out / "results.md", to_markdown(result))
    return result
