"""Panel splitting, relation matrices and centered kernel alignment.

The matrices here are at most 9x9, so everything is plain Python floats
with ``math.fsum`` for the reductions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from PIL import Image

from ..errors import DegenerateEmbedding, DegenerateStructure, DimensionError, PreconditionError
from ..plan_model import GridLayout
from ..providers.base import EmbeddingProvider

NORM_EPS = 1e-12
TOL = 1e-9


def split_grid(collage: Image.Image, layout: GridLayout) -> list[Image.Image]:
    """Crop ``collage`` into equal panels, returned in ``layout.panel_order``."""
    w, h = collage.size
    if w % layout.cols or h % layout.rows:
        raise DimensionError(f"{w}x{h} image does not split into a {layout.label} grid")
    cw, ch = w // layout.cols, h // layout.rows
    return [
        collage.crop((c * cw, r * ch, (c + 1) * cw, (r + 1) * ch))
        for r in range(layout.rows)
        for c in range(layout.cols)
    ]


def join_grid(panels: Sequence[Image.Image], layout: GridLayout) -> Image.Image:
    """Inverse of split_grid."""
    if len(panels) != layout.panel_count:
        raise PreconditionError(f"need {layout.panel_count} panels, got {len(panels)}")
    cw, ch = panels[0].size
    out = Image.new(panels[0].mode, (cw * layout.cols, ch * layout.rows))
    for i, panel in enumerate(panels):
        r, c = divmod(i, layout.cols)
        out.paste(panel, (c * cw, r * ch))
    return out


@dataclass(frozen=True)
class RelationMatrix:
    values: tuple[tuple[float, ...], ...]

    @property
    def n(self) -> int:
        return len(self.values)

    def __post_init__(self):
        rows = tuple(tuple(float(v) for v in row) for row in self.values)
        if not rows or any(len(row) != len(rows) for row in rows):
            raise PreconditionError("relation matrix must be square and non-empty")
        object.__setattr__(self, "values", rows)

    def violations(self) -> list[str]:
        out = []
        for i in range(self.n):
            if abs(self.values[i][i] - 1.0) > TOL:
                out.append(f"diagonal entry {i} is {self.values[i][i]}")
            for j in range(self.n):
                v = self.values[i][j]
                if abs(v - self.values[j][i]) > TOL:
                    out.append(f"asymmetric at ({i},{j})")
                if not -1 - TOL <= v <= 1 + TOL:
                    out.append(f"entry ({i},{j}) = {v} outside [-1, 1]")
        return out

    def scaled(self, alpha: float) -> "RelationMatrix":
        return RelationMatrix(tuple(tuple(alpha * v for v in row) for row in self.values))

    def permuted(self, order: Sequence[int]) -> "RelationMatrix":
        return RelationMatrix(tuple(tuple(self.values[i][j] for j in order) for i in order))

    def to_list(self) -> list[list[float]]:
        return [list(row) for row in self.values]


def unit(vector: Sequence[float]) -> list[float]:
    norm = math.sqrt(math.fsum(v * v for v in vector))
    if norm < NORM_EPS:
        raise DegenerateEmbedding(f"embedding norm {norm:.3g} is too small to normalize")
    return [v / norm for v in vector]


def gram(units: Sequence[Sequence[float]]) -> RelationMatrix:
    n = len(units)
    rows = []
    for i in range(n):
        rows.append(tuple(math.fsum(a * b for a, b in zip(units[i], units[j])) for j in range(n)))
    # mirror the upper triangle so symmetry is exact
    rows = [tuple(rows[min(i, j)][max(i, j)] for j in range(n)) for i in range(n)]
    return RelationMatrix(tuple(rows))


def relation_matrix(panels: Sequence[Image.Image], embed: EmbeddingProvider) -> RelationMatrix:
    """Cosine-similarity matrix of the panels' embeddings."""
    if len(panels) < 2:
        raise PreconditionError("relation matrix needs at least 2 panels")
    return gram([unit(embed.embed_image(p).values) for p in panels])


def _centered(r: RelationMatrix) -> list[list[float]]:
    n = r.n
    v = r.values
    row_mean = [math.fsum(v[i]) / n for i in range(n)]
    col_mean = [math.fsum(v[i][j] for i in range(n)) / n for j in range(n)]
    grand = math.fsum(row_mean) / n
    return [[v[i][j] - row_mean[i] - col_mean[j] + grand for j in range(n)] for i in range(n)]


def cka(r_ref: RelationMatrix, r_gen: RelationMatrix) -> float:
    """Centered kernel alignment of two relation matrices of the same size."""
    if r_ref.n != r_gen.n:
        raise PreconditionError(f"matrix sizes differ: {r_ref.n} vs {r_gen.n}")
    a, b = _centered(r_ref), _centered(r_gen)
    norm_a = math.sqrt(math.fsum(x * x for row in a for x in row))
    norm_b = math.sqrt(math.fsum(x * x for row in b for x in row))
    if norm_a < NORM_EPS or norm_b < NORM_EPS:
        raise DegenerateStructure("a centered relation matrix is zero; panels carry no relational structure")
    inner = math.fsum(x * y for ra, rb in zip(a, b) for x, y in zip(ra, rb))
    return max(-1.0, min(1.0, inner / (norm_a * norm_b)))


def grid_cka(reference: Image.Image, generated: Image.Image, layout: GridLayout,
             embed: EmbeddingProvider) -> tuple[float, RelationMatrix, RelationMatrix]:
    r_ref = relation_matrix(split_grid(reference, layout), embed)
    r_gen = relation_matrix(split_grid(generated, layout), embed)
    return cka(r_ref, r_gen), r_ref, r_gen
