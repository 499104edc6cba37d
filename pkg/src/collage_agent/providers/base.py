"""Provider-neutral request types and the three capability interfaces."""

from __future__ import annotations

import base64
import hashlib
import io
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Literal, Sequence, Union

from PIL import Image

from ..errors import DecodeError, DimensionMismatch, PreconditionError

log = logging.getLogger(__name__)

Part = Union[str, Image.Image]


def encode_png(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def image_b64(img: Image.Image) -> str:
    return base64.b64encode(encode_png(img)).decode("ascii")


def image_digest(img: Image.Image) -> str:
    h = hashlib.sha256()
    h.update(f"{img.mode}:{img.size[0]}x{img.size[1]}:".encode())
    h.update(img.tobytes())
    return h.hexdigest()


def text_digest(text: str | bytes) -> str:
    data = text.encode("utf-8") if isinstance(text, str) else text
    return hashlib.sha256(data).hexdigest()


def _check_image(img) -> None:
    if not isinstance(img, Image.Image) or img.size[0] < 1 or img.size[1] < 1:
        raise PreconditionError("attached image does not decode")


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_parts: Sequence[Part]
    response_format_hint: Literal["free_text", "structured_json"] = "free_text"
    temperature: float = 0.7

    def check(self) -> None:
        if not self.user_parts:
            raise PreconditionError("chat request needs at least one user part")
        if self.temperature < 0:
            raise PreconditionError("temperature must be >= 0")
        for part in self.user_parts:
            if not isinstance(part, str):
                _check_image(part)

    @property
    def text(self) -> str:
        """All text parts joined; used by mocks and logs."""
        return "\n".join(p for p in self.user_parts if isinstance(p, str))

    @property
    def images(self) -> list[Image.Image]:
        return [p for p in self.user_parts if not isinstance(p, str)]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.system_prompt.encode())
        for p in self.user_parts:
            h.update(b"\x00T" + p.encode() if isinstance(p, str) else b"\x00I" + image_digest(p).encode())
        h.update(f"|{self.response_format_hint}|{self.temperature!r}".encode())
        return h.hexdigest()


@dataclass(frozen=True)
class ImageGenRequest:
    prompt_blocks: Sequence[str]
    condition_images: Sequence[Image.Image]
    target_width: int
    target_height: int
    rows: int = 2
    cols: int = 2

    def check(self) -> None:
        if not self.prompt_blocks or not any(b.strip() for b in self.prompt_blocks):
            raise PreconditionError("image request needs at least one prompt block")
        if not self.condition_images:
            raise PreconditionError("image request needs the packshot as a condition image")
        for img in self.condition_images:
            _check_image(img)
        if self.target_width % self.cols or self.target_height % self.rows:
            raise PreconditionError(
                f"{self.target_width}x{self.target_height} not divisible by grid {self.rows}x{self.cols}"
            )

    def digest(self) -> str:
        h = hashlib.sha256()
        for b in self.prompt_blocks:
            h.update(b"\x00B" + b.encode())
        for img in self.condition_images:
            h.update(b"\x00I" + image_digest(img).encode())
        h.update(f"|{self.target_width}x{self.target_height}|{self.rows}x{self.cols}".encode())
        return h.hexdigest()


@dataclass(frozen=True)
class GeneratedImage:
    image: Image.Image
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    source_digest: str

    @property
    def dimension(self) -> int:
        return len(self.values)


class ChatProvider:
    name = "chat"

    def __init__(self):
        self.calls: list[tuple[str, str]] = []

    def chat_complete(self, request: ChatRequest) -> str:
        request.check()
        response = self._complete(request)
        digest = request.digest()
        self.calls.append((digest, text_digest(response)))
        log.debug("chat %s request=%s response=%s", self.name, digest[:12], text_digest(response)[:12])
        return response

    def _complete(self, request: ChatRequest) -> str:
        raise NotImplementedError


class ImageProvider:
    name = "image"

    def __init__(self):
        self.calls: list[str] = []

    def generate_image(self, request: ImageGenRequest) -> GeneratedImage:
        request.check()
        self.calls.append(request.digest())
        img, meta = self._generate(request)
        meta = {"provider": self.name, "request_digest": request.digest(), **meta}
        target = (request.target_width, request.target_height)
        if img.size != target:
            meta["resized"] = True
            meta["provider_size"] = list(img.size)
            img = img.resize(target, Image.Resampling.LANCZOS)
        else:
            meta.setdefault("resized", False)
        return GeneratedImage(img.convert("RGB"), meta)

    def _generate(self, request: ImageGenRequest) -> tuple[Image.Image, dict]:
        raise NotImplementedError


class EmbeddingProvider:
    """Image encoder with a content-digest cache.

    Identical images cost one provider call; the cache is shared by all
    threads using this instance (values are identical by determinism, so
    last writer wins).
    """

    name = "embed"

    def __init__(self, dimension: int):
        if dimension < 2:
            raise PreconditionError("embedding dimension must be >= 2")
        self.dimension = dimension
        self.provider_calls = 0
        self._cache: dict[str, EmbeddingVector] = {}
        self._lock = threading.Lock()

    def embed_image(self, image: Image.Image) -> EmbeddingVector:
        _check_image(image)
        digest = image_digest(image)
        cached = self._cache.get(digest)
        if cached is not None:
            return cached
        with self._lock:
            self.provider_calls += 1
        values = [float(v) for v in self._embed(image)]
        if len(values) != self.dimension:
            raise DimensionMismatch(f"{self.name} declared d={self.dimension} but returned {len(values)}")
        if not all(math.isfinite(v) for v in values):
            raise DecodeError(f"{self.name} returned non-finite values")
        vec = EmbeddingVector(tuple(values), digest)
        self._cache[digest] = vec
        return vec

    def _embed(self, image: Image.Image) -> Sequence[float]:
        raise NotImplementedError
