"""HTTP/JSON clients for hosted chat, image, and embedding models.

Wire formats follow the common OpenAI-style schemas: chat completions
with ``image_url`` data URIs, an image endpoint returning ``b64_json``,
and an embedding endpoint returning ``data[0].embedding``. Credentials
come from environment variables only.
"""

from __future__ import annotations

import base64
import io
import json
import os

import httpx
from PIL import Image, UnidentifiedImageError

from ..errors import AuthError, ContentRefusal, DecodeError, TransportError
from .base import (
    ChatProvider,
    ChatRequest,
    EmbeddingProvider,
    ImageGenRequest,
    ImageProvider,
    image_b64,
)
from .retry import REFUSAL_MARKERS, RetryPolicy

ENV_KEYS = {
    "chat": "COLLAGE_CHAT_API_KEY",
    "image": "COLLAGE_IMAGE_API_KEY",
    "embed": "COLLAGE_EMBED_API_KEY",
}


def credential(capability: str) -> str:
    key = os.environ.get(ENV_KEYS[capability], "")
    if not key:
        raise AuthError(f"environment variable {ENV_KEYS[capability]} is not set")
    return key


class _HttpMixin:
    def _init_http(self, endpoint, model, api_key, timeout, retry, client):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.retry = retry or RetryPolicy()
        self.client = client or httpx.Client(timeout=timeout)

    def _post(self, payload: dict) -> dict:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        response = self.retry.send(lambda: self.client.post(self.endpoint, content=body, headers=headers))
        try:
            return response.json()
        except ValueError as exc:
            raise TransportError(f"non-JSON response from {self.endpoint}") from exc


class LiveChat(_HttpMixin, ChatProvider):
    name = "live-chat"

    def __init__(self, endpoint: str, model: str, api_key: str, *, timeout: float = 120.0,
                 retry: RetryPolicy | None = None, client: httpx.Client | None = None):
        ChatProvider.__init__(self)
        self._init_http(endpoint, model, api_key, timeout, retry, client)

    def payload(self, request: ChatRequest) -> dict:
        content = []
        for part in request.user_parts:
            if isinstance(part, str):
                content.append({"type": "text", "text": part})
            else:
                url = "data:image/png;base64," + image_b64(part)
                content.append({"type": "image_url", "image_url": {"url": url}})
        payload = {
            "model": self.model,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": content},
            ],
        }
        if request.response_format_hint == "structured_json":
            payload["response_format"] = {"type": "json_object"}
        return payload

    def _complete(self, request: ChatRequest) -> str:
        data = self._post(self.payload(request))
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected chat response shape: {str(data)[:200]}") from exc


class LiveImageGenerator(_HttpMixin, ImageProvider):
    """Reference-conditioned image endpoint; all prompt blocks are joined
    into one prompt so the collage is synthesized in a single call."""

    name = "live-image"

    def __init__(self, endpoint: str, model: str, api_key: str, *, timeout: float = 300.0,
                 retry: RetryPolicy | None = None, client: httpx.Client | None = None):
        ImageProvider.__init__(self)
        self._init_http(endpoint, model, api_key, timeout, retry, client)

    def payload(self, request: ImageGenRequest) -> dict:
        return {
            "model": self.model,
            "prompt": "\n\n".join(request.prompt_blocks),
            "images": [image_b64(img) for img in request.condition_images],
            "size": f"{request.target_width}x{request.target_height}",
            "response_format": "b64_json",
        }

    def _generate(self, request: ImageGenRequest):
        data = self._post(self.payload(request))
        error = data.get("error") if isinstance(data, dict) else None
        if error:
            text = json.dumps(error).lower()
            if any(m in text for m in REFUSAL_MARKERS):
                raise ContentRefusal(f"provider refused request: {text[:200]}")
            raise TransportError(f"image provider error: {text[:200]}")
        try:
            raw = base64.b64decode(data["data"][0]["b64_json"])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise DecodeError("image response lacks data[0].b64_json") from exc
        try:
            img = Image.open(io.BytesIO(raw))
            img.load()
        except (UnidentifiedImageError, OSError) as exc:
            raise DecodeError(f"cannot decode generated image: {exc}") from exc
        return img, {"model": self.model}


class LiveEmbedder(_HttpMixin, EmbeddingProvider):
    name = "live-embed"

    def __init__(self, endpoint: str, model: str, api_key: str, dimension: int, *,
                 timeout: float = 60.0, retry: RetryPolicy | None = None,
                 client: httpx.Client | None = None):
        EmbeddingProvider.__init__(self, dimension)
        self._init_http(endpoint, model, api_key, timeout, retry, client)

    def _embed(self, image):
        data = self._post({"model": self.model, "input": [image_b64(image)]})
        try:
            return data["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise DecodeError("embedding response lacks data[0].embedding") from exc
