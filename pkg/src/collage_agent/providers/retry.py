"""Bounded exponential backoff with full jitter for live HTTP calls."""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from typing import Callable

import httpx

from ..errors import AuthError, ContentRefusal, RateLimited, TransportError

REFUSAL_MARKERS = ("content_policy", "safety", "moderation")


@dataclass
class RetryPolicy:
    attempts: int = 3
    base_delay: float = 0.5
    factor: float = 2.0
    sleep: Callable[[float], None] = time.sleep
    rng: random.Random = field(default_factory=random.Random)

    def delay(self, attempt: int) -> float:
        # full jitter: uniform in [0, base * factor**attempt]
        return self.rng.uniform(0.0, self.base_delay * self.factor**attempt)

    def send(self, do_request: Callable[[], httpx.Response]) -> httpx.Response:
        """Run ``do_request`` until success or the budget is spent.

        ``do_request`` must resend identical bytes on every call.
        """
        last: Exception | None = None
        for attempt in range(self.attempts):
            try:
                response = do_request()
            except httpx.HTTPError as exc:
                last = TransportError(f"network error: {exc}")
            else:
                status = response.status_code
                if status < 400:
                    return response
                if status in (401, 403):
                    raise AuthError(f"HTTP {status}: {response.text[:200]}")
                if status == 429:
                    last = RateLimited(f"HTTP 429 after {attempt + 1} attempt(s)")
                elif status >= 500:
                    last = TransportError(f"HTTP {status}: {response.text[:200]}")
                elif any(m in response.text.lower() for m in REFUSAL_MARKERS):
                    raise ContentRefusal(f"provider refused request: {response.text[:200]}")
                else:
                    raise TransportError(f"HTTP {status}: {response.text[:200]}")
            if attempt + 1 < self.attempts:
                self.sleep(self.delay(attempt))
        assert last is not None
        raise last
