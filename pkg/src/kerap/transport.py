"""JSON-over-HTTP POST with bounded exponential backoff."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass

import httpx

logger = logging.getLogger(__name__)


class TransportError(Exception):
    def __init__(self, message: str, *, status: int | None, attempts: int, retryable: bool) -> None:
        super().__init__(message)
        self.status = status
        self.attempts = attempts
        self.retryable = retryable

    def __str__(self) -> str:
        return f"{self.args[0]} (status={self.status}, attempts={self.attempts})"


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 5
    base_delay: float = 1.0
    max_delay: float = 30.0

    def delay(self, attempt: int) -> float:
        return min(self.max_delay, self.base_delay * 2 ** (attempt - 1))


def is_retryable(status: int) -> bool:
    return status == 429 or status >= 500


def post_json(
    client: httpx.Client,
    url: str,
    payload: dict,
    *,
    headers: dict[str, str] | None = None,
    policy: RetryPolicy = RetryPolicy(),
    sleep: Callable[[float], None] = time.sleep,
) -> dict:
    """POST ``payload`` and return the decoded JSON body.

    429 and 5xx responses and connection errors are retried; other 4xx fail at once.
    """
    attempt = 0
    while True:
        attempt += 1
        try:
            resp = client.post(url, json=payload, headers=headers)
        except httpx.TransportError as exc:
            err = TransportError(f"connection failed: {exc}", status=None, attempts=attempt, retryable=True)
        else:
            if resp.status_code < 400:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise TransportError(
                        f"invalid JSON body: {exc}", status=resp.status_code, attempts=attempt, retryable=False
                    ) from None
            retryable = is_retryable(resp.status_code)
            err = TransportError(
                f"HTTP {resp.status_code}: {resp.text[:200]}",
                status=resp.status_code,
                attempts=attempt,
                retryable=retryable,
            )
            if not retryable:
                raise err
        if attempt >= policy.max_attempts:
            raise err
        wait = policy.delay(attempt)
        logger.warning("retrying request", extra={"url": url, "attempt": attempt, "status": err.status, "wait_s": wait})
        sleep(wait)
