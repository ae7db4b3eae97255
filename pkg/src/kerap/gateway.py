"""Chat-completion gateway with live, record and replay backends plus token metering."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import httpx
import yaml

from .transport import RetryPolicy, TransportError, post_json

logger = logging.getLogger(__name__)

API_KEY_ENV = "KERAP_API_KEY"
BASE_URL_ENV = "KERAP_BASE_URL"
DEFAULT_BASE_URL = "https://api.openai.com/v1"


class GatewayError(Exception):
    pass


class ConfigurationError(GatewayError):
    pass


class CassetteMissError(GatewayError):
    def __init__(self, fingerprint: str) -> None:
        super().__init__(f"no cassette entry for request fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class Mode(str, Enum):
    LIVE = "live"
    REPLAY = "replay"
    RECORD = "record"


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role(self.role))
        if not self.content:
            raise ValueError("message content must be nonempty")

    def to_dict(self) -> dict:
        return {"role": self.role.value, "content": self.content}


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "temperature", float(self.temperature))
        if not self.messages:
            raise ValueError("messages must be nonempty")
        if self.messages[0].role is Role.ASSISTANT:
            raise ValueError("conversation must begin with a system or user message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if not self.model:
            raise ValueError("model must be nonempty")

    def fingerprint(self) -> str:
        """SHA-256 over model, messages and temperature in canonical JSON."""
        blob = json.dumps(
            {
                "model": self.model,
                "messages": [m.to_dict() for m in self.messages],
                "temperature": self.temperature,
            },
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=False,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LlmSettings:
    """Per-agent request parameters. Temperature defaults to 0 for reproducibility."""

    model: str = "gpt-4o-mini"
    temperature: float = 0.0
    max_tokens: int = 512

    def request(self, *turns: tuple[str, str]) -> CompletionRequest:
        return CompletionRequest(
            self.model,
            tuple(ChatMessage(Role(r), c) for r, c in turns),
            self.temperature,
            self.max_tokens,
        )


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: TokenUsage) -> TokenUsage:
        return TokenUsage(self.prompt_tokens + other.prompt_tokens, self.completion_tokens + other.completion_tokens)

    def to_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> TokenUsage:
        usage = cls(int(d.get("prompt_tokens", 0)), int(d.get("completion_tokens", 0)))
        if "total_tokens" in d and int(d["total_tokens"]) != usage.total_tokens:
            raise GatewayError(f"inconsistent usage record: {dict(d)}")
        return usage

    @staticmethod
    def sum(usages: Iterable[TokenUsage]) -> TokenUsage:
        p = c = 0
        for u in usages:
            p += u.prompt_tokens
            c += u.completion_tokens
        return TokenUsage(p, c)


@dataclass(frozen=True)
class Completion:
    text: str
    usage: TokenUsage
    fingerprint: str
    latency_s: float = 0.0


# --------------------------------------------------------------------------- pricing


@dataclass(frozen=True)
class ModelPrice:
    input_per_million: float
    output_per_million: float

    def __post_init__(self) -> None:
        if self.input_per_million < 0 or self.output_per_million < 0:
            raise ConfigurationError("prices must be >= 0")


@dataclass(frozen=True)
class PricingTable:
    models: Mapping[str, ModelPrice]

    @classmethod
    def from_dict(cls, data: Mapping) -> PricingTable:
        models = {
            name: ModelPrice(float(p["input_per_million"]), float(p["output_per_million"]))
            for name, p in (data.get("models") or {}).items()
        }
        return cls(models)

    @classmethod
    def load(cls, path: str | Path) -> PricingTable:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def price(self, model: str) -> ModelPrice:
        try:
            return self.models[model]
        except KeyError:
            raise ConfigurationError(f"model {model!r} missing from pricing table") from None


@dataclass(frozen=True)
class CostReport:
    prompt_tokens: int
    completion_tokens: int
    token_cost: float
    wall_time: float

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_dict(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
            "token_cost": self.token_cost,
            "wall_time_s": self.wall_time,
        }


def meter(usages: Iterable[TokenUsage], pricing: PricingTable, model: str, wall_time: float = 0.0) -> CostReport:
    """Total tokens and currency cost. Counts are summed before pricing, so the
    result does not depend on the order of ``usages``."""
    price = pricing.price(model)
    total = TokenUsage.sum(usages)
    cost = (
        total.prompt_tokens * price.input_per_million / 1e6
        + total.completion_tokens * price.output_per_million / 1e6
    )
    return CostReport(total.prompt_tokens, total.completion_tokens, cost, wall_time)


# --------------------------------------------------------------------------- cassette


@dataclass(frozen=True)
class CassetteEntry:
    fingerprint: str
    model: str
    temperature: float
    messages: tuple[dict, ...]
    response: str
    usage: TokenUsage
    latency_s: float = 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "fingerprint": self.fingerprint,
                "model": self.model,
                "temperature": self.temperature,
                "messages": list(self.messages),
                "response": self.response,
                "usage": self.usage.to_dict(),
                "latency_s": self.latency_s,
            },
            sort_keys=True,
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> CassetteEntry:
        d = json.loads(line)
        return cls(
            d["fingerprint"],
            d["model"],
            float(d["temperature"]),
            tuple(d["messages"]),
            d["response"],
            TokenUsage.from_dict(d["usage"]),
            float(d.get("latency_s", 0.0)),
        )


class Cassette:
    """Fingerprint-keyed store of recorded completions, persisted as JSON lines."""

    def __init__(self, entries: Iterable[CassetteEntry] = ()) -> None:
        self._entries: dict[str, CassetteEntry] = {}
        self._lock = threading.Lock()
        for e in entries:
            if e.fingerprint in self._entries:
                raise GatewayError(f"duplicate cassette fingerprint {e.fingerprint}")
            self._entries[e.fingerprint] = e

    @classmethod
    def load(cls, path: str | Path) -> Cassette:
        path = Path(path)
        if not path.exists():
            return cls()
        with open(path, encoding="utf-8") as fh:
            return cls(CassetteEntry.from_json(line) for line in fh if line.strip())

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, fingerprint: object) -> bool:
        return fingerprint in self._entries

    def get(self, fingerprint: str) -> CassetteEntry | None:
        return self._entries.get(fingerprint)

    def entries(self) -> list[CassetteEntry]:
        return [self._entries[k] for k in sorted(self._entries)]

    def put(self, entry: CassetteEntry) -> None:
        with self._lock:
            self._entries[entry.fingerprint] = entry

    def save(self, path: str | Path) -> None:
        """Write entries sorted by fingerprint so the file is byte-stable."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with self._lock, open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            for key in sorted(self._entries):
                fh.write(self._entries[key].to_json() + "\n")
        os.replace(tmp, path)


# --------------------------------------------------------------------------- backends

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def estimate_tokens(text: str) -> int:
    """Rough word-piece count used by offline backends that have no tokenizer."""
    return len(_TOKEN_RE.findall(text))


class LiveBackend:
    """OpenAI-compatible ``/chat/completions`` client."""

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        retry: RetryPolicy = RetryPolicy(),
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.url = (base_url or os.environ.get(BASE_URL_ENV) or DEFAULT_BASE_URL).rstrip("/") + "/chat/completions"
        self._api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self._retry = retry
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=timeout)

    def __repr__(self) -> str:
        return f"LiveBackend(url={self.url!r})"

    def complete(self, req: CompletionRequest) -> Completion:
        payload = {
            "model": req.model,
            "messages": [m.to_dict() for m in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self._api_key}"} if self._api_key else None
        t0 = time.perf_counter()
        body = post_json(self._client, self.url, payload, headers=headers, policy=self._retry, sleep=self._sleep)
        latency = time.perf_counter() - t0
        try:
            text = body["choices"][0]["message"]["content"]
            usage = TokenUsage.from_dict(body["usage"])
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"unexpected completion body: missing {exc}") from None
        return Completion(text or "", usage, req.fingerprint(), latency)


class FunctionBackend:
    """Answers with a Python callable. For offline fixtures and tests.

    ``fn`` returns either the response text or ``(text, TokenUsage)``; when no
    usage is given it is estimated with :func:`estimate_tokens`.
    """

    def __init__(self, fn: Callable[[CompletionRequest], str | tuple[str, TokenUsage]], seconds_per_token: float = 0.0) -> None:
        self._fn = fn
        self._spt = seconds_per_token

    def complete(self, req: CompletionRequest) -> Completion:
        out = self._fn(req)
        if isinstance(out, tuple):
            text, usage = out
        else:
            text = out
            prompt = sum(estimate_tokens(m.content) + 4 for m in req.messages)
            usage = TokenUsage(prompt, estimate_tokens(text))
        latency = round(usage.total_tokens * self._spt, 6)
        return Completion(text, usage, req.fingerprint(), latency)


class ReplayBackend:
    def __init__(self, cassette: Cassette) -> None:
        self.cassette = cassette

    def complete(self, req: CompletionRequest) -> Completion:
        fp = req.fingerprint()
        entry = self.cassette.get(fp)
        if entry is None:
            raise CassetteMissError(fp)
        return Completion(entry.response, entry.usage, fp, entry.latency_s)


class RecordBackend:
    """Calls ``inner`` and stores every result in the cassette."""

    def __init__(self, inner, cassette: Cassette, path: str | Path | None = None) -> None:
        self.inner = inner
        self.cassette = cassette
        self.path = path

    def complete(self, req: CompletionRequest) -> Completion:
        result = self.inner.complete(req)
        self.cassette.put(
            CassetteEntry(
                result.fingerprint,
                req.model,
                req.temperature,
                tuple(m.to_dict() for m in req.messages),
                result.text,
                result.usage,
                result.latency_s,
            )
        )
        return result

    def flush(self) -> None:
        if self.path is not None:
            self.cassette.save(self.path)


# --------------------------------------------------------------------------- gateway


class RateLimiter:
    """Spaces request starts at least ``60 / per_minute`` seconds apart."""

    def __init__(self, per_minute: float | None, clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep) -> None:
        self._interval = 60.0 / per_minute if per_minute else 0.0
        self._clock = clock
        self._sleep = sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if not self._interval:
            return
        with self._lock:
            now = self._clock()
            start = max(now, self._next)
            self._next = start + self._interval
        if start > now:
            self._sleep(start - now)


@dataclass
class Gateway:
    """Shared entry point for every agent's LLM call.

    Keeps a ledger of every completion served so costs can be audited against
    the cassette.
    """

    backend: object
    rate_limit_per_minute: float | None = None
    max_in_flight: int = 4
    _ledger: list[Completion] = field(default_factory=list, init=False, repr=False)

    def __post_init__(self) -> None:
        self._limiter = RateLimiter(self.rate_limit_per_minute)
        self._slots = threading.BoundedSemaphore(max(1, self.max_in_flight))
        self._lock = threading.Lock()

    def complete(self, req: CompletionRequest) -> Completion:
        self._limiter.acquire()
        with self._slots:
            result = self.backend.complete(req)
        with self._lock:
            self._ledger.append(result)
        logger.debug("completion", extra={"fingerprint": result.fingerprint[:12], "tokens": result.usage.total_tokens})
        return result

    def ledger(self) -> list[Completion]:
        with self._lock:
            return list(self._ledger)

    def close(self) -> None:
        flush = getattr(self.backend, "flush", None)
        if flush is not None:
            flush()


def make_gateway(
    mode: Mode | str,
    cassette_path: str | Path | None = None,
    *,
    base_url: str | None = None,
    api_key: str | None = None,
    retry: RetryPolicy = RetryPolicy(),
    rate_limit_per_minute: float | None = None,
    max_in_flight: int = 4,
    inner=None,
) -> Gateway:
    """Build a gateway for ``mode``. ``inner`` replaces the HTTP backend when recording."""
    mode = Mode(mode)
    if mode is Mode.REPLAY:
        if cassette_path is None or not Path(cassette_path).exists():
            raise ConfigurationError(f"replay mode needs an existing cassette, got {cassette_path}")
        backend = ReplayBackend(Cassette.load(cassette_path))
    else:
        live = inner or LiveBackend(base_url, api_key, retry=retry)
        if mode is Mode.RECORD:
            if cassette_path is None:
                raise ConfigurationError("record mode needs a cassette path")
            backend = RecordBackend(live, Cassette.load(cassette_path), cassette_path)
        else:
            backend = live
    return Gateway(backend, rate_limit_per_minute, max_in_flight)
