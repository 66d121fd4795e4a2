"""HTTP client for a chat-completion style model endpoint, plus offline replay.

Request body::

    {"model": str, "temperature": float,
     "messages": [{"role": "system", "content": str}, {"role": "user", "content": str}]}

The reply must carry ``choices[0].message.content`` as a string. The bearer
token is read from ``FACTFIN_LLM_KEY``. Timeouts, connection failures, 429
and 5xx answers are retried with exponential backoff; other 4xx answers and
malformed bodies fail at once. Every attempt is appended to the transcript
(JSONL) when one is configured; ``ReplayBackend`` answers from it offline.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Callable

import httpx

from factfin.errors import ConfigurationError, FactFinError

if TYPE_CHECKING:
    from factfin.generator.backends import GeneratorRequest

log = logging.getLogger(__name__)

KEY_ENV = "FACTFIN_LLM_KEY"
SYSTEM_PROMPT = "Reply with trading rules in one fenced block. Use only the provided inputs."


class GatewayError(FactFinError):
    """Any transport-level failure talking to the model endpoint."""


class GatewayTimeout(GatewayError):
    pass


class GatewayUnreachable(GatewayError):
    pass


class GatewayStatusError(GatewayError):
    def __init__(self, status: int, body: str = ""):
        self.status = status
        super().__init__(f"endpoint answered HTTP {status}: {body[:200]}")


class GatewayContractError(GatewayError):
    pass


@dataclass(frozen=True)
class GatewayConfig:
    url: str
    model: str
    timeout: float = 30.0
    max_attempts: int = 3
    backoff: float = 0.5
    transcript: str | None = None

    def __post_init__(self):
        if not self.url:
            raise ConfigurationError("gateway url is not configured")
        if self.max_attempts < 1 or self.timeout <= 0 or self.backoff < 0:
            raise ConfigurationError("gateway max_attempts >= 1, timeout > 0 and backoff >= 0 are required")


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


class GatewayBackend:
    def __init__(self, config: GatewayConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep, clock: Callable[[], str] = _now):
        self.config = config
        self.sleep = sleep
        self.clock = clock
        self.attempts = 0  # attempts made by the last call
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.client = httpx.Client(transport=transport, timeout=config.timeout, headers=headers)

    def payload(self, request: GeneratorRequest) -> dict:
        return {"model": self.config.model, "temperature": request.temperature,
                "messages": [{"role": "system", "content": SYSTEM_PROMPT},
                             {"role": "user", "content": request.prompt}]}

    def _log(self, body: dict, response: dict, attempt: int) -> None:
        if self.config.transcript:
            rec = {"request": body, "response": response, "timestamp": self.clock(), "attempt": attempt}
            with open(self.config.transcript, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def _once(self, body: dict, timeout: float) -> str:
        try:
            resp = self.client.post(self.config.url, json=body, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise GatewayTimeout(f"request timed out: {exc}") from exc
        except httpx.TransportError as exc:
            raise GatewayUnreachable(f"endpoint unreachable: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise GatewayStatusError(resp.status_code, resp.text)
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise GatewayContractError(f"reply does not match the chat-completion contract: {exc}") from exc
        if not isinstance(content, str):
            raise GatewayContractError("choices[0].message.content is not a string")
        return content

    @staticmethod
    def _retryable(exc: GatewayError) -> bool:
        if isinstance(exc, GatewayStatusError):
            return exc.status == 429 or exc.status >= 500
        return isinstance(exc, (GatewayTimeout, GatewayUnreachable))

    def complete(self, request: GeneratorRequest) -> str:
        body = self.payload(request)
        timeout = min(self.config.timeout, request.timeout)
        for attempt in range(1, self.config.max_attempts + 1):
            self.attempts = attempt
            try:
                text = self._once(body, timeout)
            except GatewayError as exc:
                self._log(body, {"error": type(exc).__name__, "detail": str(exc)}, attempt)
                if not self._retryable(exc) or attempt == self.config.max_attempts:
                    raise
                delay = self.config.backoff * 2 ** (attempt - 1)
                log.warning("gateway attempt %d failed (%s); retrying in %.2fs", attempt, exc, delay)
                self.sleep(delay)
                continue
            self._log(body, {"content": text}, attempt)
            return text
        raise AssertionError("unreachable")


class ReplayBackend:
    """Answers requests from a transcript; each successful record is used once, in order."""

    def __init__(self, transcript: str | Path, model: str | None = None):
        self.records = []
        for i, line in enumerate(Path(transcript).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GatewayContractError(f"transcript line {i} is not JSON: {exc}") from exc
            if "content" in rec.get("response", {}):
                self.records.append(rec)
        self.used: set[int] = set()

    @staticmethod
    def _prompt(body: dict) -> str:
        return body["messages"][-1]["content"]

    def complete(self, request: GeneratorRequest) -> str:
        for i, rec in enumerate(self.records):
            if i not in self.used and self._prompt(rec["request"]) == request.prompt:
                self.used.add(i)
                return rec["response"]["content"]
        raise GatewayContractError("no transcript record for this prompt")
