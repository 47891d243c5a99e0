"""Chat-completions gateway with timeouts, one retry, and a student-safe fallback.

One wire dialect (model, messages[], temperature, stream) covers local model
servers and hosted APIs alike. No failure mode ever surfaces to the student
path: transport errors, bad statuses, and mid-stream cuts all collapse into a
result carrying the configured fallback text, and the incident is logged to
`incidents.jsonl` for the operator.
"""

from __future__ import annotations

import asyncio
import json
import time
import urllib.parse
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, AsyncIterator, Awaitable, Callable

import httpx

from jelai.enrich.prompt import EnrichedPrompt
from jelai.gateway.mock import mock_stream, mock_text
from jelai.store import JsonlAppender

DEFAULT_FALLBACK_TEXT = "I'm having trouble responding right now — please try again in a moment."

_ROLE_MAP = {"student": "user", "tutor": "assistant", "system": "system"}

Sink = Callable[[str], Any]


class ConfigError(Exception):
    """Malformed model parameters; raised at startup, never on the student path."""


@dataclass(frozen=True, slots=True)
class ModelParams:
    model_name: str
    endpoint_base_url: str
    temperature: float = 0.7
    max_output_tokens: int = 1024
    api_key: str | None = None
    request_timeout_s: float = 60.0

    def __post_init__(self) -> None:
        problems = []
        if not self.model_name:
            problems.append("model_name must be nonempty")
        parsed = urllib.parse.urlparse(self.endpoint_base_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            problems.append(f"endpoint_base_url is not a valid http(s) URL: {self.endpoint_base_url!r}")
        if not (0.0 <= self.temperature <= 2.0):
            problems.append(f"temperature must be in [0, 2], got {self.temperature}")
        if self.max_output_tokens <= 0:
            problems.append(f"max_output_tokens must be positive, got {self.max_output_tokens}")
        if self.request_timeout_s <= 0:
            problems.append(f"request_timeout_s must be positive, got {self.request_timeout_s}")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass(frozen=True, slots=True)
class CompletionResult:
    text: str
    finish_reason: str  # stop | length | error_fallback
    latency_s: float
    backend: str  # remote | mock
    usage: tuple[int, int] | None = None  # (prompt_units, output_units)
    backend_service_time_s: float | None = None  # stamped by mock/stub backends

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "finish_reason": self.finish_reason,
            "latency_s": self.latency_s,
            "backend": self.backend,
            "usage": list(self.usage) if self.usage else None,
            "backend_service_time_s": self.backend_service_time_s,
        }


def _wire_messages(prompt: EnrichedPrompt) -> list[dict[str, str]]:
    messages = [{"role": "system", "content": prompt.system_text}]
    for role, text in prompt.messages:
        messages.append({"role": _ROLE_MAP.get(role, "user"), "content": text})
    return messages


def _request_body(prompt: EnrichedPrompt, params: ModelParams, stream: bool) -> dict[str, Any]:
    return {
        "model": params.model_name,
        "messages": _wire_messages(prompt),
        "temperature": params.temperature,
        "max_tokens": params.max_output_tokens,
        "stream": stream,
    }


def _parse_usage(doc: dict[str, Any]) -> tuple[int, int] | None:
    usage = doc.get("usage")
    if isinstance(usage, dict):
        prompt_units = usage.get("prompt_tokens")
        output_units = usage.get("completion_tokens")
        if isinstance(prompt_units, int) and isinstance(output_units, int):
            return (prompt_units, output_units)
    return None


def _service_time_s(doc: dict[str, Any] | None, headers: httpx.Headers | None) -> float | None:
    if doc is not None and isinstance(doc.get("service_time_ms"), (int, float)):
        return float(doc["service_time_ms"]) / 1000.0
    if headers is not None:
        raw = headers.get("x-service-time-ms")
        if raw is not None:
            try:
                return float(raw) / 1000.0
            except ValueError:
                return None
    return None


class GatewayRequestError(Exception):
    """Internal: one failed attempt against the backend."""


class LLMGateway:
    """Handles many in-flight completions with a global concurrency ceiling."""

    def __init__(
        self,
        fallback_text: str = DEFAULT_FALLBACK_TEXT,
        incident_log: JsonlAppender | None = None,
        use_mock: bool = False,
        mock_delay_s: float = 0.0,
        max_concurrent: int = 32,
    ) -> None:
        self.fallback_text = fallback_text
        self.incident_log = incident_log
        self.use_mock = use_mock
        self.mock_delay_s = mock_delay_s
        self.max_concurrent = max_concurrent
        self._gate = asyncio.Semaphore(max_concurrent)
        self._clients: dict[int, httpx.AsyncClient] = {}

    def _client(self) -> httpx.AsyncClient:
        # One client per event loop: connection pooling keeps per-request
        # overhead out of the latency measurement.
        key = id(asyncio.get_running_loop())
        client = self._clients.get(key)
        if client is None or client.is_closed:
            client = httpx.AsyncClient()
            self._clients[key] = client
        return client

    # -- incidents -----------------------------------------------------------

    def _record_incident(self, stage: str, params: ModelParams | None, error: str, attempts: int) -> None:
        if self.incident_log is None:
            return
        try:
            self.incident_log.append(
                {
                    "at": datetime.now(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z"),
                    "kind": "llm_failure",
                    "stage": stage,
                    "error": error,
                    "endpoint": params.endpoint_base_url if params else None,
                    "model": params.model_name if params else None,
                    "attempts": attempts,
                }
            )
        except Exception:
            pass  # incident logging must never break the student path

    def _fallback(self, started: float, backend: str, attempts: int, stage: str, params: ModelParams | None, error: str) -> CompletionResult:
        self._record_incident(stage, params, error, attempts)
        return CompletionResult(
            text=self.fallback_text,
            finish_reason="error_fallback",
            latency_s=time.monotonic() - started,
            backend=backend,
        )

    # -- non-streaming -------------------------------------------------------

    async def complete(self, prompt: EnrichedPrompt, params: ModelParams | None = None) -> CompletionResult:
        """Complete a prompt; on transport failure retry once, then fall back."""
        async with self._gate:
            if self.use_mock or params is None:
                return await self._mock_complete(prompt)
            started = time.monotonic()
            last_error = ""
            for attempt in (1, 2):
                try:
                    return await self._remote_complete(prompt, params)
                except GatewayRequestError as exc:
                    last_error = str(exc)
            return self._fallback(started, "remote", 2, "complete", params, last_error)

    async def _mock_complete(self, prompt: EnrichedPrompt) -> CompletionResult:
        started = time.monotonic()
        if self.mock_delay_s > 0:
            await asyncio.sleep(self.mock_delay_s)
        text = mock_text(prompt)
        elapsed = time.monotonic() - started
        return CompletionResult(
            text=text,
            finish_reason="stop",
            latency_s=elapsed,
            backend="mock",
            usage=(prompt.metadata.total_chars, len(text)),
            backend_service_time_s=elapsed,
        )

    async def _remote_complete(self, prompt: EnrichedPrompt, params: ModelParams) -> CompletionResult:
        headers = {"Content-Type": "application/json"}
        if params.api_key:
            headers["Authorization"] = f"Bearer {params.api_key}"
        url = params.endpoint_base_url.rstrip("/") + "/chat/completions"
        client = self._client()
        started = time.monotonic()
        try:
            response = await client.post(
                url,
                json=_request_body(prompt, params, stream=False),
                headers=headers,
                timeout=params.request_timeout_s,
            )
        except (httpx.HTTPError, OSError) as exc:
            raise GatewayRequestError(f"transport: {type(exc).__name__}: {exc}") from exc
        latency = time.monotonic() - started
        if response.status_code != 200:
            raise GatewayRequestError(f"http status {response.status_code}")
        try:
            doc = response.json()
            choice = doc["choices"][0]
            text = choice["message"]["content"]
            finish_reason = choice.get("finish_reason") or "stop"
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise GatewayRequestError(f"malformed response body: {exc}") from exc
        if finish_reason not in ("stop", "length"):
            finish_reason = "stop"
        return CompletionResult(
            text=text,
            finish_reason=finish_reason,
            latency_s=latency,
            backend="remote",
            usage=_parse_usage(doc),
            backend_service_time_s=_service_time_s(doc, response.headers),
        )

    # -- streaming -----------------------------------------------------------

    async def stream_complete(self, prompt: EnrichedPrompt, params: ModelParams | None, sink: Sink) -> CompletionResult:
        """As complete, but chunks are pushed to `sink` as they arrive.

        A failure before the first chunk retries once like complete(); a
        mid-stream failure delivers the fallback text as a terminal chunk.
        The final result's text equals the concatenation of delivered chunks,
        except on fallback where it is exactly the fallback text.
        """
        async with self._gate:
            if self.use_mock or params is None:
                return await self._mock_stream(prompt, sink)
            started = time.monotonic()
            last_error = ""
            for attempt in (1, 2):
                delivered: list[str] = []
                try:
                    return await self._remote_stream(prompt, params, sink, delivered)
                except GatewayRequestError as exc:
                    last_error = str(exc)
                    if delivered:
                        # Mid-stream cut: the partial text cannot be unsent, so
                        # terminate with the fallback instead of retrying.
                        await _deliver(sink, self.fallback_text)
                        return self._fallback(started, "remote", attempt, "stream", params, last_error)
            await _deliver(sink, self.fallback_text)
            return self._fallback(started, "remote", 2, "stream", params, last_error)

    async def _mock_stream(self, prompt: EnrichedPrompt, sink: Sink) -> CompletionResult:
        started = time.monotonic()
        parts: list[str] = []
        async for chunk in mock_stream(prompt, self.mock_delay_s):
            parts.append(chunk)
            await _deliver(sink, chunk)
        text = "".join(parts)
        elapsed = time.monotonic() - started
        return CompletionResult(
            text=text,
            finish_reason="stop",
            latency_s=elapsed,
            backend="mock",
            usage=(prompt.metadata.total_chars, len(text)),
            backend_service_time_s=elapsed,
        )

    async def _remote_stream(
        self,
        prompt: EnrichedPrompt,
        params: ModelParams,
        sink: Sink,
        delivered: list[str],
    ) -> CompletionResult:
        headers = {"Content-Type": "application/json", "Accept": "text/event-stream"}
        if params.api_key:
            headers["Authorization"] = f"Bearer {params.api_key}"
        url = params.endpoint_base_url.rstrip("/") + "/chat/completions"
        client = self._client()
        started = time.monotonic()
        usage: tuple[int, int] | None = None
        finish_reason = "stop"
        service_time: float | None = None
        try:
            async with client.stream(
                "POST",
                url,
                json=_request_body(prompt, params, stream=True),
                headers=headers,
                timeout=params.request_timeout_s,
            ) as response:
                if response.status_code != 200:
                    raise GatewayRequestError(f"http status {response.status_code}")
                service_time = _service_time_s(None, response.headers)
                async for data in _sse_data(response.aiter_lines()):
                    if data == "[DONE]":
                        break
                    try:
                        doc = json.loads(data)
                    except ValueError as exc:
                        raise GatewayRequestError(f"malformed stream chunk: {exc}") from exc
                    if doc.get("usage") is not None:
                        usage = _parse_usage(doc) or usage
                    choices = doc.get("choices") or []
                    if not choices:
                        continue
                    if choices[0].get("finish_reason"):
                        finish_reason = choices[0]["finish_reason"]
                    delta = (choices[0].get("delta") or {}).get("content")
                    if delta:
                        delivered.append(delta)
                        await _deliver(sink, delta)
        except (httpx.HTTPError, OSError) as exc:
            raise GatewayRequestError(f"transport: {type(exc).__name__}: {exc}") from exc
        if not delivered:
            raise GatewayRequestError("stream ended with no content")
        if finish_reason not in ("stop", "length"):
            finish_reason = "stop"
        return CompletionResult(
            text="".join(delivered),
            finish_reason=finish_reason,
            latency_s=time.monotonic() - started,
            backend="remote",
            usage=usage,
            backend_service_time_s=service_time,
        )


async def _deliver(sink: Sink, chunk: str) -> None:
    result = sink(chunk)
    if isinstance(result, Awaitable):
        await result


async def _sse_data(lines: AsyncIterator[str]) -> AsyncIterator[str]:
    async for line in lines:
        line = line.strip()
        if line.startswith("data:"):
            yield line[len("data:") :].strip()
