"""Streaming client for OpenAI-compatible text-completion endpoints.

Wire shape: ``POST /v1/completions`` with
``{model, prompt, temperature, top_p, max_tokens, stop, stream: true, seed?}``,
responses as server-sent-event lines
``data: {"choices": [{"text": ..., "finish_reason": ...}]}`` terminated by
``data: [DONE]``.

Stop sequences are sent to the server and additionally enforced on the
accumulated client-side text, so semantics match the scripted mock even
when the server chunks arbitrarily. When the server cuts a stop itself,
the stop index is unknown and reported as None.
"""

from __future__ import annotations

import asyncio
import json
import os
from typing import AsyncIterator

import httpx

from ..errors import BackendError, BackendUnreachable
from ..runtime import CancelToken, race_cancel
from .base import (
    CompletionChunk,
    CompletionRequest,
    CompletionResult,
    FinishKind,
    FinishReason,
    StopScanner,
    collect,
)

BASE_URL_ENV = "TIRKIT_BACKEND_URL"
API_KEY_ENV = "TIRKIT_API_KEY"


class HttpCompletionStream:
    def __init__(self, client: httpx.AsyncClient, payload: dict, request: CompletionRequest):
        self._client = client
        self._payload = payload
        self._request = request
        self._token = CancelToken()
        self.usage_tokens: int | None = None
        self.usage_reported = False

    def cancel(self) -> None:
        self._token.cancel()

    def __aiter__(self) -> AsyncIterator[CompletionChunk]:
        return self._run()

    async def _remaining(self) -> float | None:
        if self._request.deadline is None:
            return None
        return self._request.deadline - asyncio.get_running_loop().time()

    async def _run(self) -> AsyncIterator[CompletionChunk]:
        scanner = StopScanner(self._request.params.stop_sequences)
        server_finish: str | None = None
        try:
            async with self._client.stream("POST", "/v1/completions", json=self._payload) as resp:
                if resp.status_code != 200:
                    body = (await resp.aread()).decode("utf-8", "replace")
                    raise BackendError(resp.status_code, body)
                lines = resp.aiter_lines()
                while True:
                    remaining = await self._remaining()
                    if remaining is not None and remaining <= 0:
                        yield CompletionChunk(scanner.flush(), FinishReason(FinishKind.DEADLINE))
                        return
                    finished, line = await race_cancel(
                        _anext_or_none(lines), self._token, timeout=remaining
                    )
                    if not finished:
                        kind = FinishKind.CANCELLED if self._token.cancelled else FinishKind.DEADLINE
                        yield CompletionChunk(scanner.flush(), FinishReason(kind))
                        return
                    if line is None:
                        break
                    if not line.startswith("data:"):
                        continue
                    data = line[len("data:") :].strip()
                    if data == "[DONE]":
                        break
                    event = json.loads(data)
                    usage = event.get("usage")
                    if isinstance(usage, dict) and "completion_tokens" in usage:
                        self.usage_tokens = int(usage["completion_tokens"])
                        self.usage_reported = True
                    choices = event.get("choices") or []
                    if not choices:
                        continue
                    delta = choices[0].get("text") or ""
                    server_finish = choices[0].get("finish_reason") or server_finish
                    emit, stop_idx = scanner.feed(delta)
                    if emit:
                        yield CompletionChunk(emit)
                    if stop_idx is not None:
                        yield CompletionChunk("", FinishReason.stop(stop_idx))
                        return
        except httpx.ConnectError as exc:
            raise BackendUnreachable(str(exc)) from exc
        except httpx.HTTPError as exc:
            raise BackendError(-1, str(exc)) from exc

        tail = scanner.flush()
        if tail:
            yield CompletionChunk(tail)
        if server_finish == "stop":
            yield CompletionChunk("", FinishReason.stop(None))
        elif server_finish == "length":
            yield CompletionChunk("", FinishReason(FinishKind.MAX_TOKENS))
        else:
            yield CompletionChunk("", FinishReason(FinishKind.BACKEND_END))


async def _anext_or_none(it: AsyncIterator[str]) -> str | None:
    try:
        return await it.__anext__()
    except StopAsyncIteration:
        return None


class HttpBackend:
    """OpenAI-compatible ``/v1/completions`` streaming client."""

    def __init__(
        self,
        base_url: str | None = None,
        api_key_env: str = API_KEY_ENV,
        model: str = "default",
        client: httpx.AsyncClient | None = None,
    ):
        base_url = base_url or os.environ.get(BASE_URL_ENV)
        if client is None:
            if not base_url:
                raise BackendUnreachable(f"no base URL configured (set {BASE_URL_ENV})")
            headers = {}
            api_key = os.environ.get(api_key_env, "")
            if api_key:
                headers["Authorization"] = f"Bearer {api_key}"
            client = httpx.AsyncClient(base_url=base_url, headers=headers, timeout=None)
        self._client = client
        self._model = model

    def stream(self, request: CompletionRequest) -> HttpCompletionStream:
        params = request.params
        payload: dict = {
            "model": self._model,
            "prompt": request.prompt,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
            "stop": list(params.stop_sequences),
            "stream": True,
        }
        if params.seed is not None:
            payload["seed"] = params.seed
        return HttpCompletionStream(self._client, payload, request)

    async def complete(self, request: CompletionRequest) -> CompletionResult:
        return await collect(self.stream(request))

    async def aclose(self) -> None:
        await self._client.aclose()
