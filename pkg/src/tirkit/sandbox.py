"""Clients for the code-execution sandbox.

The engine only sees this interface; behind it sits either the real HTTP
service (POST /execute, POST /close, GET /health) or an in-process mock
whose responses are scripted. The mock optionally burns its reported
duration on the clock, which is free on the virtual-time loop and lets
scheduler scenarios model slow executions.
"""

from __future__ import annotations

import asyncio
import json
import re
from dataclasses import dataclass
from typing import Awaitable, Callable, Iterable, Protocol

import httpx

from .errors import SandboxUnavailable, SchemaError
from .model import ExecStatus


@dataclass(frozen=True)
class ExecuteRequest:
    session_id: str
    code: str
    timeout_ms: int = 2000

    def __post_init__(self) -> None:
        if not self.code:
            raise ValueError("code must be non-empty")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")


@dataclass(frozen=True)
class ExecuteResponse:
    status: ExecStatus
    stdout: str
    stderr: str
    duration_ms: int

    def __post_init__(self) -> None:
        if self.status is ExecStatus.TIMEOUT and self.duration_ms < 0:
            raise ValueError("timeout responses carry the elapsed duration")
        if self.status is ExecStatus.ERROR and not self.stderr:
            raise ValueError("error responses must carry stderr")

    @property
    def shown_output(self) -> str:
        """The stream a model should see: stdout when ok, stderr on error."""
        return self.stdout if self.status is not ExecStatus.ERROR else self.stderr


class SandboxClient(Protocol):
    async def execute(self, request: ExecuteRequest) -> ExecuteResponse: ...

    async def close_session(self, session_id: str) -> None: ...


class HttpSandboxClient:
    def __init__(self, base_url: str, client: httpx.AsyncClient | None = None):
        self._client = client or httpx.AsyncClient(base_url=base_url, timeout=None)

    async def execute(self, request: ExecuteRequest) -> ExecuteResponse:
        payload = {
            "session_id": request.session_id,
            "code": request.code,
            "timeout_ms": request.timeout_ms,
        }
        try:
            resp = await self._client.post("/execute", json=payload)
        except httpx.HTTPError as exc:
            raise SandboxUnavailable(str(exc)) from exc
        if resp.status_code != 200:
            raise SandboxUnavailable(f"sandbox returned {resp.status_code}: {resp.text[:200]}")
        body = resp.json()
        return ExecuteResponse(
            status=ExecStatus(body["status"]),
            stdout=body.get("stdout", ""),
            stderr=body.get("stderr", ""),
            duration_ms=int(body.get("duration_ms", 0)),
        )

    async def close_session(self, session_id: str) -> None:
        try:
            await self._client.post("/close", json={"session_id": session_id})
        except httpx.HTTPError:
            pass  # close is best-effort and idempotent

    async def health(self) -> bool:
        try:
            resp = await self._client.get("/health")
        except httpx.HTTPError:
            return False
        return resp.status_code == 200

    async def aclose(self) -> None:
        await self._client.aclose()


Handler = Callable[[str, str], ExecuteResponse | Awaitable[ExecuteResponse]]


@dataclass(frozen=True)
class ExecRule:
    """Scripted execution outcome, matched against the code text."""

    pattern: str  # regex searched in the code
    status: ExecStatus = ExecStatus.OK
    stdout: str = ""
    stderr: str = ""
    duration_ms: int = 0

    def response(self) -> ExecuteResponse:
        return ExecuteResponse(self.status, self.stdout, self.stderr, self.duration_ms)


def load_exec_rules(path: str) -> list[ExecRule]:
    rules = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(lineno, "json", f"invalid JSON: {exc.msg}") from exc
            try:
                rules.append(
                    ExecRule(
                        pattern=str(raw["pattern"]),
                        status=ExecStatus(raw.get("status", "ok")),
                        stdout=str(raw.get("stdout", "")),
                        stderr=str(raw.get("stderr", "")),
                        duration_ms=int(raw.get("duration_ms", 0)),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise SchemaError(lineno, "pattern", str(exc)) from exc
    return rules


class MockSandbox:
    """In-process deterministic sandbox used by the whole primary suite.

    Responses come from a handler callable or from scripted rules (first
    regex match wins). With ``simulate_duration`` the mock sleeps out each
    response's duration; timeouts are additionally clamped to the
    request's ``timeout_ms``, mirroring the real service's hard kill.
    """

    def __init__(
        self,
        rules: Iterable[ExecRule] = (),
        handler: Handler | None = None,
        simulate_duration: bool = True,
    ):
        self._rules = list(rules)
        self._handler = handler
        self._simulate = simulate_duration
        self.calls: list[ExecuteRequest] = []
        self._live_sessions: set[str] = set()
        self.closed_sessions: list[str] = []

    @property
    def live_sessions(self) -> set[str]:
        return set(self._live_sessions)

    def _lookup(self, code: str) -> ExecuteResponse:
        for rule in self._rules:
            if re.search(rule.pattern, code, re.DOTALL):
                return rule.response()
        return ExecuteResponse(
            ExecStatus.ERROR, "", f"no scripted execution rule matches code: {code[:80]!r}", 0
        )

    async def execute(self, request: ExecuteRequest) -> ExecuteResponse:
        self.calls.append(request)
        self._live_sessions.add(request.session_id)
        if self._handler is not None:
            out = self._handler(request.session_id, request.code)
            response = await out if asyncio.iscoroutine(out) else out
        else:
            response = self._lookup(request.code)
        if response.status is ExecStatus.TIMEOUT and response.duration_ms < request.timeout_ms:
            response = ExecuteResponse(
                ExecStatus.TIMEOUT, response.stdout, response.stderr, request.timeout_ms
            )
        if self._simulate and response.duration_ms > 0:
            await asyncio.sleep(min(response.duration_ms, request.timeout_ms + 500) / 1000)
        return response

    async def close_session(self, session_id: str) -> None:
        self._live_sessions.discard(session_id)
        self.closed_sessions.append(session_id)
