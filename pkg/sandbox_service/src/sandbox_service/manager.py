"""Session lifecycle: one interpreter process per session.

Requests within a session are serialized FIFO (a lock per session);
distinct sessions run in parallel as separate OS processes. A timed-out
process is killed on the spot and the session restarts empty on its next
request, which is the only safe contract after an interrupted execution.
Idle sessions are reaped by a background sweeper.
"""

from __future__ import annotations

import asyncio
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger("sandbox_service")

RUNNER_PATH = str(Path(__file__).with_name("runner.py"))


class PoolExhausted(Exception):
    pass


@dataclass
class Session:
    process: asyncio.subprocess.Process
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)
    last_used: float = field(default_factory=time.monotonic)


@dataclass(frozen=True)
class ManagerConfig:
    max_sessions: int = 16
    idle_ttl_s: float = 300.0
    timeout_cap_ms: int = 30_000
    import_allowlist: tuple[str, ...] | None = None


class SessionManager:
    def __init__(self, config: ManagerConfig | None = None):
        self.config = config or ManagerConfig()
        self._sessions: dict[str, Session] = {}
        self._creation_lock = asyncio.Lock()
        self._sweeper: asyncio.Task | None = None

    @property
    def live_count(self) -> int:
        return len(self._sessions)

    async def _spawn(self) -> asyncio.subprocess.Process:
        argv = [sys.executable, "-u", RUNNER_PATH]
        if self.config.import_allowlist is not None:
            argv.append(json.dumps(list(self.config.import_allowlist)))
        return await asyncio.create_subprocess_exec(
            *argv,
            stdin=asyncio.subprocess.PIPE,
            stdout=asyncio.subprocess.PIPE,
            stderr=asyncio.subprocess.DEVNULL,
        )

    async def _get_session(self, session_id: str) -> Session:
        async with self._creation_lock:
            session = self._sessions.get(session_id)
            if session is not None and session.process.returncode is None:
                return session
            if session is None and len(self._sessions) >= self.config.max_sessions:
                raise PoolExhausted(
                    f"{len(self._sessions)} sessions live, pool capped at "
                    f"{self.config.max_sessions}"
                )
            process = await self._spawn()
            session = Session(process=process)
            self._sessions[session_id] = session
            return session

    async def execute(self, session_id: str, code: str, timeout_ms: int) -> dict:
        """Run one snippet in the session's interpreter, killing it at the
        timeout. Returns {status, stdout, stderr, duration_ms}."""
        session = await self._get_session(session_id)
        async with session.lock:
            session.last_used = time.monotonic()
            started = time.monotonic()
            process = session.process
            if process.returncode is not None:
                # recycled after a timeout or crash: start fresh
                process = await self._spawn()
                session.process = process
            request = json.dumps({"code": code}) + "\n"
            process.stdin.write(request.encode("utf-8"))
            try:
                await process.stdin.drain()
                line = await asyncio.wait_for(
                    process.stdout.readline(), timeout=timeout_ms / 1000
                )
            except (asyncio.TimeoutError, ConnectionResetError, BrokenPipeError):
                process.kill()
                await process.wait()
                duration_ms = int((time.monotonic() - started) * 1000)
                return {
                    "status": "timeout",
                    "stdout": "",
                    "stderr": "",
                    "duration_ms": max(duration_ms, timeout_ms),
                }
            duration_ms = int((time.monotonic() - started) * 1000)
            session.last_used = time.monotonic()
            if not line:  # interpreter died mid-request
                process.kill()
                await process.wait()
                return {
                    "status": "error",
                    "stdout": "",
                    "stderr": "session interpreter exited unexpectedly",
                    "duration_ms": duration_ms,
                }
            reply = json.loads(line)
            reply["duration_ms"] = duration_ms
            return reply

    async def close(self, session_id: str) -> None:
        """Idempotent: unknown sessions ack silently."""
        session = self._sessions.pop(session_id, None)
        if session is None:
            return
        if session.process.returncode is None:
            session.process.kill()
            await session.process.wait()

    async def close_all(self) -> None:
        for session_id in list(self._sessions):
            await self.close(session_id)

    async def sweep_idle(self) -> int:
        cutoff = time.monotonic() - self.config.idle_ttl_s
        reaped = 0
        for session_id, session in list(self._sessions.items()):
            if session.last_used < cutoff and not session.lock.locked():
                await self.close(session_id)
                reaped += 1
        return reaped

    def start_sweeper(self, interval_s: float = 30.0) -> None:
        async def loop() -> None:
            while True:
                await asyncio.sleep(interval_s)
                reaped = await self.sweep_idle()
                if reaped:
                    logger.info("reaped %d idle sessions", reaped)

        self._sweeper = asyncio.get_running_loop().create_task(loop())

    async def stop_sweeper(self) -> None:
        if self._sweeper is not None:
            self._sweeper.cancel()
            try:
                await self._sweeper
            except asyncio.CancelledError:
                pass
            self._sweeper = None
