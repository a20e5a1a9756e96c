"""Completion backend contract: requests, streamed chunks, stop handling.

Stop sequences are matched on the accumulated text, not per-chunk, so a
stop spanning chunk boundaries is still found; the emitted text never
contains a stop sequence. Exactly one chunk in a stream carries a
``finish_reason`` and it is always the last one.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import AsyncIterator, Protocol, runtime_checkable

from ..errors import UnparseableVerdict
from ..model import SamplingParams
from ..text import approx_token_count


class FinishKind(str, enum.Enum):
    STOP_SEQUENCE = "stop_sequence"
    MAX_TOKENS = "max_tokens"
    CANCELLED = "cancelled"
    DEADLINE = "deadline"
    BACKEND_END = "backend_end"


@dataclass(frozen=True)
class FinishReason:
    kind: FinishKind
    stop_index: int | None = None

    @classmethod
    def stop(cls, index: int | None) -> "FinishReason":
        return cls(FinishKind.STOP_SEQUENCE, index)


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    params: SamplingParams
    deadline: float | None = None  # absolute instant on the loop clock

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")


@dataclass(frozen=True)
class CompletionChunk:
    text_delta: str
    finish_reason: FinishReason | None = None


@dataclass(frozen=True)
class CompletionResult:
    text: str
    finish_reason: FinishReason
    token_count: int
    usage_reported: bool  # True when the backend reported real usage


@runtime_checkable
class CompletionStream(Protocol):
    def __aiter__(self) -> AsyncIterator[CompletionChunk]: ...

    def cancel(self) -> None: ...


class CompletionBackend(Protocol):
    def stream(self, request: CompletionRequest) -> CompletionStream: ...

    async def complete(self, request: CompletionRequest) -> CompletionResult: ...


async def collect(stream: CompletionStream) -> CompletionResult:
    """Drain a stream into a single result."""
    parts: list[str] = []
    finish = FinishReason(FinishKind.BACKEND_END)
    async for chunk in stream:
        parts.append(chunk.text_delta)
        if chunk.finish_reason is not None:
            finish = chunk.finish_reason
    text = "".join(parts)
    usage = getattr(stream, "usage_tokens", None)
    if usage is None:
        return CompletionResult(text, finish, approx_token_count(text), False)
    return CompletionResult(text, finish, usage, getattr(stream, "usage_reported", False))


class StopScanner:
    """Incremental multi-pattern stop matcher over an accumulating buffer.

    Holds back the last ``max(len(stop)) - 1`` characters so a match split
    across chunks is still caught. The first match by (position, stop
    index) wins.
    """

    def __init__(self, stops: tuple[str, ...] | list[str]):
        self.stops = list(stops)
        self._holdback = max((len(s) for s in self.stops), default=1) - 1
        self._pending = ""
        self.matched: int | None = None

    def feed(self, delta: str) -> tuple[str, int | None]:
        """Absorb a delta; return (text safe to emit, matched stop index)."""
        if self.matched is not None:
            return "", self.matched
        buf = self._pending + delta
        best: tuple[int, int] | None = None
        for i, stop in enumerate(self.stops):
            pos = buf.find(stop)
            if pos != -1 and (best is None or (pos, i) < best):
                best = (pos, i)
        if best is not None:
            pos, idx = best
            self.matched = idx
            self._pending = ""
            return buf[:pos], idx
        if self._holdback and len(buf) > self._holdback:
            self._pending = buf[-self._holdback :]
            return buf[: -self._holdback], None
        if self._holdback:
            self._pending = buf
            return "", None
        self._pending = ""
        return buf, None

    def flush(self) -> str:
        """Release held-back text at end of stream (no match can hide in it)."""
        out, self._pending = self._pending, ""
        return out


DEFAULT_VERDICT_PATTERN = r"\b(yes|no)\b"


def parse_yes_no(completion: str, pattern: str = DEFAULT_VERDICT_PATTERN) -> bool:
    """Pull a yes/no verdict out of a completion; the last match wins."""
    matches = list(re.finditer(pattern, completion, re.IGNORECASE))
    if not matches:
        raise UnparseableVerdict(completion, pattern)
    return matches[-1].group(1).lower() == "yes"


async def judge_yes_no(
    backend: CompletionBackend,
    prompt: str,
    params: SamplingParams | None = None,
    pattern: str = DEFAULT_VERDICT_PATTERN,
) -> bool:
    """Ask the backend a question whose answer is parsed as yes/no."""
    if params is None:
        params = SamplingParams(temperature=0.0, max_tokens=256)
    result = await backend.complete(CompletionRequest(prompt=prompt, params=params))
    return parse_yes_no(result.text, pattern)
