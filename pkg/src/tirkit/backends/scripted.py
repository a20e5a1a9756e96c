"""Deterministic scripted completion backend.

Behaviors pair a prompt matcher with response segments that arrive after
virtual delays. Given the same scenario, seed, and clock, two runs produce
byte-identical streams; on the virtual-time loop the delays cost no wall
time. Multi-round interactions (e.g. tool loops, where the resumed prompt
grows) are scripted with suffix/regex/contains matchers; the first
matching behavior in file order wins.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import AsyncIterator, Iterable, Sequence

from ..errors import BackendError, SchemaError
from ..runtime import CancelToken, race_cancel
from ..text import approx_token_count, token_limit_cut
from .base import (
    CompletionChunk,
    CompletionRequest,
    CompletionResult,
    FinishKind,
    FinishReason,
    StopScanner,
    collect,
)

MATCHER_KINDS = ("prefix", "suffix", "contains", "regex", "hash")


@dataclass(frozen=True)
class PromptMatcher:
    kind: str
    value: str

    def __post_init__(self) -> None:
        if self.kind not in MATCHER_KINDS:
            raise SchemaError(None, "match.kind", f"{self.kind!r} not one of {MATCHER_KINDS}")
        if self.kind == "regex":
            re.compile(self.value)

    def matches(self, prompt: str) -> bool:
        if self.kind == "prefix":
            return prompt.startswith(self.value)
        if self.kind == "suffix":
            return prompt.endswith(self.value)
        if self.kind == "contains":
            return self.value in prompt
        if self.kind == "regex":
            return re.search(self.value, prompt, re.DOTALL) is not None
        return hashlib.sha256(prompt.encode("utf-8")).hexdigest() == self.value


@dataclass(frozen=True)
class Segment:
    text: str
    delay_ms: int = 0

    def __post_init__(self) -> None:
        if self.delay_ms < 0:
            raise SchemaError(None, "segments", "delays must be non-negative")


@dataclass
class ScriptedBehavior:
    """One scripted response: a matcher plus one or more response variants.

    Successive calls that select this behavior rotate through the variants
    (offset by the backend seed), which is how one scenario file yields
    several distinct generations for the same prompt.
    """

    matcher: PromptMatcher
    variants: list[list[Segment]]
    calls: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        if not self.variants or any(not v for v in self.variants):
            raise SchemaError(None, "segments", "each behavior needs at least one segment")

    @classmethod
    def from_dict(cls, d: dict) -> "ScriptedBehavior":
        match = d.get("match")
        if not isinstance(match, dict):
            raise SchemaError(None, "match", "required object")
        matcher = PromptMatcher(str(match.get("kind", "")), str(match.get("value", "")))
        if "variants" in d:
            raw_variants = d["variants"]
        elif "segments" in d:
            raw_variants = [d["segments"]]
        else:
            raise SchemaError(None, "segments", "behavior needs 'segments' or 'variants'")
        variants = []
        for var in raw_variants:
            if not isinstance(var, list):
                raise SchemaError(None, "variants", "each variant must be a list of segments")
            segs = []
            for seg in var:
                if isinstance(seg, dict):
                    segs.append(Segment(str(seg.get("text", "")), int(seg.get("delay_ms", 0))))
                elif isinstance(seg, (list, tuple)) and len(seg) == 2:
                    segs.append(Segment(str(seg[0]), int(seg[1])))
                else:
                    raise SchemaError(None, "segments", f"bad segment {seg!r}")
            variants.append(segs)
        return cls(matcher=matcher, variants=variants)


def load_scenario(path: str) -> list[ScriptedBehavior]:
    behaviors = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(lineno, "json", f"invalid JSON: {exc.msg}") from exc
            try:
                behaviors.append(ScriptedBehavior.from_dict(raw))
            except SchemaError as exc:
                raise SchemaError(lineno, exc.field, exc.detail) from exc
    return behaviors


class ScriptedStream:
    def __init__(self, segments: Sequence[Segment], request: CompletionRequest):
        self._segments = segments
        self._request = request
        self._token = CancelToken()
        self.usage_tokens: int | None = None
        self.usage_reported = False

    def cancel(self) -> None:
        self._token.cancel()

    def __aiter__(self) -> AsyncIterator[CompletionChunk]:
        return self._run()

    async def _run(self) -> AsyncIterator[CompletionChunk]:
        params = self._request.params
        scanner = StopScanner(params.stop_sequences)
        emitted = ""

        def final(delta: str, reason: FinishReason) -> CompletionChunk:
            self.usage_tokens = approx_token_count(emitted + delta)
            return CompletionChunk(delta, reason)

        def interrupt(kind: FinishKind) -> CompletionChunk:
            # Text still held back by the stop scanner contains no complete
            # stop, so it is released with the final chunk: partial
            # transcripts stay maximal for answer extraction.
            tail = scanner.flush()
            candidate = emitted + tail
            cut = token_limit_cut(candidate, params.max_tokens)
            if cut is not None:
                tail = candidate[len(emitted) : cut]
            return final(tail, FinishReason(kind))

        loop = asyncio.get_running_loop()
        for segment in self._segments:
            delay = segment.delay_ms / 1000
            past_deadline = False
            if self._request.deadline is not None:
                remaining = self._request.deadline - loop.time()
                if delay > remaining:
                    past_deadline = True
                    delay = max(0.0, remaining)
            if self._token.cancelled:
                yield interrupt(FinishKind.CANCELLED)
                return
            if delay > 0:
                finished, _ = await race_cancel(asyncio.sleep(delay), self._token)
                if not finished:
                    yield interrupt(FinishKind.CANCELLED)
                    return
            if past_deadline:
                yield interrupt(FinishKind.DEADLINE)
                return

            emit, stop_idx = scanner.feed(segment.text)
            candidate = emitted + emit
            cut = token_limit_cut(candidate, params.max_tokens)
            if cut is not None:
                # Budget exhausted strictly inside the emitted text, so
                # max_tokens fires before any later stop; a stop landing
                # exactly on the cut boundary yields cut=None and wins below.
                delta = candidate[len(emitted) : cut]
                emitted += delta
                if delta:
                    yield CompletionChunk(delta)
                yield final("", FinishReason(FinishKind.MAX_TOKENS))
                return
            if emit:
                emitted += emit
                yield CompletionChunk(emit)
            if stop_idx is not None:
                yield final("", FinishReason.stop(stop_idx))
                return

        tail = scanner.flush()
        cut = token_limit_cut(emitted + tail, params.max_tokens)
        if cut is not None:
            delta = (emitted + tail)[len(emitted) : cut]
            emitted += delta
            if delta:
                yield CompletionChunk(delta)
            yield final("", FinishReason(FinishKind.MAX_TOKENS))
            return
        if tail:
            emitted += tail
            yield CompletionChunk(tail)
        yield final("", FinishReason(FinishKind.BACKEND_END))


class ScriptedBackend:
    """Mock backend driven by a scenario (list of behaviors)."""

    def __init__(self, behaviors: Iterable[ScriptedBehavior], seed: int = 0):
        self._behaviors = list(behaviors)
        self._seed = seed

    @classmethod
    def from_file(cls, path: str, seed: int = 0) -> "ScriptedBackend":
        return cls(load_scenario(path), seed=seed)

    def _select(self, prompt: str) -> list[Segment]:
        for behavior in self._behaviors:
            if behavior.matcher.matches(prompt):
                variant = behavior.variants[(behavior.calls + self._seed) % len(behavior.variants)]
                behavior.calls += 1
                return variant
        raise BackendError(404, f"no scripted behavior matches prompt: {prompt[:120]!r}")

    def stream(self, request: CompletionRequest) -> ScriptedStream:
        return ScriptedStream(self._select(request.prompt), request)

    async def complete(self, request: CompletionRequest) -> CompletionResult:
        return await collect(self.stream(request))
