"""The tool-integrated generation loop.

One generation streams from the backend with the code-end tag as a stop
sequence; each completed code block runs in the sandbox, its output is
rendered back into the transcript (truncated, with a remaining-executions
warning), and generation resumes on the augmented prompt. Once the
execution budget is spent the stop flips to the code-begin tag, so a model
that tries to open another block is caught immediately: the block is not
executed and the solution is flagged as a limit violation.
"""

from __future__ import annotations

import asyncio
import enum
import itertools
import re
from dataclasses import dataclass, field, replace

from .backends.base import CompletionBackend, CompletionRequest, FinishKind, collect
from .errors import SandboxUnavailable, UnbalancedFences
from .judging import extract_boxed
from .model import CodeExecution, ExecStatus, Problem, SamplingParams, Solution, SolutionMode
from .prompts import default_template
from .runtime import CancelToken, race_cancel
from .sandbox import ExecuteRequest, ExecuteResponse, SandboxClient
from .text import truncate_chars

OUTPUT_BEGIN = "<tool_output>"
OUTPUT_END = "</tool_output>"
THINK_END = "</think>"


@dataclass(frozen=True)
class TirConfig:
    code_begin_tag: str = "<tool_call>"
    code_end_tag: str = "</tool_call>"
    max_code_executions: int = 6
    output_char_cap: int = 200
    exec_timeout_ms: int = 2000
    params: SamplingParams = field(default_factory=SamplingParams)

    def __post_init__(self) -> None:
        if not self.code_begin_tag or not self.code_end_tag:
            raise ValueError("code tags must be non-empty")
        if self.code_begin_tag == self.code_end_tag:
            raise ValueError("code tags must be distinct")
        if self.max_code_executions < 1:
            raise ValueError("max_code_executions must be >= 1")
        if self.output_char_cap < 1:
            raise ValueError("output_char_cap must be >= 1")
        if self.exec_timeout_ms < 1:
            raise ValueError("exec_timeout_ms must be >= 1")


class SessionState(str, enum.Enum):
    GENERATING = "generating"
    EXECUTING = "executing"
    FINISHED = "finished"
    CANCELLED = "cancelled"
    DEADLINE = "deadline"

TERMINAL_STATES = {SessionState.FINISHED, SessionState.CANCELLED, SessionState.DEADLINE}
_ALLOWED = {
    SessionState.GENERATING: {SessionState.EXECUTING} | TERMINAL_STATES,
    SessionState.EXECUTING: {SessionState.GENERATING} | TERMINAL_STATES,
}


class GenerationSession:
    """Live state of one streaming generation."""

    def __init__(
        self,
        problem_id: str,
        cancel_token: CancelToken,
        deadline: float | None = None,
        session_id: str = "",
    ):
        self.problem_id = problem_id
        self.session_id = session_id or problem_id
        self.transcript = ""
        self.executions_used = 0
        self.state = SessionState.GENERATING
        self.cancel_token = cancel_token
        self.deadline = deadline

    def transition(self, new: SessionState) -> None:
        if self.state in TERMINAL_STATES:
            raise RuntimeError(f"session already terminal ({self.state.value})")
        if new not in _ALLOWED[self.state]:
            raise RuntimeError(f"illegal transition {self.state.value} -> {new.value}")
        self.state = new


class SessionRegistry:
    """Tracks live generation sessions; schedulers assert it drains to zero."""

    def __init__(self) -> None:
        self._live: set[GenerationSession] = set()

    def add(self, session: GenerationSession) -> None:
        self._live.add(session)

    def remove(self, session: GenerationSession) -> None:
        self._live.discard(session)

    @property
    def live_count(self) -> int:
        return len(self._live)


def render_output_block(exec_response: ExecuteResponse, remaining: int, cap: int) -> str:
    """Canonical rendering of an execution result fed back to the model.

    The stdout/stderr contribution is capped at ``cap`` characters (cut on
    character boundaries); a marker line notes when the cut happened. The
    closing warning line carries the remaining-executions count.
    """
    if remaining < 0:
        raise ValueError("remaining must be >= 0")
    if exec_response.status is ExecStatus.TIMEOUT:
        body, truncated = "[Execution timed out]", False
    else:
        shown = exec_response.shown_output
        body, truncated = truncate_chars(shown, cap)
        if not body:
            body, truncated = "[No output]", False
    if remaining == 0:
        warning = "[Code executions remaining: 0 — no further code may be executed]"
    else:
        warning = f"[Code executions remaining: {remaining}]"
    lines = [OUTPUT_BEGIN, body]
    if truncated:
        lines.append("[Output truncated]")
    lines.append(warning)
    lines.append(OUTPUT_END)
    return "\n".join(lines)


_PYTHON_FENCE = "```python"
_FENCE = "```"


def normalize_code_tags(text: str, config: TirConfig | None = None) -> str:
    """Rewrite markdown-style python fences into the code tags.

    An opening python fence becomes the begin tag; its closing fence plus
    the trailing newline becomes the end tag. Non-python fences pass
    through untouched. Raises :class:`UnbalancedFences` (leaving the
    caller's text unchanged) when a fence never closes. Idempotent on
    already-normalized text.
    """
    config = config or TirConfig()
    out: list[str] = []
    pos = 0
    while True:
        i = text.find(_FENCE, pos)
        if i == -1:
            out.append(text[pos:])
            return "".join(out)
        if text.startswith(_PYTHON_FENCE, i):
            j = text.find(_FENCE, i + len(_PYTHON_FENCE))
            if j == -1:
                raise UnbalancedFences(f"python fence at offset {i} never closes")
            out.append(text[pos:i])
            out.append(config.code_begin_tag)
            out.append(text[i + len(_PYTHON_FENCE) : j])
            out.append(config.code_end_tag)
            pos = j + len(_FENCE)
            if text.startswith("\n", pos):
                pos += 1
        else:
            j = text.find(_FENCE, i + len(_FENCE))
            if j == -1:
                raise UnbalancedFences(f"fence at offset {i} never closes")
            out.append(text[pos : j + len(_FENCE)])
            pos = j + len(_FENCE)


_OUTPUT_SECTION_RE = re.compile(re.escape(OUTPUT_BEGIN) + ".*?" + re.escape(OUTPUT_END), re.DOTALL)


def strip_output_sections(text: str) -> str:
    return _OUTPUT_SECTION_RE.sub("", text)


def count_code_blocks(text: str, config: TirConfig | None = None) -> int:
    """Number of complete begin/end tag pairs outside executed-output sections."""
    config = config or TirConfig()
    cleaned = strip_output_sections(text)
    count = 0
    pos = 0
    while True:
        b = cleaned.find(config.code_begin_tag, pos)
        if b == -1:
            return count
        e = cleaned.find(config.code_end_tag, b + len(config.code_begin_tag))
        if e == -1:
            return count
        count += 1
        pos = e + len(config.code_end_tag)


def iter_code_blocks(text: str, config: TirConfig | None = None) -> list[str]:
    """Code bodies of complete blocks, in order, skipping output sections."""
    config = config or TirConfig()
    cleaned = strip_output_sections(text)
    blocks = []
    pos = 0
    while True:
        b = cleaned.find(config.code_begin_tag, pos)
        if b == -1:
            return blocks
        start = b + len(config.code_begin_tag)
        e = cleaned.find(config.code_end_tag, start)
        if e == -1:
            return blocks
        blocks.append(cleaned[start:e])
        pos = e + len(config.code_end_tag)


def split_summary(text: str) -> str | None:
    """Reasoning-model convention: text after the think-close marker."""
    idx = text.rfind(THINK_END)
    if idx == -1:
        return None
    summary = text[idx + len(THINK_END) :].strip()
    return summary or None


_session_counter = itertools.count(1)


async def stream_with_cancel(
    backend: CompletionBackend, request: CompletionRequest, token: CancelToken | None
):
    """Collect a stream while propagating a cancel token into it."""
    stream = backend.stream(request)
    watcher = None
    if token is not None:
        async def _propagate():
            await token.wait()
            stream.cancel()

        watcher = asyncio.get_running_loop().create_task(_propagate())
    try:
        return await collect(stream)
    finally:
        if watcher is not None:
            watcher.cancel()
            try:
                await watcher
            except asyncio.CancelledError:
                pass


class TirEngine:
    """Drives tool-integrated generations against a backend and sandbox."""

    def __init__(
        self,
        backend: CompletionBackend,
        sandbox: SandboxClient,
        config: TirConfig,
        prompt_template: str | None = None,
        registry: SessionRegistry | None = None,
    ):
        self.backend = backend
        self.sandbox = sandbox
        self.config = config
        self.prompt_template = prompt_template or default_template("tir")
        self.registry = registry or SessionRegistry()

    def render_prompt(self, problem: Problem, code_limit: int) -> str:
        return self.prompt_template.format(
            problem=problem.statement,
            code_limit=code_limit,
            code_begin=self.config.code_begin_tag,
            code_end=self.config.code_end_tag,
        )

    async def _stream_round(
        self, prompt: str, params: SamplingParams, deadline: float | None, token: CancelToken
    ):
        request = CompletionRequest(prompt=prompt, params=params, deadline=deadline)
        return await stream_with_cancel(self.backend, request, token)

    async def run(
        self,
        problem: Problem,
        *,
        code_limit: int | None = None,
        deadline: float | None = None,
        cancel_token: CancelToken | None = None,
    ) -> Solution:
        """Run one TIR generation to completion and assemble the Solution.

        ``deadline`` is an absolute instant on the loop clock; the partial
        transcript survives deadline and cancellation so callers can still
        extract a boxed answer from it.
        """
        config = self.config
        limit = code_limit if code_limit is not None else config.max_code_executions
        token = cancel_token or CancelToken()
        loop = asyncio.get_running_loop()
        started = loop.time()
        session = GenerationSession(
            problem.id, token, deadline, session_id=f"{problem.id}#{next(_session_counter)}"
        )
        self.registry.add(session)
        base_prompt = self.render_prompt(problem, limit)
        trace: list[CodeExecution] = []
        token_total = 0
        limit_violation = False
        error: str | None = None
        end_state = SessionState.FINISHED
        # Stray tags can force extra no-execution rounds; bound them so a
        # pathological script cannot spin the loop forever.
        max_rounds = 2 * limit + 8

        try:
            for _round in range(max_rounds):
                if token.cancelled:
                    end_state = SessionState.CANCELLED
                    break
                remaining_tokens = config.params.max_tokens - token_total
                if remaining_tokens <= 0:
                    break
                exhausted = session.executions_used >= limit
                control_tag = config.code_begin_tag if exhausted else config.code_end_tag
                params = replace(
                    config.params,
                    stop_sequences=(control_tag,) + tuple(config.params.stop_sequences),
                    max_tokens=remaining_tokens,
                )
                result = await self._stream_round(
                    base_prompt + session.transcript, params, deadline, token
                )
                token_total += result.token_count
                session.transcript += result.text
                kind = result.finish_reason.kind

                if kind is FinishKind.CANCELLED:
                    end_state = SessionState.CANCELLED
                    break
                if kind is FinishKind.DEADLINE:
                    end_state = SessionState.DEADLINE
                    break
                if kind is not FinishKind.STOP_SEQUENCE or result.finish_reason.stop_index != 0:
                    break  # natural end, token budget, or a caller stop

                if exhausted:
                    # the model opened a block it is not allowed to run
                    limit_violation = True
                    break
                session.transcript += config.code_end_tag
                round_text = result.text + config.code_end_tag
                code = self._last_block_body(round_text)
                if code is None or not code.strip():
                    continue  # stray end tag; resume generation

                session.transition(SessionState.EXECUTING)
                exec_deadline = None if deadline is None else deadline - loop.time()
                try:
                    finished, response = await race_cancel(
                        self.sandbox.execute(
                            ExecuteRequest(session.session_id, code, config.exec_timeout_ms)
                        ),
                        token,
                        timeout=exec_deadline,
                    )
                except SandboxUnavailable as exc:
                    error = f"sandbox unavailable: {exc}"
                    break
                if not finished:
                    end_state = (
                        SessionState.CANCELLED if token.cancelled else SessionState.DEADLINE
                    )
                    break
                session.executions_used += 1
                remaining = limit - session.executions_used
                shown, _ = truncate_chars(
                    response.shown_output if response.status is not ExecStatus.TIMEOUT else "",
                    config.output_char_cap,
                )
                trace.append(
                    CodeExecution(
                        code=code,
                        stdout_truncated=shown,
                        status=response.status,
                        duration_ms=response.duration_ms,
                        remaining_after=remaining,
                    )
                )
                block = render_output_block(response, remaining, config.output_char_cap)
                session.transcript += "\n" + block + "\n"
                session.transition(SessionState.GENERATING)
        finally:
            if session.state not in TERMINAL_STATES:
                session.transition(end_state)
            self.registry.remove(session)
            await self.sandbox.close_session(session.session_id)

        answer = extract_boxed(session.transcript)
        return Solution(
            problem_id=problem.id,
            mode=SolutionMode.TIR,
            reasoning_text=session.transcript,
            summary_text=split_summary(session.transcript),
            code_trace=tuple(trace),
            extracted_answer=answer,
            finished=answer is not None,
            token_count=token_total,
            wall_time_ms=int(round((loop.time() - started) * 1000)),
            limit_violation=limit_violation,
            error=error,
        )

    def _last_block_body(self, round_text: str) -> str | None:
        """Code between the last begin tag and the end tag of this round."""
        end = round_text.rfind(self.config.code_end_tag)
        if end == -1:
            return None
        begin = round_text.rfind(self.config.code_begin_tag, 0, end)
        if begin == -1:
            return None
        return round_text[begin + len(self.config.code_begin_tag) : end]


async def run_cot(
    problem: Problem,
    backend: CompletionBackend,
    params: SamplingParams,
    prompt_template: str | None = None,
    deadline: float | None = None,
    cancel_token: CancelToken | None = None,
) -> Solution:
    """One plain chain-of-thought generation (no tools)."""
    template = prompt_template or default_template("cot")
    prompt = template.format(problem=problem.statement)
    loop = asyncio.get_running_loop()
    started = loop.time()
    request = CompletionRequest(prompt=prompt, params=params, deadline=deadline)
    result = await stream_with_cancel(backend, request, cancel_token)
    answer = extract_boxed(result.text)
    return Solution(
        problem_id=problem.id,
        mode=SolutionMode.COT,
        reasoning_text=result.text,
        summary_text=split_summary(result.text),
        extracted_answer=answer,
        finished=answer is not None,
        token_count=result.token_count,
        wall_time_ms=int(round((loop.time() - started) * 1000)),
    )
