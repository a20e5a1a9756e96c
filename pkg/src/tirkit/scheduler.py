"""Competition runtime: per-question time budgeting and batched solving.

Questions run one at a time. Each gets a base time allocation plus a
bounded draw from the shared buffer of previously unused time; within a
question, a batch of generations runs concurrently with agreement-based
early stopping and optional straggler cancellation. The scheduler is the
single owner of the ledger and the only issuer of cancellations; the
deadline is enforced here (by cancelling sessions), so partial transcripts
survive for answer extraction.
"""

from __future__ import annotations

import asyncio
import enum
import logging
from dataclasses import dataclass, replace
from typing import Awaitable, Callable, Sequence

from .errors import OverUse
from .judging import answers_match
from .metrics import EquivalencePredicate, equivalence_classes, majority_vote
from .model import Problem, Solution
from .runtime import CancelToken

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeLedger:
    base_per_question_s: float = 350.0
    extra_draw_cap_s: float = 210.0
    buffer_s: float = 0.0
    total_budget_s: float = 18_000.0
    used_total_s: float = 0.0

    def __post_init__(self) -> None:
        if self.buffer_s < 0:
            raise ValueError("buffer_s must be non-negative")


def allocate_time(ledger: TimeLedger) -> float:
    """Seconds granted to the next question; the ledger is not mutated.

    Base plus a buffer draw capped at the draw limit, additionally capped
    by the remaining global budget (logged when that cap binds).
    """
    allocation = ledger.base_per_question_s + min(ledger.buffer_s, ledger.extra_draw_cap_s)
    remaining_total = ledger.total_budget_s - ledger.used_total_s
    if allocation > remaining_total:
        logger.info(
            "global budget cap binds: allocation %.3fs reduced to %.3fs",
            allocation,
            remaining_total,
        )
        allocation = max(0.0, remaining_total)
    return allocation


def settle_question(ledger: TimeLedger, allocated_s: float, used_s: float) -> TimeLedger:
    """Account for one finished question: return unused time to the buffer.

    The buffer gives back what was drawn and absorbs what went unused;
    it can never go negative because a draw never exceeds the buffer.
    """
    if used_s > allocated_s:
        raise OverUse(allocated_s, used_s)
    if used_s < 0:
        raise ValueError("used_s must be non-negative")
    drawn = max(0.0, allocated_s - ledger.base_per_question_s)
    new_buffer = ledger.buffer_s - drawn + (allocated_s - used_s)
    return replace(
        ledger, buffer_s=new_buffer, used_total_s=ledger.used_total_s + used_s
    )


@dataclass(frozen=True)
class BatchPolicy:
    batch_size: int = 16
    agreement_threshold: int = 4
    straggler_cancel_count: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.agreement_threshold <= self.batch_size:
            raise ValueError("need 1 <= agreement_threshold <= batch_size")
        if self.straggler_cancel_count < 0:
            raise ValueError("straggler_cancel_count must be >= 0")


class GenerationStatus(str, enum.Enum):
    COMPLETED = "completed"
    CANCELLED = "cancelled"
    FAILED = "failed"


@dataclass(frozen=True)
class GenerationTrace:
    index: int
    status: GenerationStatus
    completed_at_s: float
    answer: str | None
    finished: bool


@dataclass(frozen=True)
class SolveOutcome:
    answer: str | None
    used_s: float
    early_stopped: bool
    deadline_hit: bool
    trace: tuple[GenerationTrace, ...]


RunGeneration = Callable[[int, CancelToken], Awaitable[Solution]]


async def solve_question(
    problem: Problem,
    policy: BatchPolicy,
    deadline_s: float,
    run_generation: RunGeneration,
    equivalence: EquivalencePredicate = answers_match,
) -> SolveOutcome:
    """Run one question's batch under a hard wall-clock window.

    Early stop: when the earliest ``agreement_threshold`` natural
    completions all carry answers in a single equivalence class, everything
    pending is cancelled and that answer returned. Straggler cancellation:
    once ``batch_size - straggler_cancel_count`` have completed, the rest
    are cancelled. At the deadline everything is cancelled and the majority
    over every extractable answer (including answers parsed out of
    cancelled partials) decides.
    """
    if deadline_s <= 0:
        raise ValueError("deadline_s must be positive")
    loop = asyncio.get_running_loop()
    start = loop.time()
    deadline = start + deadline_s
    queue: asyncio.Queue = asyncio.Queue()
    tokens = [CancelToken() for _ in range(policy.batch_size)]

    async def wrapped(index: int) -> None:
        try:
            solution = await run_generation(index, tokens[index])
        except Exception:
            logger.exception("generation %d failed", index)
            solution = None
        await queue.put((index, solution))

    tasks = [loop.create_task(wrapped(i)) for i in range(policy.batch_size)]
    received: set[int] = set()
    natural: list[tuple[int, Solution]] = []
    trace: list[GenerationTrace] = []
    ordered_answers: list[str | None] = []
    early_stopped = False
    deadline_hit = False
    early_answer: str | None = None

    def cancel_pending() -> None:
        for i, token in enumerate(tokens):
            if i not in received:
                token.cancel()

    try:
        while len(received) < policy.batch_size:
            timeout = deadline - loop.time()
            if timeout <= 0 and not deadline_hit:
                deadline_hit = True
                cancel_pending()
            try:
                index, solution = await asyncio.wait_for(
                    queue.get(), timeout=None if deadline_hit else timeout
                )
            except asyncio.TimeoutError:
                continue  # next pass flips deadline_hit and cancels
            received.add(index)
            now_rel = loop.time() - start
            if solution is None:
                trace.append(GenerationTrace(index, GenerationStatus.FAILED, now_rel, None, False))
                continue
            was_cancelled = tokens[index].cancelled
            status = GenerationStatus.CANCELLED if was_cancelled else GenerationStatus.COMPLETED
            trace.append(
                GenerationTrace(
                    index, status, now_rel, solution.extracted_answer, solution.finished
                )
            )
            ordered_answers.append(solution.extracted_answer)
            if was_cancelled:
                continue
            natural.append((index, solution))

            if not early_stopped and len(natural) == policy.agreement_threshold:
                answers = [s.extracted_answer for _, s in natural]
                if all(a is not None for a in answers):
                    classes = equivalence_classes(answers, equivalence)
                    if len(classes) == 1:
                        early_stopped = True
                        early_answer = answers[0]
                        cancel_pending()
            if (
                not early_stopped
                and policy.straggler_cancel_count > 0
                and len(natural) == policy.batch_size - policy.straggler_cancel_count
            ):
                cancel_pending()
    finally:
        for token in tokens:
            token.cancel()
        await asyncio.gather(*tasks, return_exceptions=True)

    used_s = min(loop.time() - start, deadline_s)
    if early_stopped:
        answer = early_answer
    else:
        answer = majority_vote(ordered_answers, equivalence).winner
    return SolveOutcome(
        answer=answer,
        used_s=used_s,
        early_stopped=early_stopped,
        deadline_hit=deadline_hit,
        trace=tuple(trace),
    )


@dataclass(frozen=True)
class AuditRow:
    problem_id: str
    allocated_s: float
    used_s: float
    buffer_after_s: float
    answer: str | None
    early_stopped: bool
    deadline_hit: bool
    completions: int

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "allocated_s": self.allocated_s,
            "used_s": self.used_s,
            "buffer_after_s": self.buffer_after_s,
            "answer": self.answer,
            "early_stopped": self.early_stopped,
            "deadline_hit": self.deadline_hit,
            "completions": self.completions,
        }


@dataclass(frozen=True)
class CompetitionResult:
    answers: tuple[tuple[str, str | None], ...]  # (problem_id, answer)
    audit: tuple[AuditRow, ...]
    ledger: TimeLedger


SolveFactory = Callable[[Problem], RunGeneration]


async def run_competition(
    problems: Sequence[Problem],
    ledger: TimeLedger,
    policy: BatchPolicy,
    solve_factory: SolveFactory,
    equivalence: EquivalencePredicate = answers_match,
) -> CompetitionResult:
    """Sequential allocate -> solve -> settle over the question list."""
    rows: list[AuditRow] = []
    answers: list[tuple[str, str | None]] = []
    for problem in problems:
        allocated = allocate_time(ledger)
        if allocated <= 0:
            # global budget exhausted: the question is skipped, not solved
            logger.warning("no time left for %s; skipping", problem.id)
            rows.append(
                AuditRow(
                    problem_id=problem.id,
                    allocated_s=0.0,
                    used_s=0.0,
                    buffer_after_s=ledger.buffer_s,
                    answer=None,
                    early_stopped=False,
                    deadline_hit=True,
                    completions=0,
                )
            )
            answers.append((problem.id, None))
            continue
        outcome = await solve_question(
            problem, policy, allocated, solve_factory(problem), equivalence
        )
        ledger = settle_question(ledger, allocated, outcome.used_s)
        completions = sum(
            1 for t in outcome.trace if t.status is GenerationStatus.COMPLETED
        )
        rows.append(
            AuditRow(
                problem_id=problem.id,
                allocated_s=allocated,
                used_s=outcome.used_s,
                buffer_after_s=ledger.buffer_s,
                answer=outcome.answer,
                early_stopped=outcome.early_stopped,
                deadline_hit=outcome.deadline_hit,
                completions=completions,
            )
        )
        answers.append((problem.id, outcome.answer))
    return CompetitionResult(answers=tuple(answers), audit=tuple(rows), ledger=ledger)
