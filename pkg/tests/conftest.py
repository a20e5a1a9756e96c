from __future__ import annotations

import random
import string

import pytest

from tirkit.model import (
    CandidateSummary,
    CodeExecution,
    ExecStatus,
    Problem,
    SamplingParams,
    SelectionRecord,
    Solution,
    SolutionMode,
)
from tirkit.runtime import run_virtual


@pytest.fixture
def virtual():
    """Run a coroutine on a fresh virtual-time event loop."""
    return run_virtual


def make_problem(pid="p1", answer="42", **kw):
    defaults = dict(
        id=pid,
        statement=f"Compute the value for {pid}.",
        expected_answer=answer,
        answer_source="extracted" if answer is not None else None,
        category="has_answer" if answer is not None else "no_answer",
    )
    defaults.update(kw)
    if defaults["expected_answer"] is None:
        defaults["answer_source"] = None
    from tirkit.model import AnswerSource, ProblemCategory

    return Problem(
        id=defaults["id"],
        statement=defaults["statement"],
        expected_answer=defaults["expected_answer"],
        answer_source=AnswerSource(defaults["answer_source"]) if defaults["answer_source"] else None,
        category=ProblemCategory(defaults["category"]),
        difficulty=defaults.get("difficulty"),
        source_url=defaults.get("source_url"),
    )


def make_solution(pid="p1", answer="42", mode=SolutionMode.COT, **kw):
    text = kw.pop("reasoning_text", None)
    if text is None:
        text = f"Reasoning... \\boxed{{{answer}}}" if answer is not None else "Reasoning, no answer."
    return Solution(
        problem_id=pid,
        mode=mode,
        reasoning_text=text,
        extracted_answer=answer,
        finished=answer is not None,
        **kw,
    )


def random_solution(rng: random.Random, pid: str) -> Solution:
    mode = rng.choice([SolutionMode.COT, SolutionMode.TIR])
    answer = rng.choice([None, str(rng.randint(0, 99)), "\\frac{1}{2}"])
    trace = ()
    if mode is SolutionMode.TIR and rng.random() < 0.7:
        k = rng.randint(1, 3)
        trace = tuple(
            CodeExecution(
                code=f"print({i})",
                stdout_truncated=str(i),
                status=rng.choice(list(ExecStatus)),
                duration_ms=rng.randint(0, 2000),
                remaining_after=k - i,
            )
            for i in range(1, k + 1)
        )
    text = "".join(rng.choices(string.printable, k=rng.randint(0, 40)))
    if answer is not None:
        text += f" \\boxed{{{answer}}}"
    return Solution(
        problem_id=pid,
        mode=mode,
        reasoning_text=text,
        summary_text=rng.choice([None, "short summary"]),
        code_trace=trace,
        extracted_answer=answer,
        finished=answer is not None,
        token_count=rng.randint(0, 500),
        wall_time_ms=rng.randint(0, 10_000),
        correct=rng.choice([None, True, False]),
        limit_violation=rng.random() < 0.1,
    )


def make_selection_record(pid="p1", n=3, chosen=0, flags=None):
    flags = flags if flags is not None else [i == 0 for i in range(n)]
    cands = tuple(
        CandidateSummary(
            solution_id=f"{pid}-s{i}",
            summary_text=f"summary {i} ends in \\boxed{{{i}}}",
            extracted_answer=str(i),
            correct=flags[i],
        )
        for i in range(n)
    )
    return SelectionRecord(problem_id=pid, candidate_summaries=cands, chosen_index=chosen)


@pytest.fixture
def sampling():
    return SamplingParams(temperature=0.0, top_p=0.95, max_tokens=4096)
