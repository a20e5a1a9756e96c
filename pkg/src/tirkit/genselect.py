"""Generative solution selection: summaries, training groups, inference.

The flow: regenerate faithful summaries for candidate solutions, sample
comparison groups mixing correct and incorrect candidates, ask a model to
pick the best candidate per group, keep only correct picks as training
records, and at inference time run repeated subset selections aggregated
by majority vote.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import Callable, Sequence

from .backends.base import CompletionBackend, CompletionRequest
from .errors import (
    AllSelectionsUnparseable,
    NoCorrect,
    NoIncorrect,
    PoolTooSmall,
    UnparseableSelection,
)
from .judging import answers_match, extract_boxed
from .metrics import TieBreak, majority_vote
from .model import CandidateSummary, Problem, SamplingParams, SelectionRecord, Solution
from .prompts import default_template
from .text import approx_token_count, token_limit_cut

EquivalencePredicate = Callable[[str, str], bool]

# Rejection-sampling bound per requested group before giving up and
# returning fewer groups (prevents livelock on tiny pools).
SAMPLING_ATTEMPTS_PER_GROUP = 50


@dataclass(frozen=True)
class GenSelectConfig:
    min_group: int = 2
    max_group: int = 16
    groups_per_problem: int = 8
    summary_max_tokens: int = 2048
    summary_candidates: int = 4
    inference_subset_size: int = 16
    inference_repeats: int = 8
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not (2 <= self.min_group <= self.max_group <= 16):
            raise ValueError("group sizes must satisfy 2 <= min_group <= max_group <= 16")
        if self.groups_per_problem < 1:
            raise ValueError("groups_per_problem must be >= 1")
        if self.summary_candidates < 1 or self.inference_repeats < 1:
            raise ValueError("candidate and repeat counts must be >= 1")


def truncate_tokens(text: str, max_tokens: int) -> str:
    cut = token_limit_cut(text, max_tokens)
    return text if cut is None else text[:cut]


# --- summary regeneration -------------------------------------------------------


async def regenerate_summary(
    solution: Solution,
    backend: CompletionBackend,
    config: GenSelectConfig,
    problem: Problem | None = None,
    equivalence: EquivalencePredicate = answers_match,
    prompt_template: str | None = None,
) -> str | None:
    """Synthesize a replacement summary for one solved solution.

    Generates ``summary_candidates`` completions, discards any whose boxed
    answer is not equivalent to the solution's answer, and returns the
    longest survivor by token count (ties go to the earliest). None when
    every candidate fails, in which case the sample is dropped upstream.
    """
    if solution.extracted_answer is None:
        raise ValueError("cannot summarize an unfinished solution")
    template = prompt_template or default_template("summarize_solution")
    prompt = template.format(
        problem=problem.statement if problem else "(statement unavailable)",
        solution=solution.reasoning_text,
    )
    params = SamplingParams(temperature=0.7, top_p=0.95, max_tokens=config.summary_max_tokens)
    best: str | None = None
    best_len = -1
    for _ in range(config.summary_candidates):
        result = await backend.complete(CompletionRequest(prompt=prompt, params=params))
        candidate = result.text
        answer = extract_boxed(candidate)
        if answer is None or not equivalence(answer, solution.extracted_answer):
            continue
        length = approx_token_count(candidate)
        if length > best_len:
            best, best_len = candidate, length
    return best


# --- training-group sampling -------------------------------------------------------


def _count_valid_groups(n: int, n_correct: int, lo: int, hi: int) -> int:
    n_incorrect = n - n_correct
    total = 0
    for size in range(lo, hi + 1):
        total += comb(n, size) - comb(n_correct, size) - comb(n_incorrect, size)
    return total


def sample_training_groups(
    pool: Sequence[tuple[str, bool]],
    config: GenSelectConfig,
    rng: random.Random,
) -> list[list[int]]:
    """Sample distinct mixed-correctness groups as index lists into the pool.

    Group sizes are uniform over [min_group, min(max_group, pool size)],
    members uniform without replacement; every group carries at least one
    correct and one incorrect member and groups are distinct as member
    sets. When fewer distinct valid groups exist than requested, all of
    them are returned (by exhaustive enumeration, so none are missed).
    """
    n = len(pool)
    if n < max(2, config.min_group):
        raise PoolTooSmall(f"pool of {n} cannot form groups of >= {config.min_group}")
    flags = [bool(correct) for _, correct in pool]
    n_correct = sum(flags)
    if n_correct == 0:
        raise NoCorrect("pool has no correct solutions")
    if n_correct == n:
        raise NoIncorrect("pool has no incorrect solutions")

    lo = config.min_group
    hi = min(config.max_group, n)
    available = _count_valid_groups(n, n_correct, lo, hi)

    def is_valid(members: Sequence[int]) -> bool:
        kinds = {flags[i] for i in members}
        return kinds == {True, False}

    if available <= config.groups_per_problem:
        groups = []
        for size in range(lo, hi + 1):
            for members in combinations(range(n), size):
                if is_valid(members):
                    shuffled = list(members)
                    rng.shuffle(shuffled)
                    groups.append(shuffled)
        return groups

    groups = []
    seen: set[frozenset[int]] = set()
    budget = SAMPLING_ATTEMPTS_PER_GROUP * config.groups_per_problem
    for _ in range(budget):
        if len(groups) == config.groups_per_problem:
            break
        size = rng.randint(lo, hi)
        members = rng.sample(range(n), size)
        key = frozenset(members)
        if key in seen or not is_valid(members):
            continue
        seen.add(key)
        groups.append(members)
    return groups


# --- selection inference -------------------------------------------------------------

_SOLUTION_REF_RE = re.compile(r"[Ss]olution\s+(\d+)|\\boxed\{(\d+)\}")


def parse_selection(completion: str, group_size: int) -> int:
    """0-based index of the picked candidate; the last reference wins."""
    matches = list(_SOLUTION_REF_RE.finditer(completion))
    if not matches:
        raise UnparseableSelection(completion, group_size)
    raw = matches[-1].group(1) or matches[-1].group(2)
    index = int(raw) - 1
    if not 0 <= index < group_size:
        raise UnparseableSelection(completion, group_size)
    return index


def render_candidates(summaries: Sequence[str], max_tokens_each: int) -> str:
    parts = []
    for i, summary in enumerate(summaries, start=1):
        parts.append(f"Solution {i}:\n{truncate_tokens(summary, max_tokens_each)}")
    return "\n\n".join(parts)


def build_selection_prompt(
    summaries: Sequence[str],
    config: GenSelectConfig,
    problem: Problem | None = None,
    prompt_template: str | None = None,
) -> str:
    template = prompt_template or default_template("genselect")
    return template.format(
        problem=problem.statement if problem else "(statement unavailable)",
        num_candidates=len(summaries),
        candidates=render_candidates(summaries, config.summary_max_tokens),
    )


async def run_selection(
    group: Sequence[str],
    backend: CompletionBackend,
    config: GenSelectConfig,
    problem: Problem | None = None,
    prompt_template: str | None = None,
) -> tuple[int, str]:
    """Ask the backend to pick the best candidate; returns (index, reasoning)."""
    if not (2 <= len(group) <= config.max_group):
        raise ValueError(f"selection group size {len(group)} outside [2, {config.max_group}]")
    prompt = build_selection_prompt(group, config, problem, prompt_template)
    params = SamplingParams(temperature=0.6, top_p=0.95, max_tokens=config.summary_max_tokens)
    result = await backend.complete(CompletionRequest(prompt=prompt, params=params))
    return parse_selection(result.text, len(group)), result.text


def filter_training_records(records: Sequence[SelectionRecord]) -> list[SelectionRecord]:
    """Keep exactly the records whose chosen candidate is correct."""
    return [r for r in records if r.candidate_summaries[r.chosen_index].correct]


async def summarize_selection(
    record: SelectionRecord,
    backend: CompletionBackend,
    config: GenSelectConfig,
    problem: Problem | None = None,
    prompt_template: str | None = None,
) -> SelectionRecord | None:
    """Regenerate the comparison summary for a selection record.

    The summary replaces the full reasoning trace at training time. When
    its final verdict names a different candidate than ``chosen_index``
    the record is inconsistent and dropped (None); a summary with no
    parseable verdict is stored as-is.
    """
    if record.selection_reasoning is None:
        raise ValueError("record has no selection_reasoning to summarize")
    template = prompt_template or default_template("summarize_comparison")
    prompt = template.format(
        problem=problem.statement if problem else "(statement unavailable)",
        candidates=render_candidates(
            [c.summary_text for c in record.candidate_summaries], config.summary_max_tokens
        ),
        reasoning=record.selection_reasoning,
    )
    params = SamplingParams(temperature=0.7, top_p=0.95, max_tokens=2048)
    result = await backend.complete(CompletionRequest(prompt=prompt, params=params))
    summary = result.text
    try:
        verdict = parse_selection(summary, len(record.candidate_summaries))
    except UnparseableSelection:
        verdict = None
    if verdict is not None and verdict != record.chosen_index:
        return None
    return SelectionRecord(
        problem_id=record.problem_id,
        candidate_summaries=record.candidate_summaries,
        chosen_index=record.chosen_index,
        selection_reasoning=record.selection_reasoning,
        selection_summary=summary,
        require_mixed=record.require_mixed,
    )


async def build_training_records(
    problem: Problem,
    labeled_pool: Sequence[Solution],
    backend: CompletionBackend,
    config: GenSelectConfig,
    prompt_template: str | None = None,
) -> tuple[list[SelectionRecord], dict[str, int]]:
    """Groups -> selections -> records for one problem's labeled pool.

    ``labeled_pool`` solutions need ``summary_text`` and ``correct`` set.
    Returns the records (unfiltered) plus drop statistics.
    """
    pool = [(s.summary_text or "", bool(s.correct)) for s in labeled_pool]
    rng = random.Random(f"{config.rng_seed}:{problem.id}")
    stats = {"groups": 0, "unparseable": 0, "records": 0}
    groups = sample_training_groups(pool, config, rng)
    stats["groups"] = len(groups)
    records = []
    for members in groups:
        summaries = [pool[i][0] for i in members]
        try:
            chosen, reasoning = await run_selection(
                summaries, backend, config, problem, prompt_template
            )
        except UnparseableSelection:
            stats["unparseable"] += 1
            continue
        candidates = tuple(
            CandidateSummary(
                solution_id=f"{problem.id}#{i}",
                summary_text=pool[i][0],
                extracted_answer=labeled_pool[i].extracted_answer,
                correct=pool[i][1],
            )
            for i in members
        )
        records.append(
            SelectionRecord(
                problem_id=problem.id,
                candidate_summaries=candidates,
                chosen_index=chosen,
                selection_reasoning=reasoning,
            )
        )
    stats["records"] = len(records)
    return records, stats


async def genselect_inference(
    pool: Sequence[Solution],
    config: GenSelectConfig,
    backend: CompletionBackend,
    equivalence: EquivalencePredicate = answers_match,
    problem: Problem | None = None,
    prompt_template: str | None = None,
) -> str | None:
    """Repeated subset selection aggregated by majority vote.

    Each repeat samples ``inference_subset_size`` solutions (all when the
    pool is smaller), runs one selection, and records the picked
    solution's answer; the majority of picks wins. An unparseable
    selection is retried once with a fresh completion, then skipped.
    """
    if not pool:
        raise ValueError("pool must be non-empty")
    if len(pool) == 1:
        return pool[0].extracted_answer
    rng = random.Random(config.rng_seed)
    chosen_answers: list[str | None] = []
    parse_failures = 0
    for _ in range(config.inference_repeats):
        subset = rng.sample(list(pool), k=min(config.inference_subset_size, len(pool)))
        summaries = [
            s.summary_text
            if s.summary_text
            else truncate_tokens(s.reasoning_text, config.summary_max_tokens)
            for s in subset
        ]
        picked: int | None = None
        for _attempt in range(2):
            try:
                picked, _ = await run_selection(
                    summaries, backend, config, problem, prompt_template
                )
                break
            except UnparseableSelection:
                continue
        if picked is None:
            parse_failures += 1
            continue
        chosen_answers.append(subset[picked].extracted_answer)
    if not chosen_answers:
        raise AllSelectionsUnparseable(f"{parse_failures} repeats, none parseable")
    vote = majority_vote(chosen_answers, equivalence, TieBreak.FIRST_COMPLETED)
    return vote.winner
