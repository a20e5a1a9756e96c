"""Evaluation metrics: averaged pass@1, maj@k, pass@k, unfinished rate.

All fractions are exact (`fractions.Fraction`); nothing here is float
arithmetic. Majority voting groups answers into equivalence classes via
the transitive closure of a pairwise predicate, so judge-backed
equivalence (non-string classes) plugs in unchanged.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

from .errors import InsufficientGenerations
from .judging import answers_match, normalize_answer

EquivalencePredicate = Callable[[str, str], bool]


class TieBreak(str, enum.Enum):
    FIRST_COMPLETED = "first_completed"
    LEXICOGRAPHIC = "lexicographic"


@dataclass(frozen=True)
class MetricConfig:
    k: int = 64
    tie_break: TieBreak = TieBreak.FIRST_COMPLETED
    exclude_unfinished: bool = True

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class GenerationJudgment:
    answer: str | None
    correct: bool
    finished: bool


@dataclass(frozen=True)
class ProblemResult:
    """Judgments for one problem, in generation completion order."""

    problem_id: str
    judgments: tuple[GenerationJudgment, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "judgments", tuple(self.judgments))


@dataclass(frozen=True)
class VoteResult:
    winner: str | None
    count: int
    tally: tuple[tuple[str, int], ...]  # (class representative, class size)


def equivalence_classes(
    answers: Sequence[str], equivalence: EquivalencePredicate
) -> list[list[int]]:
    """Indices grouped by the transitive closure of pairwise links."""
    parent = list(range(len(answers)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(len(answers)):
        for j in range(i + 1, len(answers)):
            if equivalence(answers[i], answers[j]):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(len(answers)):
        groups.setdefault(find(i), []).append(i)
    # keyed by smallest member index, so ordering is completion order
    return [groups[root] for root in sorted(groups)]


def majority_vote(
    answers: Sequence[str | None],
    equivalence: EquivalencePredicate = answers_match,
    tie_break: TieBreak = TieBreak.FIRST_COMPLETED,
) -> VoteResult:
    """Winner of the largest equivalence class among non-None answers.

    Ties: ``first_completed`` prefers the class containing the earliest
    answer and returns that earliest member as the winner (completion-order
    semantics). ``lexicographic`` prefers the class whose smallest
    normalized member sorts first and returns that member, which makes the
    result independent of answer order (consensus-labeling semantics).
    Empty input gives winner None.
    """
    present = [(i, a) for i, a in enumerate(answers) if a is not None]
    if not present:
        return VoteResult(None, 0, ())
    values = [a for _, a in present]
    classes = equivalence_classes(values, equivalence)

    def representative(cls: list[int]) -> str:
        if tie_break is TieBreak.LEXICOGRAPHIC:
            return min((values[i] for i in cls), key=lambda v: (normalize_answer(v), v))
        return values[cls[0]]

    def sort_key(cls: list[int]):
        if tie_break is TieBreak.LEXICOGRAPHIC:
            tiebreak = min(normalize_answer(values[i]) for i in cls)
        else:
            tiebreak = cls[0]
        return (-len(cls), tiebreak)

    ranked = sorted(classes, key=sort_key)
    winning = ranked[0]
    tally = tuple((representative(cls), len(cls)) for cls in ranked)
    return VoteResult(representative(winning), len(winning), tally)


def _require_k(results: Sequence[ProblemResult], k: int) -> None:
    for r in results:
        if len(r.judgments) < k:
            raise InsufficientGenerations(r.problem_id, len(r.judgments), k)


def pass_at_1_avg(results: Sequence[ProblemResult], n: int) -> Fraction:
    """Mean over problems of (correct among first n) / n.

    Unfinished generations count in the denominator (they are simply
    incorrect), which is why this can sit well below maj@k.
    """
    _require_k(results, n)
    if not results:
        return Fraction(0)
    total = Fraction(0)
    for r in results:
        correct = sum(1 for j in r.judgments[:n] if j.correct)
        total += Fraction(correct, n)
    return total / len(results)


def maj_at_k(
    results: Sequence[ProblemResult],
    k: int,
    equivalence: EquivalencePredicate = answers_match,
    judge: Callable[[str, str], bool] | None = None,
    config: MetricConfig | None = None,
) -> Fraction:
    """Fraction of problems whose majority answer over the first k is correct.

    ``judge(problem_id, answer) -> bool`` decides correctness of the winner;
    when omitted, the winner inherits the stored correctness of the
    generation it came from.
    """
    config = config or MetricConfig(k=k)
    _require_k(results, k)
    if not results:
        return Fraction(0)
    correct_problems = 0
    for r in results:
        window = r.judgments[:k]
        if config.exclude_unfinished:
            answers: list[str | None] = [j.answer if j.finished else None for j in window]
        else:
            answers = [j.answer if j.answer is not None else "<unfinished>" for j in window]
        vote = majority_vote(answers, equivalence, config.tie_break)
        if vote.winner is None or vote.winner == "<unfinished>":
            continue
        if judge is not None:
            if judge(r.problem_id, vote.winner):
                correct_problems += 1
        else:
            idx = next(
                i for i, j in enumerate(window) if j.answer == vote.winner and (j.finished or not config.exclude_unfinished)
            )
            if window[idx].correct:
                correct_problems += 1
    return Fraction(correct_problems, len(results))


def pass_at_k(results: Sequence[ProblemResult], k: int) -> Fraction:
    """Fraction of problems with at least one correct among the first k."""
    _require_k(results, k)
    if not results:
        return Fraction(0)
    hits = sum(1 for r in results if any(j.correct for j in r.judgments[:k]))
    return Fraction(hits, len(results))


def unfinished_rate(results: Sequence[ProblemResult]) -> Fraction:
    """Fraction of all generations that never produced a boxed answer."""
    total = sum(len(r.judgments) for r in results)
    if total == 0:
        return Fraction(0)
    unfinished = sum(1 for r in results for j in r.judgments if not j.finished)
    return Fraction(unfinished, total)
