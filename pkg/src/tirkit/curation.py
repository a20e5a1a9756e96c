"""Staged dataset curation and solution-quality filtering.

Problem flow: extract problems from raw posts, classify (proof / multiple
choice / binary / invalid), convert proofs to answer-based questions,
extract answers from discussions, and decontaminate against benchmark
sets. Solution flow: drop answer-mismatched chains of thought (consensus
labels for unlabeled problems), estimate problem hardness by pass rate,
assess code blocks for novelty/significance, and apply the stage-0 and
later-stage tool-use filters.
"""

from __future__ import annotations

import asyncio
import enum
import json
import os
import re
from collections import Counter
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Any, Awaitable, Callable, Iterable, Sequence

from .backends.base import CompletionBackend, CompletionRequest, parse_yes_no
from .engine import TirConfig, iter_code_blocks
from .errors import SchemaError, UnparseableVerdict
from .judging import answers_match
from .metrics import TieBreak, majority_vote
from .model import AnswerSource, Problem, ProblemCategory, SamplingParams, Solution
from .prompts import PromptLibrary

EquivalencePredicate = Callable[[str, str], bool]

STAGE_PARAMS = SamplingParams(temperature=0.0, top_p=0.95, max_tokens=2048)


@dataclass(frozen=True)
class RawPost:
    """Pre-extracted forum post text, the pipeline's entry format."""

    id: str
    text: str
    source_url: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"schema_version": 1, "id": self.id, "text": self.text, "source_url": self.source_url}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RawPost":
        if not d.get("id") or not isinstance(d.get("id"), str):
            raise SchemaError(None, "id", "required")
        if not isinstance(d.get("text"), str):
            raise SchemaError(None, "text", "required")
        return cls(id=d["id"], text=d["text"], source_url=d.get("source_url"))


class Parser(str, enum.Enum):
    JSON_LIST = "json_list"
    YES_NO = "yes_no"
    FREE_TEXT = "free_text"
    ANSWER_EXTRACTION = "answer_extraction"


class FilterAction(str, enum.Enum):
    DROP_IF_YES = "drop_if_yes"
    DROP_IF_NO = "drop_if_no"
    ANNOTATE = "annotate"
    TRANSFORM = "transform"


_COMPATIBLE = {
    Parser.YES_NO: {FilterAction.DROP_IF_YES, FilterAction.DROP_IF_NO, FilterAction.ANNOTATE},
    Parser.JSON_LIST: {FilterAction.TRANSFORM},
    Parser.FREE_TEXT: {FilterAction.TRANSFORM},
    Parser.ANSWER_EXTRACTION: {FilterAction.ANNOTATE},
}


@dataclass(frozen=True)
class StageSpec:
    name: str
    prompt_template: str  # template id in the prompt library
    parser: Parser
    filter_action: FilterAction
    applies_if: tuple[str, str] | None = None  # (annotation key, value) gate
    transform_category: ProblemCategory | None = None

    def __post_init__(self) -> None:
        if self.filter_action not in _COMPATIBLE[self.parser]:
            raise ValueError(
                f"stage {self.name}: parser {self.parser.value} incompatible "
                f"with action {self.filter_action.value}"
            )


@dataclass
class StageReport:
    name: str
    input_count: int = 0
    passed_count: int = 0
    dropped_count: int = 0
    review_count: int = 0

    def to_dict(self) -> dict[str, int | str]:
        return {
            "stage": self.name,
            "input": self.input_count,
            "passed": self.passed_count,
            "dropped": self.dropped_count,
            "review": self.review_count,
        }


@dataclass
class StageResult:
    passed: list[Any]
    dropped: list[Any]
    review: list[tuple[Any, str]]  # (record, reason)
    annotations: dict[str, str]  # record id -> parsed value
    report: StageReport


class StageCheckpoint:
    """Append-only log of processed record ids, for cheap pipeline restarts."""

    def __init__(self, path: str | os.PathLike):
        self.path = str(path)
        self.entries: dict[str, dict[str, Any]] = {}
        if os.path.exists(self.path):
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        entry = json.loads(line)
                        self.entries[entry["id"]] = entry

    def get(self, record_id: str) -> dict[str, Any] | None:
        return self.entries.get(record_id)

    def record(self, record_id: str, disposition: str, payload: Any = None) -> None:
        entry = {"id": record_id, "disposition": disposition, "payload": payload}
        self.entries[record_id] = entry
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


def _prompt_fields(record: Any) -> dict[str, str]:
    if isinstance(record, Problem):
        return {"statement": record.statement, "text": record.statement}
    if isinstance(record, RawPost):
        return {"statement": record.text, "text": record.text}
    raise TypeError(f"unsupported record type {type(record).__name__}")


def _parse_json_list(completion: str) -> list[str] | None:
    text = completion.strip()
    start, end = text.find("["), text.rfind("]")
    if start == -1 or end <= start:
        return None
    try:
        parsed = json.loads(text[start : end + 1])
    except json.JSONDecodeError:
        return None
    if not isinstance(parsed, list) or not all(isinstance(x, str) for x in parsed):
        return None
    return parsed


async def run_stage(
    records: Sequence[Any],
    stage: StageSpec,
    backend: CompletionBackend,
    templates: PromptLibrary | None = None,
    annotations: dict[str, dict[str, str]] | None = None,
    checkpoint: StageCheckpoint | None = None,
    concurrency: int = 8,
) -> StageResult:
    """Prompt each record through the stage and apply its filter action.

    Unparseable verdicts are routed to the review list, never silently
    dropped; counts always satisfy input = passed + dropped + review.
    Records failing the ``applies_if`` gate pass through untouched without
    a backend call.
    """
    templates = templates or PromptLibrary()
    annotations = annotations if annotations is not None else {}
    template_text = templates.get(stage.prompt_template)
    semaphore = asyncio.Semaphore(concurrency)
    report = StageReport(name=stage.name, input_count=len(records))

    async def classify(record: Any) -> tuple[str, Any]:
        """Returns (disposition, payload)."""
        rid = record.id
        if stage.applies_if is not None:
            key, value = stage.applies_if
            if annotations.get(rid, {}).get(key) != value:
                return "skip", None
        if checkpoint is not None:
            entry = checkpoint.get(rid)
            if entry is not None:
                return entry["disposition"], entry.get("payload")
        prompt = template_text.format(**_prompt_fields(record))
        async with semaphore:
            result = await backend.complete(
                CompletionRequest(prompt=prompt, params=STAGE_PARAMS)
            )
        completion = result.text
        if stage.parser is Parser.YES_NO:
            try:
                verdict = parse_yes_no(completion)
            except UnparseableVerdict:
                return "review", "unparseable yes/no verdict"
            if stage.filter_action is FilterAction.DROP_IF_YES:
                return ("drop", None) if verdict else ("pass", None)
            if stage.filter_action is FilterAction.DROP_IF_NO:
                return ("pass", None) if verdict else ("drop", None)
            return "annotate", "yes" if verdict else "no"
        if stage.parser is Parser.JSON_LIST:
            items = _parse_json_list(completion)
            if items is None:
                return "review", "completion is not a JSON list of strings"
            return "flatmap", items
        if stage.parser is Parser.FREE_TEXT:
            text = completion.strip()
            if not text:
                return "review", "empty transform output"
            return "transform", text
        # answer extraction
        answer = completion.strip()
        if not answer or answer.lower() == "none":
            return "annotate_answer", None
        return "annotate_answer", answer

    outcomes = await asyncio.gather(*(classify(r) for r in records))

    result = StageResult(passed=[], dropped=[], review=[], annotations={}, report=report)
    for record, (disposition, payload) in zip(records, outcomes):
        rid = record.id
        if checkpoint is not None and checkpoint.get(rid) is None:
            checkpoint.record(rid, disposition, payload)
        if disposition == "skip":
            result.passed.append(record)
            report.passed_count += 1
        elif disposition == "pass":
            result.passed.append(record)
            report.passed_count += 1
        elif disposition == "drop":
            result.dropped.append(record)
            report.dropped_count += 1
        elif disposition == "review":
            result.review.append((record, payload))
            report.review_count += 1
        elif disposition == "annotate":
            annotations.setdefault(rid, {})[stage.name] = payload
            result.annotations[rid] = payload
            result.passed.append(record)
            report.passed_count += 1
        elif disposition == "annotate_answer":
            if payload is None:
                updated = replace(
                    record,
                    expected_answer=None,
                    answer_source=None,
                    category=(
                        record.category
                        if record.category is ProblemCategory.CONVERTED_PROOF
                        else ProblemCategory.NO_ANSWER
                    ),
                )
            else:
                updated = replace(
                    record,
                    expected_answer=payload,
                    answer_source=AnswerSource.EXTRACTED,
                    category=(
                        record.category
                        if record.category is ProblemCategory.CONVERTED_PROOF
                        else ProblemCategory.HAS_ANSWER
                    ),
                )
            result.annotations[rid] = payload or ""
            result.passed.append(updated)
            report.passed_count += 1
        elif disposition == "transform":
            updated = replace(record, statement=payload)
            if stage.transform_category is not None:
                updated = replace(updated, category=stage.transform_category)
            result.passed.append(updated)
            report.passed_count += 1
        elif disposition == "flatmap":
            for k, statement in enumerate(payload, start=1):
                result.passed.append(
                    Problem(
                        id=f"{rid}-{k}",
                        statement=statement,
                        category=ProblemCategory.NO_ANSWER,
                        source_url=getattr(record, "source_url", None),
                    )
                )
            report.passed_count += 1  # the input post was processed
        else:  # pragma: no cover - defensive
            raise RuntimeError(f"unknown disposition {disposition}")
    return result


def classification_stages() -> list[StageSpec]:
    """The canonical pipeline after extraction, in declared order."""
    return [
        StageSpec("classify_mcq", "classify_mcq", Parser.YES_NO, FilterAction.DROP_IF_YES),
        StageSpec("classify_binary", "classify_binary", Parser.YES_NO, FilterAction.DROP_IF_YES),
        StageSpec("classify_invalid", "classify_valid", Parser.YES_NO, FilterAction.DROP_IF_YES),
        StageSpec("classify_proof", "classify_proof", Parser.YES_NO, FilterAction.ANNOTATE),
        StageSpec(
            "convert_proofs",
            "convert_proof",
            Parser.FREE_TEXT,
            FilterAction.TRANSFORM,
            applies_if=("classify_proof", "yes"),
            transform_category=ProblemCategory.CONVERTED_PROOF,
        ),
        StageSpec("extract_answers", "extract_answer", Parser.ANSWER_EXTRACTION, FilterAction.ANNOTATE),
    ]


EXTRACTION_STAGE = StageSpec(
    "extract_problems", "extract_problems", Parser.JSON_LIST, FilterAction.TRANSFORM
)


# --- decontamination ---------------------------------------------------------------


def ngram_profile(text: str, n: int = 3) -> Counter:
    cleaned = re.sub(r"\s+", " ", text.lower()).strip()
    if len(cleaned) < n:
        return Counter([cleaned] if cleaned else [])
    return Counter(cleaned[i : i + n] for i in range(len(cleaned) - n + 1))


def ngram_cosine(a: Counter, b: Counter) -> float:
    if not a or not b:
        return 0.0
    small, large = (a, b) if len(a) <= len(b) else (b, a)
    dot = sum(count * large.get(gram, 0) for gram, count in small.items())
    if dot == 0:
        return 0.0
    norm_a = sum(c * c for c in a.values()) ** 0.5
    norm_b = sum(c * c for c in b.values()) ** 0.5
    return dot / (norm_a * norm_b)


@dataclass(frozen=True)
class RemovalLogEntry:
    problem_id: str
    benchmark_id: str
    similarity: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "benchmark_id": self.benchmark_id,
            "similarity": self.similarity,
        }


async def decontaminate(
    problems: Sequence[Problem],
    benchmark_problems: Sequence[Problem],
    backend: CompletionBackend,
    templates: PromptLibrary | None = None,
    top_k: int = 5,
    ngram_n: int = 3,
) -> tuple[list[Problem], list[RemovalLogEntry]]:
    """Drop problems that an LLM judges to be the same as a benchmark item.

    Retrieval is character n-gram cosine; only the top-k candidates with
    nonzero overlap reach the judge, so a problem with zero overlap costs
    no backend calls.
    """
    if not benchmark_problems:
        raise ValueError("benchmark set must be non-empty")
    templates = templates or PromptLibrary()
    template_text = templates.get("decontam_same_problem")
    bench_profiles = [ngram_profile(b.statement, ngram_n) for b in benchmark_problems]
    retained: list[Problem] = []
    removed: list[RemovalLogEntry] = []
    for problem in problems:
        profile = ngram_profile(problem.statement, ngram_n)
        scored = [
            (ngram_cosine(profile, bp), i) for i, bp in enumerate(bench_profiles)
        ]
        candidates = sorted(
            ((sim, i) for sim, i in scored if sim > 0.0), key=lambda t: (-t[0], t[1])
        )[:top_k]
        hit: RemovalLogEntry | None = None
        for sim, i in candidates:
            prompt = template_text.format(
                statement=problem.statement,
                benchmark_statement=benchmark_problems[i].statement,
            )
            result = await backend.complete(CompletionRequest(prompt=prompt, params=STAGE_PARAMS))
            try:
                same = parse_yes_no(result.text)
            except UnparseableVerdict:
                continue  # an unreadable verdict never drops a problem
            if same:
                hit = RemovalLogEntry(problem.id, benchmark_problems[i].id, sim)
                break
        if hit is None:
            retained.append(problem)
        else:
            removed.append(hit)
    return retained, removed


# --- solution filtering and labeling --------------------------------------------------


def consensus_label(
    answers: Iterable[str | None], equivalence: EquivalencePredicate = answers_match
) -> str | None:
    """Most common answer, ties broken lexicographically on canonical form."""
    vote = majority_vote(list(answers), equivalence, TieBreak.LEXICOGRAPHIC)
    return vote.winner


def problem_label(
    problem: Problem,
    solutions: Sequence[Solution],
    equivalence: EquivalencePredicate = answers_match,
) -> str | None:
    if problem.expected_answer is not None:
        return problem.expected_answer
    return consensus_label((s.extracted_answer for s in solutions), equivalence)


def label_solutions(
    problem: Problem,
    solutions: Sequence[Solution],
    equivalence: EquivalencePredicate = answers_match,
) -> list[Solution]:
    """Set ``correct`` on each solution against the problem's label.

    Unlabeled problems get a consensus label first (most common answer
    across the candidates); solutions without answers are marked wrong.
    """
    label = problem_label(problem, solutions, equivalence)
    out = []
    for s in solutions:
        if label is None or s.extracted_answer is None:
            out.append(replace(s, correct=False))
        else:
            out.append(replace(s, correct=equivalence(s.extracted_answer, label)))
    return out


def filter_cot_solutions(
    solutions: Sequence[Solution],
    problems: Sequence[Problem],
    equivalence: EquivalencePredicate = answers_match,
) -> list[Solution]:
    """Keep solutions whose answer matches the problem label.

    Unfinished solutions are always dropped. Problems missing from the
    problem list contribute nothing.
    """
    by_problem: dict[str, Problem] = {p.id: p for p in problems}
    grouped: dict[str, list[Solution]] = {}
    for s in solutions:
        grouped.setdefault(s.problem_id, []).append(s)
    retained: list[Solution] = []
    for pid, group in grouped.items():
        problem = by_problem.get(pid)
        if problem is None:
            continue
        for labeled in label_solutions(problem, group, equivalence):
            if labeled.finished and labeled.correct:
                retained.append(labeled)
    return retained


# --- hardness estimation ----------------------------------------------------------------


Generate = Callable[[Problem], Awaitable[Solution]]


async def estimate_hardness(
    problem: Problem,
    generate: Generate,
    n: int = 32,
    equivalence: EquivalencePredicate = answers_match,
) -> float:
    """Pass rate over n fresh generations against the problem's label."""
    if problem.expected_answer is None:
        raise ValueError("hardness estimation needs a labeled problem")
    correct = 0
    for _ in range(n):
        solution = await generate(problem)
        if solution.extracted_answer is not None and equivalence(
            solution.extracted_answer, problem.expected_answer
        ):
            correct += 1
    return float(Fraction(correct, n))


DEFAULT_BUDGET_TIERS: tuple[tuple[float, int], ...] = ((0.5, 4), (0.1, 16), (0.0, 32))


def generation_budget(
    difficulty: float, tiers: tuple[tuple[float, int], ...] = DEFAULT_BUDGET_TIERS
) -> int:
    """Solution-generation budget for a problem given its pass rate.

    Harder problems (lower pass rate) get more generations; tiers are
    (threshold, budget) pairs checked in descending threshold order.
    """
    for threshold, budget in tiers:
        if difficulty >= threshold:
            return budget
    return tiers[-1][1]


# --- code-block assessment and TIR filters ------------------------------------------------


class Novelty(str, enum.Enum):
    NOVEL = "novel"
    VERIFICATION = "verification"


class Significance(str, enum.Enum):
    SIGNIFICANT = "significant"
    MODERATE = "moderate"
    TRIVIAL = "trivial"


@dataclass(frozen=True)
class CodeBlockAssessment:
    novelty: Novelty
    significance: Significance


def _parse_label(completion: str, labels: Iterable[str]) -> str | None:
    found = [
        (m.start(), word)
        for word in labels
        for m in re.finditer(rf"\b{word}\b", completion, re.IGNORECASE)
    ]
    if not found:
        return None
    return max(found)[1]


async def assess_code_blocks(
    solution: Solution,
    backend: CompletionBackend,
    templates: PromptLibrary | None = None,
    config: TirConfig | None = None,
) -> list[CodeBlockAssessment | None]:
    """One assessment per code block, None where a verdict was unparseable."""
    templates = templates or PromptLibrary()
    config = config or TirConfig()
    blocks = iter_code_blocks(solution.reasoning_text, config)
    if not blocks:
        raise ValueError("solution has no code blocks to assess")
    novelty_template = templates.get("tir_novelty")
    significance_template = templates.get("tir_significance")
    assessments: list[CodeBlockAssessment | None] = []
    for code in blocks:
        nov_result = await backend.complete(
            CompletionRequest(
                prompt=novelty_template.format(solution=solution.reasoning_text, code=code),
                params=STAGE_PARAMS,
            )
        )
        sig_result = await backend.complete(
            CompletionRequest(
                prompt=significance_template.format(solution=solution.reasoning_text, code=code),
                params=STAGE_PARAMS,
            )
        )
        novelty = _parse_label(nov_result.text, [e.value for e in Novelty])
        significance = _parse_label(sig_result.text, [e.value for e in Significance])
        if novelty is None or significance is None:
            assessments.append(None)
        else:
            assessments.append(
                CodeBlockAssessment(Novelty(novelty.lower()), Significance(significance.lower()))
            )
    return assessments


MAX_STAGE0_BLOCKS = 2


def filter_tir_stage0(
    solution: Solution, assessments: Sequence[CodeBlockAssessment]
) -> tuple[bool, str]:
    """Seed-stage keep rule for tool-use quality.

    Keep iff the answer is correct, 1..2 code blocks exist, and either some
    block is novel+significant or strictly more than half the blocks are
    novel+moderate.
    """
    if solution.correct is not True:
        return False, "incorrect_answer"
    n = len(assessments)
    if n == 0:
        return False, "no_code"
    if n > MAX_STAGE0_BLOCKS:
        return False, "too_many_blocks"
    novel_significant = any(
        a.novelty is Novelty.NOVEL and a.significance is Significance.SIGNIFICANT
        for a in assessments
    )
    novel_moderate = sum(
        1
        for a in assessments
        if a.novelty is Novelty.NOVEL and a.significance is Significance.MODERATE
    )
    if novel_significant or novel_moderate * 2 > n:
        return True, "kept"
    return False, "insignificant_code"


def filter_tir_stageN(
    solution: Solution, requested_limit: int, config: TirConfig | None = None
) -> tuple[bool, str]:
    """Later-stage rule: correct, uses code, and respects the requested limit.

    Novelty/significance assessments are deliberately not applied here.
    """
    config = config or TirConfig()
    if solution.correct is not True:
        return False, "incorrect_answer"
    blocks = len(iter_code_blocks(solution.reasoning_text, config))
    if blocks == 0 and not solution.code_trace:
        return False, "no_code"
    if solution.limit_violation or blocks > requested_limit:
        return False, "limit_exceeded"
    return True, "kept"


# --- second-round hard subset ----------------------------------------------------------


def is_hard_problem(problem: Problem, max_pass_rate: float = 0.3) -> bool:
    """Second-round SFT criterion: keep problems the reference model finds hard."""
    return problem.difficulty is not None and problem.difficulty <= max_pass_rate


def hard_subset_solutions(
    solutions: Sequence[Solution], min_tokens: int = 5000
) -> list[Solution]:
    """Companion solution filter: keep long-form solutions only."""
    return [s for s in solutions if s.token_count >= min_tokens]
