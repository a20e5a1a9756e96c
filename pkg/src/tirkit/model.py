"""Domain types and JSONL (de)serialization.

All types are frozen value objects, safe to share between tasks. On-disk
records are JSON Lines with a leading ``schema_version: 1`` field; field
names match the attribute names below (snake_case).
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, TextIO

from .errors import IoError, SchemaError

SCHEMA_VERSION = 1


class AnswerSource(str, enum.Enum):
    EXTRACTED = "extracted"
    MAJORITY_CONSENSUS = "majority_consensus"
    HUMAN = "human"


class ProblemCategory(str, enum.Enum):
    HAS_ANSWER = "has_answer"
    CONVERTED_PROOF = "converted_proof"
    NO_ANSWER = "no_answer"


class SolutionMode(str, enum.Enum):
    COT = "cot"
    TIR = "tir"
    GENSELECT = "genselect"


class ExecStatus(str, enum.Enum):
    OK = "ok"
    ERROR = "error"
    TIMEOUT = "timeout"


def _require(cond: bool, field_name: str, message: str) -> None:
    if not cond:
        raise SchemaError(None, field_name, message)


def _opt_str(value: Any, field_name: str) -> str | None:
    if value is None:
        return None
    _require(isinstance(value, str), field_name, f"expected string, got {type(value).__name__}")
    return value


@dataclass(frozen=True)
class Problem:
    """One curated math problem with provenance and difficulty estimate."""

    id: str
    statement: str
    expected_answer: str | None = None
    answer_source: AnswerSource | None = None
    category: ProblemCategory = ProblemCategory.NO_ANSWER
    difficulty: float | None = None
    source_url: str | None = None

    def __post_init__(self) -> None:
        _require(bool(self.id), "id", "must be non-empty")
        _require(isinstance(self.statement, str), "statement", "must be a string")
        has_answer = self.expected_answer is not None
        has_source = self.answer_source is not None
        _require(
            has_answer == has_source,
            "answer_source",
            "expected_answer and answer_source must be set together",
        )
        if self.difficulty is not None:
            _require(0.0 <= self.difficulty <= 1.0, "difficulty", "must lie in [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "statement": self.statement,
            "expected_answer": self.expected_answer,
            "answer_source": self.answer_source.value if self.answer_source else None,
            "category": self.category.value,
            "difficulty": self.difficulty,
            "source_url": self.source_url,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Problem":
        return cls(
            id=_field(d, "id", str),
            statement=_field(d, "statement", str),
            expected_answer=_opt_str(d.get("expected_answer"), "expected_answer"),
            answer_source=_enum_or_none(d.get("answer_source"), AnswerSource, "answer_source"),
            category=_enum(d.get("category", "no_answer"), ProblemCategory, "category"),
            difficulty=_number_or_none(d.get("difficulty"), "difficulty"),
            source_url=_opt_str(d.get("source_url"), "source_url"),
        )


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.7
    top_p: float = 0.95
    max_tokens: int = 16384
    stop_sequences: tuple[str, ...] = ()
    seed: int | None = None

    def __post_init__(self) -> None:
        _require(self.temperature >= 0, "temperature", "must be non-negative")
        _require(0 < self.top_p <= 1, "top_p", "must lie in (0, 1]")
        _require(self.max_tokens >= 1, "max_tokens", "must be >= 1")
        _require(all(s for s in self.stop_sequences), "stop_sequences", "entries must be non-empty")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))

    def to_dict(self) -> dict[str, Any]:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
            "stop_sequences": list(self.stop_sequences),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SamplingParams":
        return cls(
            temperature=_number(d.get("temperature", 0.7), "temperature"),
            top_p=_number(d.get("top_p", 0.95), "top_p"),
            max_tokens=_int(d.get("max_tokens", 16384), "max_tokens"),
            stop_sequences=tuple(_str_list(d.get("stop_sequences", []), "stop_sequences")),
            seed=_int_or_none(d.get("seed"), "seed"),
        )


@dataclass(frozen=True)
class CodeExecution:
    """One sandbox call as recorded in a solution trace.

    ``stdout_truncated`` holds the output as shown back to the model
    (stdout when ok, stderr when the run errored), already cut to the
    configured character cap.
    """

    code: str
    stdout_truncated: str
    status: ExecStatus
    duration_ms: int
    remaining_after: int

    def __post_init__(self) -> None:
        _require(self.duration_ms >= 0, "duration_ms", "must be non-negative")
        _require(self.remaining_after >= 0, "remaining_after", "must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "code": self.code,
            "stdout_truncated": self.stdout_truncated,
            "status": self.status.value,
            "duration_ms": self.duration_ms,
            "remaining_after": self.remaining_after,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CodeExecution":
        return cls(
            code=_field(d, "code", str),
            stdout_truncated=_field(d, "stdout_truncated", str),
            status=_enum(d.get("status"), ExecStatus, "status"),
            duration_ms=_int(d.get("duration_ms", 0), "duration_ms"),
            remaining_after=_int(d.get("remaining_after", 0), "remaining_after"),
        )


@dataclass(frozen=True)
class Solution:
    """One generation: reasoning text, code trace, extracted answer, status."""

    problem_id: str
    mode: SolutionMode
    reasoning_text: str
    summary_text: str | None = None
    code_trace: tuple[CodeExecution, ...] = ()
    extracted_answer: str | None = None
    finished: bool = False
    token_count: int = 0
    wall_time_ms: int = 0
    correct: bool | None = None
    limit_violation: bool = False
    error: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "code_trace", tuple(self.code_trace))
        _require(bool(self.problem_id), "problem_id", "must be non-empty")
        if self.mode is SolutionMode.COT:
            _require(not self.code_trace, "code_trace", "must be empty for cot solutions")
        _require(
            self.finished == (self.extracted_answer is not None),
            "finished",
            "finished must hold exactly when an answer was extracted",
        )
        _require(self.token_count >= 0, "token_count", "must be non-negative")
        _require(self.wall_time_ms >= 0, "wall_time_ms", "must be non-negative")
        remaining = [e.remaining_after for e in self.code_trace]
        _require(
            all(a > b for a, b in zip(remaining, remaining[1:])),
            "code_trace",
            "remaining_after must strictly decrease along the trace",
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "problem_id": self.problem_id,
            "mode": self.mode.value,
            "reasoning_text": self.reasoning_text,
            "summary_text": self.summary_text,
            "code_trace": [e.to_dict() for e in self.code_trace],
            "extracted_answer": self.extracted_answer,
            "finished": self.finished,
            "token_count": self.token_count,
            "wall_time_ms": self.wall_time_ms,
            "correct": self.correct,
            "limit_violation": self.limit_violation,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Solution":
        trace = d.get("code_trace", [])
        _require(isinstance(trace, list), "code_trace", "must be a list")
        return cls(
            problem_id=_field(d, "problem_id", str),
            mode=_enum(d.get("mode"), SolutionMode, "mode"),
            reasoning_text=_field(d, "reasoning_text", str),
            summary_text=_opt_str(d.get("summary_text"), "summary_text"),
            code_trace=tuple(CodeExecution.from_dict(e) for e in trace),
            extracted_answer=_opt_str(d.get("extracted_answer"), "extracted_answer"),
            finished=_bool(d.get("finished", False), "finished"),
            token_count=_int(d.get("token_count", 0), "token_count"),
            wall_time_ms=_int(d.get("wall_time_ms", 0), "wall_time_ms"),
            correct=_bool_or_none(d.get("correct"), "correct"),
            limit_violation=_bool(d.get("limit_violation", False), "limit_violation"),
            error=_opt_str(d.get("error"), "error"),
        )


@dataclass(frozen=True)
class CandidateSummary:
    solution_id: str
    summary_text: str
    extracted_answer: str | None
    correct: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "solution_id": self.solution_id,
            "summary_text": self.summary_text,
            "extracted_answer": self.extracted_answer,
            "correct": self.correct,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CandidateSummary":
        return cls(
            solution_id=_field(d, "solution_id", str),
            summary_text=_field(d, "summary_text", str),
            extracted_answer=_opt_str(d.get("extracted_answer"), "extracted_answer"),
            correct=_bool(d.get("correct"), "correct"),
        )


MIN_GROUP_SIZE = 2
MAX_GROUP_SIZE = 16


@dataclass(frozen=True)
class SelectionRecord:
    """A comparison instance: candidate summaries and the chosen index.

    Training records must mix at least one correct and one incorrect
    candidate; pass ``require_mixed=False`` only for transient
    inference-time groups.
    """

    problem_id: str
    candidate_summaries: tuple[CandidateSummary, ...]
    chosen_index: int
    selection_reasoning: str | None = None
    selection_summary: str | None = None
    require_mixed: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidate_summaries", tuple(self.candidate_summaries))
        n = len(self.candidate_summaries)
        _require(
            MIN_GROUP_SIZE <= n <= MAX_GROUP_SIZE,
            "candidate_summaries",
            f"group size {n} outside [{MIN_GROUP_SIZE}, {MAX_GROUP_SIZE}]",
        )
        _require(0 <= self.chosen_index < n, "chosen_index", f"out of range for group of {n}")
        if self.require_mixed:
            flags = {c.correct for c in self.candidate_summaries}
            _require(
                flags == {True, False},
                "candidate_summaries",
                "training groups need at least one correct and one incorrect candidate",
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "problem_id": self.problem_id,
            "candidate_summaries": [c.to_dict() for c in self.candidate_summaries],
            "chosen_index": self.chosen_index,
            "selection_reasoning": self.selection_reasoning,
            "selection_summary": self.selection_summary,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SelectionRecord":
        cands = d.get("candidate_summaries")
        _require(isinstance(cands, list), "candidate_summaries", "must be a list")
        return cls(
            problem_id=_field(d, "problem_id", str),
            candidate_summaries=tuple(CandidateSummary.from_dict(c) for c in cands),
            chosen_index=_int(d.get("chosen_index"), "chosen_index"),
            selection_reasoning=_opt_str(d.get("selection_reasoning"), "selection_reasoning"),
            selection_summary=_opt_str(d.get("selection_summary"), "selection_summary"),
        )


# --- field coercion helpers -------------------------------------------------


def _field(d: dict[str, Any], name: str, typ: type) -> Any:
    if name not in d or d[name] is None:
        raise SchemaError(None, name, "required")
    value = d[name]
    if not isinstance(value, typ):
        raise SchemaError(None, name, f"expected {typ.__name__}, got {type(value).__name__}")
    return value


def _enum(value: Any, enum_cls: type[enum.Enum], name: str) -> Any:
    if value is None:
        raise SchemaError(None, name, "required")
    try:
        return enum_cls(value)
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)  # type: ignore[attr-defined]
        raise SchemaError(None, name, f"{value!r} not one of {{{allowed}}}") from None


def _enum_or_none(value: Any, enum_cls: type[enum.Enum], name: str) -> Any:
    return None if value is None else _enum(value, enum_cls, name)


def _number(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(None, name, "expected number")
    return float(value)


def _number_or_none(value: Any, name: str) -> float | None:
    return None if value is None else _number(value, name)


def _int(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(None, name, "expected integer")
    return value


def _int_or_none(value: Any, name: str) -> int | None:
    return None if value is None else _int(value, name)


def _bool(value: Any, name: str) -> bool:
    if not isinstance(value, bool):
        raise SchemaError(None, name, "expected boolean")
    return value


def _bool_or_none(value: Any, name: str) -> bool | None:
    return None if value is None else _bool(value, name)


def _str_list(value: Any, name: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaError(None, name, "expected list of strings")
    return value


# --- JSONL I/O ---------------------------------------------------------------

SCHEMAS: dict[str, tuple[Callable[[dict], Any], str | None]] = {
    "problem": (Problem.from_dict, "id"),
    "solution": (Solution.from_dict, None),
    "selection_record": (SelectionRecord.from_dict, None),
}


def read_jsonl(path: str | os.PathLike, schema: str) -> Iterator[Any]:
    """Yield records of the given schema from a JSONL file, in file order.

    Raises :class:`SchemaError` with the 1-based line number on the first
    malformed line, and :class:`IoError` if the file cannot be read.
    """
    if schema not in SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}; expected one of {sorted(SCHEMAS)}")
    parse, unique_field = SCHEMAS[schema]
    try:
        fh: TextIO = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}") from exc
    seen: set[str] = set()
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(lineno, "json", f"invalid JSON: {exc.msg}") from exc
            if not isinstance(raw, dict):
                raise SchemaError(lineno, "json", "each line must be a JSON object")
            if raw.get("schema_version") != SCHEMA_VERSION:
                raise SchemaError(lineno, "schema_version", f"must be {SCHEMA_VERSION}")
            try:
                record = parse(raw)
            except SchemaError as exc:
                raise SchemaError(lineno, exc.field, exc.detail) from exc
            if unique_field is not None:
                key = getattr(record, unique_field)
                if key in seen:
                    raise SchemaError(lineno, unique_field, f"duplicate value {key!r}")
                seen.add(key)
            yield record


def write_jsonl(records: Iterable[Any], path: str | os.PathLike) -> int:
    """Write records (objects with ``to_dict`` or plain dicts) as JSONL.

    Returns the number of records written. Output is byte-deterministic:
    compact separators, no key sorting (dicts are built in declared field
    order with ``schema_version`` first).
    """
    count = 0
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for record in records:
                d = record.to_dict() if hasattr(record, "to_dict") else record
                fh.write(json.dumps(d, ensure_ascii=False, separators=(",", ":")))
                fh.write("\n")
                count += 1
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return count
