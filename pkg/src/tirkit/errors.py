"""Exception hierarchy shared across the package."""

from __future__ import annotations


class TirkitError(Exception):
    """Base class for all package errors."""


class IoError(TirkitError):
    pass


class SchemaError(TirkitError):
    """A JSONL record failed validation.

    Carries the 1-based line number (when read from a file) and the
    offending field name.
    """

    def __init__(self, line: int | None, field: str, message: str = ""):
        self.line = line
        self.field = field
        self.detail = message or "invalid or missing value"
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}field '{field}': {self.detail}")


class ConfigError(TirkitError):
    """App configuration is invalid; message names the exact field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class BackendUnreachable(TirkitError):
    pass


class BackendError(TirkitError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"backend returned {status}: {body[:200]}")


class DeadlineExceeded(TirkitError):
    pass


class UnparseableVerdict(TirkitError):
    """A yes/no (or label) judgment could not be parsed from a completion."""

    def __init__(self, completion: str, pattern: str):
        self.completion = completion
        self.pattern = pattern
        super().__init__(f"no verdict matching {pattern!r} in completion {completion[:120]!r}")


class SandboxUnavailable(TirkitError):
    pass


class UnbalancedFences(TirkitError):
    """A markdown code fence was opened but never closed."""


class JudgeUnavailable(TirkitError):
    pass


class InsufficientGenerations(TirkitError):
    def __init__(self, problem_id: str, have: int, need: int):
        self.problem_id = problem_id
        self.have = have
        self.need = need
        super().__init__(f"problem {problem_id}: {have} generations, metric needs {need}")


class NoCorrect(TirkitError):
    pass


class NoIncorrect(TirkitError):
    pass


class PoolTooSmall(TirkitError):
    pass


class UnparseableSelection(TirkitError):
    def __init__(self, completion: str, group_size: int):
        self.completion = completion
        self.group_size = group_size
        super().__init__(
            f"no in-range candidate index found in selection completion (group of {group_size})"
        )


class AllSelectionsUnparseable(TirkitError):
    pass


class OverUse(TirkitError):
    """A question consumed more time than it was allocated: deadline enforcement failed."""

    def __init__(self, allocated_s: float, used_s: float):
        self.allocated_s = allocated_s
        self.used_s = used_s
        super().__init__(f"used {used_s}s against an allocation of {allocated_s}s")
