"""Answer extraction, normalization, and equivalence judging.

Tier 1 compares normalized strings, tier 2 compares exact rationals (with
a relative tolerance only when a decimal rendering is involved), tier 3
escalates to a yes/no LLM judgment with the problem statement in context.
Tiers 1-2 are pure and symmetric; only tier 3 touches a backend.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from fractions import Fraction

from .backends.base import CompletionBackend, judge_yes_no
from .errors import UnparseableVerdict
from .model import Problem, SamplingParams

# Relative tolerance used only when at least one side was written as a
# decimal; integers and explicit fractions are compared exactly.
NUMERIC_REL_TOLERANCE = Fraction(1, 10**9)


class JudgeMethod(str, enum.Enum):
    EXACT = "exact"
    NUMERIC = "numeric"
    LLM_JUDGE = "llm_judge"


@dataclass(frozen=True)
class Judgment:
    equivalent: bool
    method: JudgeMethod
    detail: str = ""


# --- boxed-answer extraction --------------------------------------------------

_BOXED_OPEN = "\\boxed{"


def extract_boxed(text: str) -> str | None:
    """Content of the last ``\\boxed{...}``, braces balanced, else None.

    Content is returned exactly as written (normalization is a judging-time
    concern). The scan never raises, whatever brace soup comes in.
    """
    start = text.rfind(_BOXED_OPEN)
    if start == -1:
        return None
    i = start + len(_BOXED_OPEN)
    depth = 1
    for j in range(i, len(text)):
        ch = text[j]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[i:j]
    return None


# --- normalization --------------------------------------------------------------

_LEFT_RIGHT_RE = re.compile(r"\\(?:left|right)(?![a-zA-Z])")
_WS_RE = re.compile(r"\s+")
_OPEN_SPACE_RE = re.compile(r"([(\[{])\s+")
_SPACE_CLOSE_RE = re.compile(r"\s+([)\]}])")
_WORD_RE = re.compile(r"(?<!\\)\b[A-Za-z]+\b")


def normalize_answer(raw: str) -> str:
    """Canonicalize an answer string; deterministic and idempotent.

    Trims, drops one outer ``$...$`` pair (only when the dollars wrap the
    whole string), removes ``\\left``/``\\right``, collapses whitespace,
    tightens spaces inside brackets, and lowercases standalone words while
    leaving LaTeX commands untouched.
    """
    s = raw.strip()
    if len(s) >= 2 and s[0] == "$" and s[-1] == "$" and "$" not in s[1:-1]:
        s = s[1:-1].strip()
    s = _LEFT_RIGHT_RE.sub("", s)
    s = _WS_RE.sub(" ", s).strip()
    s = _OPEN_SPACE_RE.sub(r"\1", s)
    s = _SPACE_CLOSE_RE.sub(r"\1", s)
    s = _WORD_RE.sub(lambda m: m.group(0).lower(), s)
    return s


# --- numeric parsing --------------------------------------------------------------

_INT_RE = re.compile(r"^[+-]?\d+$")
_INT_COMMAS_RE = re.compile(r"^[+-]?\d{1,3}(?:,\d{3})+$")
_DECIMAL_RE = re.compile(r"^[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?$")
_SLASH_FRAC_RE = re.compile(r"^([+-]?\d+)\s*/\s*(\d+)$")
_TEX_FRAC_RE = re.compile(r"^([+-])?\\[dt]?frac\{([+-]?\d+)\}\{(\d+)\}$")


def parse_numeric(s: str) -> tuple[Fraction, bool] | None:
    """Parse an answer as an exact rational.

    Returns (value, was_decimal) or None. ``was_decimal`` marks decimal or
    scientific renderings, which judge with a relative tolerance instead of
    exact equality.
    """
    s = s.strip()
    if _INT_COMMAS_RE.match(s):
        s = s.replace(",", "")
    if _INT_RE.match(s):
        return Fraction(int(s)), False
    m = _SLASH_FRAC_RE.match(s)
    if m and int(m.group(2)) != 0:
        return Fraction(int(m.group(1)), int(m.group(2))), False
    m = _TEX_FRAC_RE.match(s)
    if m and int(m.group(3)) != 0:
        sign = -1 if m.group(1) == "-" else 1
        return sign * Fraction(int(m.group(2)), int(m.group(3))), False
    if _DECIMAL_RE.match(s):
        try:
            return Fraction(Decimal(s)), True
        except (InvalidOperation, ValueError):
            return None
    return None


def _numeric_equal(a: Fraction, b: Fraction, any_decimal: bool) -> bool:
    if a == b:
        return True
    if not any_decimal:
        return False
    scale = max(abs(a), abs(b))
    return abs(a - b) <= NUMERIC_REL_TOLERANCE * scale


def equivalent_basic(predicted: str, expected: str) -> Judgment | None:
    """Tiers 1-2 only; returns None when undecidable without a judge."""
    np, ne = normalize_answer(predicted), normalize_answer(expected)
    if np == ne:
        return Judgment(True, JudgeMethod.EXACT, "normalized strings equal")
    a = parse_numeric(np)
    b = parse_numeric(ne)
    if a is not None and b is not None:
        equal = _numeric_equal(a[0], b[0], a[1] or b[1])
        return Judgment(equal, JudgeMethod.NUMERIC, f"{a[0]} vs {b[0]}")
    return None


def answers_match(predicted: str | None, expected: str | None) -> bool:
    """Symmetric string/numeric equivalence; False when undecidable.

    This is the default pairwise predicate for majority voting and metric
    computation when no LLM judge is wired in.
    """
    if predicted is None or expected is None:
        return False
    j = equivalent_basic(predicted, expected)
    return j.equivalent if j is not None else False


DEFAULT_JUDGE_PARAMS = SamplingParams(temperature=0.0, top_p=0.95, max_tokens=512)

_JUDGE_PROMPT = (
    "You are checking whether two final answers to a math problem agree.\n"
    "Problem:\n{problem}\n\n"
    "Reference answer: {expected}\n"
    "Candidate answer: {predicted}\n\n"
    "In the context of this problem, do the two answers represent the same "
    "result? Reply with Yes or No."
)


async def judge_equivalence(
    predicted: str,
    expected: str,
    problem: Problem | None = None,
    judge: CompletionBackend | None = None,
    judge_prompt_template: str | None = None,
) -> Judgment:
    """Full three-tier equivalence decision.

    Tier 3 runs only when tiers 1-2 are undecidable. With no judge
    configured the verdict is "not equivalent" with an explanatory detail
    rather than an exception, so batch pipelines keep moving.
    """
    if not predicted or not expected:
        raise ValueError("judge_equivalence requires two non-empty answers")
    basic = equivalent_basic(predicted, expected)
    if basic is not None:
        return basic
    if judge is None:
        return Judgment(
            False,
            JudgeMethod.LLM_JUDGE,
            "undecidable by string/numeric rules and no judge backend configured",
        )
    template = judge_prompt_template or _JUDGE_PROMPT
    prompt = template.format(
        problem=problem.statement if problem is not None else "(not provided)",
        expected=expected,
        predicted=predicted,
    )
    try:
        verdict = await judge_yes_no(judge, prompt, DEFAULT_JUDGE_PARAMS)
    except UnparseableVerdict as exc:
        return Judgment(False, JudgeMethod.LLM_JUDGE, f"unparseable judge verdict: {exc}")
    return Judgment(verdict, JudgeMethod.LLM_JUDGE, "llm judge verdict")
