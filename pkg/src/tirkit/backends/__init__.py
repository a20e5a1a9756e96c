from .base import (
    CompletionBackend,
    CompletionChunk,
    CompletionRequest,
    CompletionResult,
    CompletionStream,
    FinishKind,
    FinishReason,
    StopScanner,
    collect,
    judge_yes_no,
    parse_yes_no,
)
from .http import HttpBackend
from .scripted import PromptMatcher, ScriptedBackend, ScriptedBehavior, Segment, load_scenario

__all__ = [
    "CompletionBackend",
    "CompletionChunk",
    "CompletionRequest",
    "CompletionResult",
    "CompletionStream",
    "FinishKind",
    "FinishReason",
    "HttpBackend",
    "PromptMatcher",
    "ScriptedBackend",
    "ScriptedBehavior",
    "Segment",
    "StopScanner",
    "collect",
    "judge_yes_no",
    "load_scenario",
    "parse_yes_no",
]
