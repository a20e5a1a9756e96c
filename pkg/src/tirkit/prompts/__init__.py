"""Prompt template loading.

Templates are plain text files with ``str.format`` placeholders, shipped
as package data and overridable via a template directory (CLI
``--template-dir`` / config ``paths.template_dir``).
"""

from __future__ import annotations

import importlib.resources
from pathlib import Path

TEMPLATE_NAMES = (
    "cot",
    "tir",
    "genselect",
    "summarize_solution",
    "summarize_comparison",
    "judge_equivalence",
    "classify_proof",
    "classify_mcq",
    "classify_binary",
    "classify_valid",
    "convert_proof",
    "extract_problems",
    "extract_answer",
    "decontam_same_problem",
    "tir_novelty",
    "tir_significance",
)


class PromptLibrary:
    def __init__(self, template_dir: str | Path | None = None):
        self._dir = Path(template_dir) if template_dir else None
        self._cache: dict[str, str] = {}

    def get(self, name: str) -> str:
        if name not in TEMPLATE_NAMES:
            raise KeyError(f"unknown template {name!r}; expected one of {TEMPLATE_NAMES}")
        if name not in self._cache:
            if self._dir is not None and (self._dir / f"{name}.txt").exists():
                text = (self._dir / f"{name}.txt").read_text(encoding="utf-8")
            else:
                text = (
                    importlib.resources.files(__package__)
                    .joinpath(f"{name}.txt")
                    .read_text(encoding="utf-8")
                )
            self._cache[name] = text.rstrip("\n") + "\n"
        return self._cache[name]


_default = PromptLibrary()


def default_template(name: str) -> str:
    return _default.get(name)
