"""Application configuration: one YAML file, field-precise validation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any

import yaml

from .backends.http import API_KEY_ENV
from .engine import TirConfig
from .errors import ConfigError, SchemaError
from .genselect import GenSelectConfig
from .model import SamplingParams
from .scheduler import BatchPolicy, TimeLedger

MODES = ("cot", "tir", "genselect")

DEFAULT_MODE_PARAMS = {
    "cot": SamplingParams(temperature=0.7, top_p=0.95, max_tokens=16_384),
    "tir": SamplingParams(temperature=0.7, top_p=0.95, max_tokens=16_384),
    "genselect": SamplingParams(temperature=0.6, top_p=0.95, max_tokens=2048),
}


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "scripted"
    scenario_file: str | None = None
    base_url: str | None = None
    api_key_env: str = API_KEY_ENV
    model: str = "default"


@dataclass(frozen=True)
class SandboxConfig:
    kind: str = "scripted"
    scenario_file: str | None = None
    base_url: str | None = None
    timeout_ms: int = 2000


@dataclass(frozen=True)
class PathsConfig:
    template_dir: str | None = None
    out_dir: str = "out"


@dataclass(frozen=True)
class AppConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    sandbox: SandboxConfig = field(default_factory=SandboxConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    modes: dict = field(default_factory=lambda: dict(DEFAULT_MODE_PARAMS))
    tir: TirConfig = field(default_factory=TirConfig)
    genselect: GenSelectConfig = field(default_factory=GenSelectConfig)
    ledger: TimeLedger = field(default_factory=TimeLedger)
    policy: BatchPolicy = field(default_factory=BatchPolicy)
    seed: int = 0
    concurrency: int = 8

    def params_for(self, mode: str) -> SamplingParams:
        return self.modes[mode]


def _expect_mapping(value: Any, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _pick(d: dict, path: str, allowed: set[str]) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown key")


def load_config(path: str | None = None, overrides: dict | None = None) -> AppConfig:
    """Load and validate configuration; missing file fields use defaults.

    ``overrides`` is a flat mapping applied after the file (CLI flags).
    """
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    raw = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            section, _, leaf = key.partition(".")
            if leaf:
                raw.setdefault(section, {})
                if not isinstance(raw[section], dict):
                    raise ConfigError(section, "expected a mapping")
                raw[section][leaf] = value
            else:
                raw[key] = value

    _pick(
        raw,
        "config",
        {
            "backend",
            "sandbox",
            "paths",
            "modes",
            "tir",
            "genselect",
            "scheduler",
            "seed",
            "concurrency",
        },
    )

    b = _expect_mapping(raw.get("backend"), "backend")
    _pick(b, "backend", {"kind", "scenario_file", "base_url", "api_key_env", "model"})
    backend = BackendConfig(
        kind=str(b.get("kind", "scripted")),
        scenario_file=b.get("scenario_file"),
        base_url=b.get("base_url"),
        api_key_env=str(b.get("api_key_env", API_KEY_ENV)),
        model=str(b.get("model", "default")),
    )
    if backend.kind not in ("scripted", "http"):
        raise ConfigError("backend.kind", f"{backend.kind!r} is not 'scripted' or 'http'")
    if b:  # backend explicitly configured: enforce its invariants eagerly
        _check_backend(backend)

    s = _expect_mapping(raw.get("sandbox"), "sandbox")
    _pick(s, "sandbox", {"kind", "scenario_file", "base_url", "timeout_ms"})
    sandbox = SandboxConfig(
        kind=str(s.get("kind", "scripted")),
        scenario_file=s.get("scenario_file"),
        base_url=s.get("base_url"),
        timeout_ms=int(s.get("timeout_ms", 2000)),
    )
    if sandbox.kind not in ("scripted", "http"):
        raise ConfigError("sandbox.kind", f"{sandbox.kind!r} is not 'scripted' or 'http'")
    if sandbox.kind == "http" and not sandbox.base_url:
        raise ConfigError("sandbox.base_url", "required when sandbox.kind is 'http'")
    if sandbox.timeout_ms < 1:
        raise ConfigError("sandbox.timeout_ms", "must be >= 1")

    p = _expect_mapping(raw.get("paths"), "paths")
    _pick(p, "paths", {"template_dir", "out_dir"})
    paths = PathsConfig(
        template_dir=p.get("template_dir"), out_dir=str(p.get("out_dir", "out"))
    )

    modes = dict(DEFAULT_MODE_PARAMS)
    m = _expect_mapping(raw.get("modes"), "modes")
    for mode, params in m.items():
        if mode not in MODES:
            raise ConfigError(f"modes.{mode}", f"unknown mode; expected one of {MODES}")
        params = _expect_mapping(params, f"modes.{mode}")
        base = DEFAULT_MODE_PARAMS[mode]
        try:
            modes[mode] = SamplingParams(
                temperature=float(params.get("temperature", base.temperature)),
                top_p=float(params.get("top_p", base.top_p)),
                max_tokens=int(params.get("max_tokens", base.max_tokens)),
                stop_sequences=tuple(params.get("stop_sequences", base.stop_sequences)),
                seed=params.get("seed", base.seed),
            )
        except SchemaError as exc:
            raise ConfigError(f"modes.{mode}.{exc.field}", exc.detail) from exc

    t = _expect_mapping(raw.get("tir"), "tir")
    _pick(
        t,
        "tir",
        {"code_begin_tag", "code_end_tag", "max_code_executions", "output_char_cap", "exec_timeout_ms"},
    )
    try:
        tir = TirConfig(
            code_begin_tag=str(t.get("code_begin_tag", "<tool_call>")),
            code_end_tag=str(t.get("code_end_tag", "</tool_call>")),
            max_code_executions=int(t.get("max_code_executions", 6)),
            output_char_cap=int(t.get("output_char_cap", 200)),
            exec_timeout_ms=int(t.get("exec_timeout_ms", sandbox.timeout_ms)),
            params=modes["tir"],
        )
    except ValueError as exc:
        raise ConfigError("tir", str(exc)) from exc

    g = _expect_mapping(raw.get("genselect"), "genselect")
    _pick(
        g,
        "genselect",
        {
            "min_group",
            "max_group",
            "groups_per_problem",
            "summary_max_tokens",
            "summary_candidates",
            "inference_subset_size",
            "inference_repeats",
        },
    )
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed", "must be an integer")
    try:
        genselect = GenSelectConfig(
            min_group=int(g.get("min_group", 2)),
            max_group=int(g.get("max_group", 16)),
            groups_per_problem=int(g.get("groups_per_problem", 8)),
            summary_max_tokens=int(g.get("summary_max_tokens", 2048)),
            summary_candidates=int(g.get("summary_candidates", 4)),
            inference_subset_size=int(g.get("inference_subset_size", 16)),
            inference_repeats=int(g.get("inference_repeats", 8)),
            rng_seed=seed,
        )
    except ValueError as exc:
        raise ConfigError("genselect", str(exc)) from exc

    sched = _expect_mapping(raw.get("scheduler"), "scheduler")
    _pick(
        sched,
        "scheduler",
        {
            "base_s",
            "draw_cap_s",
            "total_budget_s",
            "batch_size",
            "agreement_threshold",
            "straggler_cancel",
        },
    )
    ledger = TimeLedger(
        base_per_question_s=float(sched.get("base_s", 350)),
        extra_draw_cap_s=float(sched.get("draw_cap_s", 210)),
        total_budget_s=float(sched.get("total_budget_s", 18_000)),
    )
    try:
        policy = BatchPolicy(
            batch_size=int(sched.get("batch_size", 16)),
            agreement_threshold=int(sched.get("agreement_threshold", 4)),
            straggler_cancel_count=int(sched.get("straggler_cancel", 0)),
        )
    except ValueError as exc:
        raise ConfigError("scheduler", str(exc)) from exc

    concurrency = raw.get("concurrency", 8)
    if not isinstance(concurrency, int) or concurrency < 1:
        raise ConfigError("concurrency", "must be a positive integer")

    return AppConfig(
        backend=backend,
        sandbox=sandbox,
        paths=paths,
        modes=modes,
        tir=tir,
        genselect=genselect,
        ledger=ledger,
        policy=policy,
        seed=seed,
        concurrency=concurrency,
    )


def _check_backend(backend: BackendConfig) -> None:
    if backend.kind == "scripted":
        if not backend.scenario_file:
            raise ConfigError("backend.scenario_file", "required when backend.kind is 'scripted'")
        if not os.path.exists(backend.scenario_file):
            raise ConfigError("backend.scenario_file", f"{backend.scenario_file}: no such file")
    if backend.kind == "http" and not backend.base_url:
        raise ConfigError("backend.base_url", "required when backend.kind is 'http'")


def make_backend(config: AppConfig):
    _check_backend(config.backend)
    if config.backend.kind == "scripted":
        from .backends.scripted import ScriptedBackend

        return ScriptedBackend.from_file(config.backend.scenario_file, seed=config.seed)
    from .backends.http import HttpBackend

    return HttpBackend(
        base_url=config.backend.base_url,
        api_key_env=config.backend.api_key_env,
        model=config.backend.model,
    )


def make_sandbox(config: AppConfig):
    if config.sandbox.kind == "scripted":
        from .sandbox import MockSandbox, load_exec_rules

        rules = (
            load_exec_rules(config.sandbox.scenario_file)
            if config.sandbox.scenario_file
            else []
        )
        return MockSandbox(rules=rules)
    from .sandbox import HttpSandboxClient

    return HttpSandboxClient(config.sandbox.base_url)
