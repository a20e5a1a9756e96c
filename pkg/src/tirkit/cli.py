"""Command-line entry point: solve / evaluate / curate / genselect / compete.

Data goes to stdout or files; logs are JSON lines on stderr. With a
scripted backend, commands run on the virtual-time loop by default, which
makes repeated seeded runs byte-identical (timing fields included);
``--real-clock`` opts out.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from fractions import Fraction
from pathlib import Path

from .backends.base import CompletionBackend
from .config import AppConfig, load_config, make_backend, make_sandbox
from .curation import (
    EXTRACTION_STAGE,
    RawPost,
    StageCheckpoint,
    classification_stages,
    decontaminate,
    label_solutions,
    run_stage,
)
from .engine import TirEngine, run_cot
from .errors import (
    AllSelectionsUnparseable,
    BackendError,
    BackendUnreachable,
    ConfigError,
    NoCorrect,
    NoIncorrect,
    PoolTooSmall,
    SchemaError,
    TirkitError,
)
from .genselect import build_training_records, filter_training_records, genselect_inference, regenerate_summary
from .judging import answers_match
from .metrics import GenerationJudgment, ProblemResult, maj_at_k, pass_at_1_avg, pass_at_k, unfinished_rate
from .model import Problem, Solution, SolutionMode, read_jsonl, write_jsonl
from .prompts import PromptLibrary
from .runtime import run_real, run_virtual
from .scheduler import run_competition

logger = logging.getLogger("tirkit")


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "ts": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        if record.exc_info:
            entry["exc"] = self.formatException(record.exc_info)
        return json.dumps(entry, ensure_ascii=False)


def setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger()
    root.handlers = [handler]
    root.setLevel(getattr(logging, level.upper(), logging.INFO))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tirkit",
        description="Tool-integrated reasoning orchestration toolkit",
    )
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--template-dir", help="prompt template override directory")
    parser.add_argument("--log-level", default="info")
    clock = parser.add_mutually_exclusive_group()
    clock.add_argument(
        "--virtual-clock", action="store_true", help="force the simulated clock"
    )
    clock.add_argument(
        "--real-clock", action="store_true", help="force wall time even for scripted backends"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="generate solutions for problems")
    solve.add_argument("--problems", required=True)
    solve.add_argument("--mode", choices=["cot", "tir"], default="cot")
    solve.add_argument("--n", type=int, default=1, help="generations per problem")
    solve.add_argument(
        "--code-limit",
        type=int,
        default=None,
        help="TIR execution limit; 0 draws uniformly from 1..8 per problem",
    )
    solve.add_argument("--output-cap", type=int, default=None, help="execution output char cap")
    solve.add_argument("--exec-timeout-ms", type=int, default=None)
    solve.add_argument("--out", required=True)

    evaluate = sub.add_parser("evaluate", help="compute metrics from solutions")
    evaluate.add_argument("--solutions", required=True)
    evaluate.add_argument("--problems", required=True)
    evaluate.add_argument("--k", type=int, default=8)
    evaluate.add_argument("--n", type=int, default=None, help="pass@1 window (default: k)")
    evaluate.add_argument("--out", help="report file (default: stdout)")

    curate = sub.add_parser("curate", help="run the problem-curation pipeline")
    curate.add_argument(
        "--stages",
        default="extraction,classify,transform,answers,decontam",
        help="comma-separated subset of: extraction,classify,transform,answers,decontam",
    )
    curate.add_argument("--in", dest="input", required=True)
    curate.add_argument("--out", required=True, help="output directory")
    curate.add_argument("--benchmark", help="benchmark problems JSONL (for decontam)")

    gdata = sub.add_parser("genselect-data", help="build selection training records")
    gdata.add_argument("--problems", required=True)
    gdata.add_argument("--solutions", required=True)
    gdata.add_argument("--out", required=True, help="selection records JSONL")
    gdata.add_argument("--stats", help="drop-stats JSON file")

    ginfer = sub.add_parser("genselect-infer", help="select final answers from pools")
    ginfer.add_argument("--problems", required=True)
    ginfer.add_argument("--solutions", required=True)
    ginfer.add_argument("--out", required=True, help="answers JSONL")

    compete = sub.add_parser("compete", help="run the time-budgeted competition loop")
    compete.add_argument("--problems", required=True)
    compete.add_argument("--mode", choices=["cot", "tir"], default="tir")
    compete.add_argument("--out", required=True, help="answers JSONL")
    compete.add_argument("--audit", help="ledger audit JSON file")
    compete.add_argument("--base-s", type=float, default=None)
    compete.add_argument("--draw-cap-s", type=float, default=None)
    compete.add_argument("--batch-size", type=int, default=None)
    compete.add_argument("--agreement-threshold", type=int, default=None)
    compete.add_argument("--straggler-cancel", type=int, default=None)

    return parser


def run_loop(config: AppConfig, args, coro):
    virtual = args.virtual_clock or (config.backend.kind == "scripted" and not args.real_clock)
    return run_virtual(coro) if virtual else run_real(coro)


def load_problems(path: str) -> list[Problem]:
    return list(read_jsonl(path, "problem"))


def load_solutions(path: str) -> list[Solution]:
    return list(read_jsonl(path, "solution"))


def answer_record(problem_id: str, answer: str | None) -> dict:
    return {"schema_version": 1, "problem_id": problem_id, "answer": answer}


def fraction_fields(value: Fraction) -> dict:
    return {"exact": f"{value.numerator}/{value.denominator}", "value": float(value)}


# --- solve -------------------------------------------------------------------------


def tir_config_with_overrides(config: AppConfig, args):
    overrides = {}
    if getattr(args, "output_cap", None) is not None:
        overrides["output_char_cap"] = args.output_cap
    if getattr(args, "exec_timeout_ms", None) is not None:
        overrides["exec_timeout_ms"] = args.exec_timeout_ms
    if not overrides:
        return config.tir
    return type(config.tir)(**{**config.tir.__dict__, **overrides})


def cmd_solve(config: AppConfig, args) -> int:
    problems = load_problems(args.problems)
    backend = make_backend(config)
    sandbox = make_sandbox(config)
    templates = PromptLibrary(config.paths.template_dir)
    tir_config = tir_config_with_overrides(config, args)
    rng = random.Random(config.seed)
    limits = {}
    for problem in problems:
        if args.mode == "tir":
            if args.code_limit == 0:
                limits[problem.id] = rng.randint(1, 8)
            elif args.code_limit is not None:
                limits[problem.id] = args.code_limit
            else:
                limits[problem.id] = tir_config.max_code_executions

    async def run_all() -> list[Solution]:
        engine = TirEngine(
            backend, sandbox, tir_config, prompt_template=templates.get("tir")
        )
        out: list[Solution] = []
        failures = 0
        for problem in problems:
            for _ in range(args.n):
                try:
                    if args.mode == "tir":
                        solution = await engine.run(problem, code_limit=limits[problem.id])
                    else:
                        solution = await run_cot(
                            problem,
                            backend,
                            config.params_for("cot"),
                            prompt_template=templates.get("cot"),
                        )
                except (BackendError, BackendUnreachable) as exc:
                    if config.backend.kind == "http" and isinstance(exc, BackendUnreachable):
                        raise
                    failures += 1
                    logger.error("generation failed for %s: %s", problem.id, exc)
                    solution = Solution(
                        problem_id=problem.id,
                        mode=SolutionMode.TIR if args.mode == "tir" else SolutionMode.COT,
                        reasoning_text="",
                        error=str(exc),
                    )
                out.append(solution)
        unfinished = sum(1 for s in out if not s.finished)
        logger.info(
            "solve: %d problems x %d generations -> %d solutions "
            "(%d unfinished, %d failed)",
            len(problems),
            args.n,
            len(out),
            unfinished,
            failures,
        )
        return out

    solutions = run_loop(config, args, run_all())
    count = write_jsonl(solutions, args.out)
    logger.info("wrote %d solutions to %s", count, args.out)
    return 0


# --- evaluate -----------------------------------------------------------------------


def build_problem_results(
    solutions: list[Solution], problems: list[Problem]
) -> tuple[list[ProblemResult], list[dict]]:
    by_problem: dict[str, Problem] = {p.id: p for p in problems}
    grouped: dict[str, list[Solution]] = {}
    order: list[str] = []
    for s in solutions:
        if s.problem_id not in grouped:
            order.append(s.problem_id)
        grouped.setdefault(s.problem_id, []).append(s)
    results: list[ProblemResult] = []
    errors: list[dict] = []
    for pid in order:
        problem = by_problem.get(pid)
        if problem is None:
            errors.append({"problem_id": pid, "error": "unknown problem"})
            continue
        if problem.expected_answer is None:
            errors.append({"problem_id": pid, "error": "no expected answer to judge against"})
            continue
        judgments = []
        for s in grouped[pid]:
            if s.correct is not None:
                correct = s.correct
            else:
                correct = s.finished and answers_match(s.extracted_answer, problem.expected_answer)
            judgments.append(
                GenerationJudgment(answer=s.extracted_answer, correct=correct, finished=s.finished)
            )
        results.append(ProblemResult(problem_id=pid, judgments=tuple(judgments)))
    return results, errors


def evaluate_report(
    results: list[ProblemResult],
    problems: list[Problem],
    k: int,
    n: int,
    errors: list[dict],
) -> dict:
    category_of = {p.id: p.category.value for p in problems}
    eligible = [r for r in results if len(r.judgments) >= k and len(r.judgments) >= n]
    for r in results:
        if r not in eligible:
            errors.append(
                {
                    "problem_id": r.problem_id,
                    "error": f"needs {max(k, n)} generations, has {len(r.judgments)}",
                }
            )

    def row(name: str, subset: list[ProblemResult]) -> dict:
        if not subset:
            return {"benchmark": name, "problems": 0}
        return {
            "benchmark": name,
            "problems": len(subset),
            "pass_at_1": fraction_fields(pass_at_1_avg(subset, n)),
            "maj_at_k": fraction_fields(maj_at_k(subset, k)),
            "pass_at_k": fraction_fields(pass_at_k(subset, k)),
            "unfinished_pct": fraction_fields(unfinished_rate(subset) * 100),
        }

    rows = [row("all", eligible)]
    categories = sorted({category_of.get(r.problem_id, "unknown") for r in eligible})
    for category in categories:
        subset = [r for r in eligible if category_of.get(r.problem_id) == category]
        if subset and len(categories) > 1:
            rows.append(row(category, subset))
    return {"k": k, "n": n, "rows": rows, "errors": errors}


def cmd_evaluate(config: AppConfig, args) -> int:
    solutions = load_solutions(args.solutions)
    problems = load_problems(args.problems)
    n = args.n if args.n is not None else args.k
    if not solutions:
        report = {"k": args.k, "n": n, "rows": [], "errors": []}
    else:
        results, errors = build_problem_results(solutions, problems)
        report = evaluate_report(results, problems, args.k, n, errors)
    text = json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        logger.info("wrote metrics report to %s", args.out)
    else:
        sys.stdout.write(text)
    return 0


# --- curate --------------------------------------------------------------------------

KNOWN_STAGES = ("extraction", "classify", "transform", "answers", "decontam")


def cmd_curate(config: AppConfig, args) -> int:
    stage_names = [s.strip() for s in args.stages.split(",") if s.strip()]
    for name in stage_names:
        if name not in KNOWN_STAGES:
            raise ConfigError("stages", f"unknown stage {name!r}; expected among {KNOWN_STAGES}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    backend = make_backend(config)
    templates = PromptLibrary(config.paths.template_dir)
    annotations: dict[str, dict[str, str]] = {}
    counts: list[dict] = []

    def write_review(name: str, review: list) -> None:
        if review:
            path = out_dir / f"review_{name}.jsonl"
            write_jsonl(
                [
                    {"schema_version": 1, "record": r.to_dict(), "reason": reason}
                    for r, reason in review
                ],
                path,
            )

    async def run_pipeline() -> list[Problem]:
        if "extraction" in stage_names:
            posts = []
            for lineno, line in enumerate(
                Path(args.input).read_text(encoding="utf-8").splitlines(), start=1
            ):
                if line.strip():
                    try:
                        posts.append(RawPost.from_dict(json.loads(line)))
                    except json.JSONDecodeError as exc:
                        raise SchemaError(lineno, "json", exc.msg) from exc
            checkpoint = StageCheckpoint(out_dir / "extract_problems.ckpt.jsonl")
            result = await run_stage(
                posts, EXTRACTION_STAGE, backend, templates, annotations,
                checkpoint=checkpoint, concurrency=config.concurrency,
            )
            counts.append(result.report.to_dict())
            write_review("extract_problems", result.review)
            records = result.passed
        else:
            records = load_problems(args.input)

        wanted = {
            "classify": {"classify_mcq", "classify_binary", "classify_invalid", "classify_proof"},
            "transform": {"convert_proofs"},
            "answers": {"extract_answers"},
        }
        active: set[str] = set()
        for name in stage_names:
            active |= wanted.get(name, set())
        for stage in classification_stages():
            if stage.name not in active:
                continue
            checkpoint = StageCheckpoint(out_dir / f"{stage.name}.ckpt.jsonl")
            result = await run_stage(
                records, stage, backend, templates, annotations,
                checkpoint=checkpoint, concurrency=config.concurrency,
            )
            counts.append(result.report.to_dict())
            write_review(stage.name, result.review)
            records = result.passed

        if "decontam" in stage_names:
            if not args.benchmark:
                raise ConfigError("benchmark", "required when the decontam stage is active")
            benchmark = load_problems(args.benchmark)
            retained, removed = await decontaminate(records, benchmark, backend, templates)
            counts.append(
                {
                    "stage": "decontam",
                    "input": len(records),
                    "passed": len(retained),
                    "dropped": len(removed),
                    "review": 0,
                }
            )
            if removed:
                write_jsonl(
                    [{"schema_version": 1, **entry.to_dict()} for entry in removed],
                    out_dir / "decontam_removed.jsonl",
                )
            records = retained
        return records

    records = run_loop(config, args, run_pipeline())
    write_jsonl(records, out_dir / "problems.jsonl")
    (out_dir / "stage_counts.json").write_text(
        json.dumps(counts, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    logger.info("curate: %d records out, %d stages", len(records), len(counts))
    return 0


# --- genselect ------------------------------------------------------------------------


def group_solutions(solutions: list[Solution]) -> tuple[list[str], dict[str, list[Solution]]]:
    grouped: dict[str, list[Solution]] = {}
    order: list[str] = []
    for s in solutions:
        if s.problem_id not in grouped:
            order.append(s.problem_id)
        grouped.setdefault(s.problem_id, []).append(s)
    return order, grouped


async def ensure_summaries(
    pool: list[Solution],
    problem: Problem,
    backend: CompletionBackend,
    config: AppConfig,
    templates: PromptLibrary,
) -> list[Solution]:
    out = []
    for s in pool:
        if s.summary_text is None and s.finished:
            summary = await regenerate_summary(
                s, backend, config.genselect, problem,
                prompt_template=templates.get("summarize_solution"),
            )
            if summary is None:
                continue  # no faithful summary: drop this sample
            s = Solution(**{**s.__dict__, "summary_text": summary})
        out.append(s)
    return out


def cmd_genselect_data(config: AppConfig, args) -> int:
    problems = {p.id: p for p in load_problems(args.problems)}
    solutions = load_solutions(args.solutions)
    backend = make_backend(config)
    templates = PromptLibrary(config.paths.template_dir)
    order, grouped = group_solutions(solutions)

    async def run_all():
        records = []
        skipped: dict[str, str] = {}
        for pid in order:
            problem = problems.get(pid)
            if problem is None:
                skipped[pid] = "unknown problem"
                continue
            pool = [s for s in grouped[pid] if s.finished]
            pool = await ensure_summaries(pool, problem, backend, config, templates)
            pool = label_solutions(problem, pool)
            try:
                recs, _stats = await build_training_records(
                    problem, pool, backend, config.genselect,
                    prompt_template=templates.get("genselect"),
                )
            except (NoCorrect, NoIncorrect, PoolTooSmall) as exc:
                skipped[pid] = type(exc).__name__
                continue
            records.extend(recs)
        return records, skipped

    records, skipped = run_loop(config, args, run_all())
    retained = filter_training_records(records)
    write_jsonl(retained, args.out)
    ratio = Fraction(len(retained), len(records)) if records else Fraction(0)
    stats = {
        "selections_total": len(records),
        "retained": len(retained),
        "retained_ratio": fraction_fields(ratio),
        "skipped_problems": skipped,
    }
    text = json.dumps(stats, indent=2, sort_keys=True) + "\n"
    if args.stats:
        Path(args.stats).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    logger.info(
        "genselect-data: %d/%d records retained", len(retained), len(records)
    )
    return 0


def cmd_genselect_infer(config: AppConfig, args) -> int:
    problems = {p.id: p for p in load_problems(args.problems)}
    solutions = load_solutions(args.solutions)
    backend = make_backend(config)
    templates = PromptLibrary(config.paths.template_dir)
    order, grouped = group_solutions(solutions)

    async def run_all():
        answers = []
        for pid in order:
            pool = [s for s in grouped[pid] if s.finished]
            if not pool:
                answers.append(answer_record(pid, None))
                continue
            try:
                answer = await genselect_inference(
                    pool, config.genselect, backend,
                    problem=problems.get(pid),
                    prompt_template=templates.get("genselect"),
                )
            except AllSelectionsUnparseable as exc:
                logger.error("selection failed for %s: %s", pid, exc)
                answer = None
            answers.append(answer_record(pid, answer))
        return answers

    answers = run_loop(config, args, run_all())
    write_jsonl(answers, args.out)
    logger.info("genselect-infer: %d answers to %s", len(answers), args.out)
    return 0


# --- compete ----------------------------------------------------------------------------


def cmd_compete(config: AppConfig, args) -> int:
    problems = load_problems(args.problems)
    backend = make_backend(config)
    sandbox = make_sandbox(config)
    templates = PromptLibrary(config.paths.template_dir)
    ledger = config.ledger
    policy = config.policy
    if args.base_s is not None:
        ledger = type(ledger)(**{**ledger.__dict__, "base_per_question_s": args.base_s})
    if args.draw_cap_s is not None:
        ledger = type(ledger)(**{**ledger.__dict__, "extra_draw_cap_s": args.draw_cap_s})
    overrides = {}
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.agreement_threshold is not None:
        overrides["agreement_threshold"] = args.agreement_threshold
    if args.straggler_cancel is not None:
        overrides["straggler_cancel_count"] = args.straggler_cancel
    if overrides:
        policy = type(policy)(**{**policy.__dict__, **overrides})

    engine = TirEngine(backend, sandbox, config.tir, prompt_template=templates.get("tir"))

    def solve_factory(problem: Problem):
        async def run_generation(index: int, token):
            if args.mode == "cot":
                return await run_cot(
                    problem, backend, config.params_for("cot"),
                    prompt_template=templates.get("cot"), cancel_token=token,
                )
            return await engine.run(problem, cancel_token=token)

        return run_generation

    result = run_loop(
        config, args, run_competition(problems, ledger, policy, solve_factory)
    )
    write_jsonl([answer_record(pid, ans) for pid, ans in result.answers], args.out)
    audit = {
        "rows": [row.to_dict() for row in result.audit],
        "final_buffer_s": result.ledger.buffer_s,
        "total_used_s": result.ledger.used_total_s,
        "total_budget_s": result.ledger.total_budget_s,
    }
    text = json.dumps(audit, indent=2, sort_keys=True) + "\n"
    if args.audit:
        Path(args.audit).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    logger.info(
        "compete: %d questions, %.1fs used of %.1fs",
        len(problems),
        result.ledger.used_total_s,
        result.ledger.total_budget_s,
    )
    return 0


# --- main -------------------------------------------------------------------------------

COMMANDS = {
    "solve": cmd_solve,
    "evaluate": cmd_evaluate,
    "curate": cmd_curate,
    "genselect-data": cmd_genselect_data,
    "genselect-infer": cmd_genselect_infer,
    "compete": cmd_compete,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.template_dir is not None:
        overrides["paths.template_dir"] = args.template_dir
    try:
        config = load_config(args.config, overrides)
        return COMMANDS[args.command](config, args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return 2
    except (SchemaError, BackendUnreachable) as exc:
        logger.error("%s", exc)
        return 1
    except TirkitError as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
