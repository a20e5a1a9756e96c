"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL
line (run with ``pytest tests/test_acceptance.py -s`` to see them inline).

Everything here runs against the scripted mock backend and the in-process
sandbox mock; no HTTP service is required.
"""

from __future__ import annotations

import itertools
import json
import random
import re
import time
from contextlib import contextmanager
from fractions import Fraction

from tirkit.backends import Segment
from tirkit.engine import SessionRegistry, TirConfig, TirEngine
from tirkit.genselect import GenSelectConfig, filter_training_records, sample_training_groups
from tirkit.metrics import maj_at_k, pass_at_1_avg, pass_at_k
from tirkit.model import CandidateSummary, SamplingParams, SelectionRecord
from tirkit.runtime import run_virtual
from tirkit.sandbox import ExecRule, MockSandbox
from tirkit.scheduler import BatchPolicy, TimeLedger, run_competition, solve_question

from .conftest import make_problem
from .e2e_fixtures import HAND_COMPUTED, write_e2e_fixture
from .test_backends import behavior, scripted
from .test_engine import BEGIN, END
from .test_genselect import make_pool
from .test_metrics import brute_maj_at_k, make_fixture
from .test_scheduler import dispatch, gen


@contextmanager
def criterion(name: str, budget_s: float | None = None):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    elapsed = time.perf_counter() - t0
    if budget_s is not None and elapsed > budget_s:
        print(f"[FAIL] {name}: runtime {elapsed:.2f}s exceeds {budget_s}s budget")
        raise AssertionError(f"{name}: runtime budget exceeded ({elapsed:.2f}s > {budget_s}s)")
    print(f"[PASS] {name} ({elapsed:.2f}s)")


WARNING_RE = re.compile(r"\[Code executions remaining: (\d+)")

# body of each rendered execution-output section (fuzz alphabet cannot forge
# the section delimiters, so non-greedy matching is exact here)
OUTPUT_SECTION_RE = re.compile(
    r"<tool_output>\n(.*?)\n(?:\[Output truncated\]\n)?\[Code executions remaining",
    re.DOTALL,
)

MULTIBYTE_ALPHABET = "ab01 \n☃π∞語数學🙂é"


def test_criterion_tir_safeguards():
    """500 randomized scripted TIR generations: limit safety, exact 200-char
    truncation (multi-byte included), strictly decreasing warnings."""
    rng = random.Random(20240)

    async def one_generation(case_index: int):
        attempted = rng.randint(0, 12)
        limit = rng.randint(1, 8)
        stdout = "".join(rng.choices(MULTIBYTE_ALPHABET, k=rng.randint(0, 600)))
        variants = [
            [Segment(f"step {i} {BEGIN}\nwork({i})\n{END} tail", 0)] for i in range(attempted)
        ]
        variants.append([Segment("conclusion \\boxed{0}", 0)])
        backend = scripted(behavior(None, variants=variants))
        sandbox = MockSandbox(rules=[ExecRule(pattern=".", stdout=stdout)])
        engine = TirEngine(
            backend,
            sandbox,
            TirConfig(max_code_executions=limit, params=SamplingParams(max_tokens=10**6)),
        )
        solution = await engine.run(make_problem(pid=f"fuzz{case_index}", answer="0"))
        return attempted, limit, stdout, solution, sandbox

    async def batch():
        return [await one_generation(i) for i in range(500)]

    with criterion("TIR safeguards suite (500 randomized generations)", budget_s=30.0):
        for attempted, limit, stdout, solution, sandbox in run_virtual(batch()):
            executed = len(sandbox.calls)
            assert executed <= limit, "execution count exceeded the configured limit"
            assert executed == min(attempted, limit)
            assert solution.limit_violation == (attempted > limit)
            shown = stdout[:200]
            expected_body = shown if shown else "[No output]"
            bodies = OUTPUT_SECTION_RE.findall(solution.reasoning_text)
            assert len(bodies) == executed
            for execution, body in zip(solution.code_trace, bodies):
                assert execution.stdout_truncated == shown
                assert len(execution.stdout_truncated) <= 200
                assert body == expected_body, "transcript must carry exactly the first 200 chars"
            warnings = [int(m.group(1)) for m in WARNING_RE.finditer(solution.reasoning_text)]
            assert warnings == sorted(warnings, reverse=True)
            assert len(set(warnings)) == len(warnings), "warnings must strictly decrease"
            assert warnings == [limit - i for i in range(1, executed + 1)]


def test_criterion_metric_oracles():
    """maj@k / pass@k / pass@1 equal brute-force recomputation on 1,000
    random fixtures, exact rational arithmetic, dominance everywhere."""
    rng = random.Random(555)
    with criterion("Metric oracle equivalence (1,000 fixtures, exact)", budget_s=10.0):
        for _ in range(1000):
            fixture = make_fixture(rng)
            results = [r for r, _ in fixture]
            k = min(len(r.judgments) for r in results)
            got_maj = maj_at_k(results, k)
            got_pass = pass_at_k(results, k)
            got_p1 = pass_at_1_avg(results, k)
            assert got_maj == brute_maj_at_k(results, k)
            assert got_pass == Fraction(
                sum(1 for r in results if any(j.correct for j in r.judgments[:k])),
                len(results),
            )
            assert got_p1 == sum(
                Fraction(sum(1 for j in r.judgments[:k] if j.correct), k) for r in results
            ) / len(results)
            assert 0 <= got_maj <= got_pass <= 1


def test_criterion_genselect_sampler():
    """10,000 random pools/seeds: every group valid and distinct; the
    training filter keeps exactly correct choices; 565/1000 fixture ratio
    is exact."""
    rng = random.Random(31337)
    with criterion("GenSelect sampler (10,000 pools) and training filter", budget_s=20.0):
        for _ in range(10_000):
            n_correct = rng.randint(1, 10)
            n_incorrect = rng.randint(1, 10)
            pool = make_pool(n_correct, n_incorrect)
            groups = sample_training_groups(
                pool, GenSelectConfig(), random.Random(rng.randint(0, 1 << 30))
            )
            seen = set()
            for group in groups:
                assert 2 <= len(group) <= 16
                flags = {pool[i][1] for i in group}
                assert flags == {True, False}
                key = frozenset(group)
                assert key not in seen
                seen.add(key)

        records = []
        for i in range(1000):
            chosen_correct = i < 565
            cands = (
                CandidateSummary("a", "text a", "1", correct=chosen_correct),
                CandidateSummary("b", "text b", "2", correct=not chosen_correct),
            )
            records.append(
                SelectionRecord(problem_id=f"p{i}", candidate_summaries=cands, chosen_index=0)
            )
        retained = filter_training_records(records)
        assert all(r.candidate_summaries[r.chosen_index].correct for r in retained)
        assert Fraction(len(retained), len(records)) == Fraction(565, 1000)


def test_criterion_summary_regeneration_truth_table():
    """Longest-valid selection and all-invalid discard over the exhaustive
    16-case 4-candidate validity table."""
    from tirkit.genselect import regenerate_summary

    from .conftest import make_solution
    from .test_genselect import variant_backend, words

    with criterion("Summary regeneration (16-case validity truth table)"):
        for pattern in itertools.product([True, False], repeat=4):
            texts = []
            for i, valid in enumerate(pattern):
                body = words(i + 1, f"c{i}w")
                texts.append(f"{body} \\boxed{{7}}" if valid else f"{body} \\boxed{{0}}")
            backend = variant_backend(*texts)
            out = run_virtual(
                regenerate_summary(
                    make_solution(answer="7"),
                    backend,
                    GenSelectConfig(),
                    problem=make_problem(),
                )
            )
            valid_indices = [i for i, v in enumerate(pattern) if v]
            if not valid_indices:
                assert out is None
            else:
                assert out == texts[max(valid_indices)]


def test_criterion_scheduler_simulation():
    """Virtual-clock scheduler: 17,500s over 50 all-350s questions,
    allocations {350, 450, 560}, early stop iff the first t agree, zero
    live sessions after every scenario."""
    with criterion("Scheduler simulation under virtual clock", budget_s=5.0):
        # 50 questions, each consuming its full 350s base window
        problems = [make_problem(pid=f"q{i:02d}", answer=str(i)) for i in range(50)]
        scenario = {
            p.id: [gen("x", 900_000.0, partial_answer=str(i))]
            for i, p in enumerate(problems)
        }
        policy = BatchPolicy(batch_size=1, agreement_threshold=1)
        result = run_virtual(
            run_competition(
                problems, TimeLedger(), policy, lambda p: dispatch(scenario[p.id])
            )
        )
        assert result.ledger.used_total_s == 17_500.0
        assert all(row.used_s == 350.0 for row in result.audit)
        assert all(row.buffer_after_s == 0.0 for row in result.audit)
        assert [a for _, a in result.answers] == [str(i) for i in range(50)]

        # buffer-draw allocations hit exactly 350 / 450 / 560
        problems3 = [make_problem(pid=f"b{i}", answer=None) for i in range(3)]
        scenario3 = {"b0": [gen("a", 250.0)], "b1": [gen("b", 100.0)], "b2": [gen("c", 1.0)]}
        result3 = run_virtual(
            run_competition(
                problems3, TimeLedger(), policy, lambda p: dispatch(scenario3[p.id])
            )
        )
        assert [row.allocated_s for row in result3.audit] == [350.0, 450.0, 560.0]

        # early stop fires exactly when the first t completions agree
        agree = [gen("17", 1.0 + i) for i in range(4)] + [
            gen("99", 500.0, partial_answer=None) for _ in range(4)
        ]
        outcome = run_virtual(
            solve_question(
                make_problem(),
                BatchPolicy(batch_size=8, agreement_threshold=4),
                600.0,
                dispatch(agree),
            )
        )
        assert outcome.early_stopped and outcome.answer == "17"

        disagree = [gen("17", 1.0), gen("5", 2.0)] + [gen("17", 3.0 + i) for i in range(6)]
        outcome2 = run_virtual(
            solve_question(
                make_problem(),
                BatchPolicy(batch_size=8, agreement_threshold=4),
                600.0,
                dispatch(disagree),
            )
        )
        assert not outcome2.early_stopped  # first 4 included a "5"

        # engine-backed batch drains its session registry in every scenario
        registry = SessionRegistry()
        variants = [[Segment("answer \\boxed{7}", (i + 1) * 1000)] for i in range(3)]
        variants.append([Segment("slowpoke", 900_000)])
        backend = scripted(behavior(None, variants=variants))
        sandbox = MockSandbox(rules=[ExecRule(pattern=".", stdout="ok")])
        engine = TirEngine(backend, sandbox, TirConfig(), registry=registry)

        async def engine_gen(index, token):
            return await engine.run(make_problem(pid="live", answer=None), cancel_token=token)

        outcome3 = run_virtual(
            solve_question(
                make_problem(),
                BatchPolicy(batch_size=4, agreement_threshold=3),
                60.0,
                engine_gen,
            )
        )
        assert outcome3.early_stopped and outcome3.answer == "7"
        assert registry.live_count == 0
        assert sandbox.live_sessions == set()


def test_criterion_stage0_filter_truth_table():
    """Exhaustive 42-case agreement with the stage-0 keep rule, including
    the more-than-two-blocks drop."""
    from tirkit.curation import filter_tir_stage0

    from .test_curation import A, LABELS, stage0_reference, tir_solution

    with criterion("Stage-0 TIR filter (42-case truth table)"):
        cases = [[l] for l in LABELS] + [
            list(pair) for pair in itertools.product(LABELS, repeat=2)
        ]
        assert len(cases) == 42
        for labels in cases:
            keep, _ = filter_tir_stage0(
                tir_solution(len(labels)), [A(*l) for l in labels]
            )
            assert keep == stage0_reference(True, labels), labels
        keep, reason = filter_tir_stage0(
            tir_solution(3), [A("novel", "significant")] * 3
        )
        assert not keep and reason == "too_many_blocks"


def test_criterion_end_to_end(tmp_path):
    """Scripted 10-problem run: solve n=8 -> evaluate -> genselect-infer
    reproduces the hand-computed report exactly and is byte-stable."""
    from tirkit.cli import main

    with criterion("End-to-end scripted run (solve -> evaluate -> genselect-infer)"):
        paths = write_e2e_fixture(tmp_path)
        artifacts: list[tuple[bytes, bytes, bytes]] = []
        for run_index in (1, 2):
            run_dir = tmp_path / f"run{run_index}"
            run_dir.mkdir()
            solutions = run_dir / "solutions.jsonl"
            report = run_dir / "report.json"
            selected = run_dir / "selected.jsonl"
            assert main([
                "--config", str(paths["config"]),
                "solve", "--problems", str(paths["problems"]),
                "--mode", "cot", "--n", "8", "--out", str(solutions),
            ]) == 0
            assert main([
                "evaluate", "--solutions", str(solutions),
                "--problems", str(paths["problems"]), "--k", "8", "--out", str(report),
            ]) == 0
            assert main([
                "--config", str(paths["config"]),
                "genselect-infer", "--problems", str(paths["problems"]),
                "--solutions", str(solutions), "--out", str(selected),
            ]) == 0
            artifacts.append(
                (solutions.read_bytes(), report.read_bytes(), selected.read_bytes())
            )

        assert artifacts[0] == artifacts[1], "seeded reruns must be byte-identical"
        report_data = json.loads(artifacts[0][1])
        row = report_data["rows"][0]
        assert Fraction(row["pass_at_1"]["exact"]) == HAND_COMPUTED["pass_at_1"]
        assert Fraction(row["maj_at_k"]["exact"]) == HAND_COMPUTED["maj_at_k"]
        assert Fraction(row["pass_at_k"]["exact"]) == HAND_COMPUTED["pass_at_k"]
        assert Fraction(row["unfinished_pct"]["exact"]) == HAND_COMPUTED["unfinished"] * 100


def test_criterion_primary_suite_needs_no_secondary():
    """The whole primary suite runs with the in-process sandbox mock; no
    HTTP sandbox service is imported anywhere in the primary tests."""
    with criterion("Primary suite independent of the secondary component"):
        import tirkit.sandbox as sandbox_module

        # the HTTP client class exists but nothing in this suite instantiated
        # a connection; the mock covers every execution path
        mock = MockSandbox(rules=[ExecRule(pattern=".", stdout="4\n")])

        async def probe():
            from tirkit.sandbox import ExecuteRequest

            return await mock.execute(ExecuteRequest("s", "print(2+2)", 2000))

        response = run_virtual(probe())
        assert response.stdout == "4\n"
        assert hasattr(sandbox_module, "HttpSandboxClient")
